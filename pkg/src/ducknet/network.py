"""The full encoder-decoder: DUCK stages, a secondary unprocessed downscaling path
fused by addition, a four-residual-block bottleneck, and a sigmoid head.

Checkpoint files::

    DUCKNET-CKPT 1
    spec filters=8 depth=5 block=duck input=64x64 separated_n=13
    <name> <shape, comma separated> <byte offset>
    ...
    <blank line>
    <little-endian float32 payload>
"""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .duckblocks import (
    DEFAULT_SEPARATED_N,
    BlockSpec,
    ParamStore,
    build_duck,
    build_residual,
    build_simple_double,
    init_block_params,
    run_block,
)
from .duckblocks import parameter_count as block_parameter_count
from .tensorcore import Mode, ShapeError, Tensor4, add, conv2d, sigmoid, upsample_nearest_2x
from .util import atomic_write

CKPT_MAGIC = "DUCKNET-CKPT 1"


class BlockChoice(str, enum.Enum):
    DUCK = "duck"
    SIMPLE = "simple"


@dataclass(frozen=True)
class NetSpec:
    filters: int = 17
    depth: int = 5
    input_channels: int = 3
    input_size: tuple[int, int] = (352, 352)
    block_kind: BlockChoice = BlockChoice.DUCK
    separated_n: int = DEFAULT_SEPARATED_N

    def __post_init__(self):
        object.__setattr__(self, "block_kind", BlockChoice(self.block_kind))
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        if self.filters < 1 or self.depth < 1 or self.input_channels < 1:
            raise ValueError(f"filters, depth and input_channels must be positive: {self}")
        self.check_input_size(*self.input_size)

    def check_input_size(self, h: int, w: int) -> None:
        m = 2 ** self.depth
        if h % m or w % m or h < m or w < m:
            raise ShapeError(f"input size {h}x{w} must be a positive multiple of {m} (2^{self.depth})")

    def channels(self, level: int) -> int:
        return self.filters * 2 ** level

    def block(self, filters: int) -> BlockSpec:
        if self.block_kind is BlockChoice.DUCK:
            return build_duck(filters, self.separated_n)
        return build_simple_double(filters)

    def header(self) -> str:
        h, w = self.input_size
        return (f"spec filters={self.filters} depth={self.depth} block={self.block_kind.value} "
                f"input={h}x{w} separated_n={self.separated_n} channels={self.input_channels}")

    @classmethod
    def from_header(cls, line: str) -> "NetSpec":
        parts = line.split()
        if not parts or parts[0] != "spec":
            raise ValueError(f"malformed spec line: {line!r}")
        kv = dict(p.split("=", 1) for p in parts[1:])
        h, w = kv["input"].split("x")
        return cls(filters=int(kv["filters"]), depth=int(kv["depth"]),
                   input_channels=int(kv.get("channels", 3)), input_size=(int(h), int(w)),
                   block_kind=kv["block"], separated_n=int(kv["separated_n"]))


def _decoder_filters(spec: NetSpec, level: int) -> int:
    return spec.channels(max(level - 1, 0))


@dataclass
class ShapeTrace:
    """Static walk of the graph: per-node shapes and every fused (added) pair."""

    nodes: dict[str, tuple[int, int, int]] = field(default_factory=dict)
    fusions: list[tuple[str, str]] = field(default_factory=list)

    def fuse(self, a: str, b: str) -> None:
        if self.nodes[a] != self.nodes[b]:
            raise ShapeError(f"fusion {a}{self.nodes[a]} + {b}{self.nodes[b]} has unequal shapes")
        self.fusions.append((a, b))


def trace_shapes(spec: NetSpec, h: int | None = None, w: int | None = None) -> ShapeTrace:
    h, w = (h, w) if h is not None else spec.input_size
    spec.check_input_size(h, w)
    t = ShapeTrace()
    t.nodes["input"] = (spec.input_channels, h, w)
    t.nodes["t0"] = (spec.filters, h, w)
    for i in range(1, spec.depth + 1):
        size = (spec.channels(i), h >> i, w >> i)
        t.nodes[f"p{i}"] = size
        t.nodes[f"down{i}"] = size
        t.nodes[f"s{i}"] = size
        t.fuse(f"down{i}", f"p{i}")
        if i < spec.depth:
            t.nodes[f"t{i}"] = size
    d = spec.depth
    t.nodes["bottleneck"] = (spec.channels(d - 1), h >> d, w >> d)
    prev = "bottleneck"
    for i in range(d - 1, -1, -1):
        c = t.nodes[prev][0]
        t.nodes[f"up{i}"] = (c, h >> i, w >> i)
        t.fuse(f"up{i}", f"t{i}")
        t.nodes[f"dec{i}"] = (_decoder_filters(spec, i), h >> i, w >> i)
        prev = f"dec{i}"
    t.nodes["output"] = (1, h, w)
    return t


class Network:
    """Parameters plus the executable graph for one :class:`NetSpec`."""

    def __init__(self, spec: NetSpec, store: ParamStore):
        self.spec = spec
        self.store = store
        self.trace = trace_shapes(spec)

    @property
    def bottleneck_shape(self) -> tuple[int, int, int]:
        return self.trace.nodes["bottleneck"]

    def parameter_count(self) -> int:
        return self.store.count()

    def forward(self, images: Tensor4, mode: Mode | str = Mode.INFER) -> Tensor4:
        spec = self.spec
        mode = Mode(mode)
        if images.data.ndim != 4 or images.shape[1] != spec.input_channels:
            raise ShapeError(f"images must be (n, {spec.input_channels}, h, w), got {images.shape}")
        spec.check_input_size(images.shape[2], images.shape[3])
        st = self.store
        skips = [run_block(spec.block(spec.filters), st, images, mode, "enc0")]
        p = images
        s = None
        for i in range(1, spec.depth + 1):
            w, b = st.conv(f"side{i}")
            p = conv2d(p, w, b, 2, 1, "none")
            w, b = st.conv(f"down{i}")
            s = add(conv2d(skips[-1], w, b, 2, 1, "none"), p)
            if i < spec.depth:
                skips.append(run_block(spec.block(spec.channels(i)), st, s, mode, f"enc{i}"))
        x = s
        for r, f in enumerate(_bottleneck_plan(spec)):
            x = run_block(build_residual(f), st, x, mode, f"bottleneck{r}")
        for i in range(spec.depth - 1, -1, -1):
            x = add(upsample_nearest_2x(x), skips[i])
            x = run_block(spec.block(_decoder_filters(spec, i)), st, x, mode, f"dec{i}")
        w, b = st.conv("head")
        return sigmoid(conv2d(x, w, b, 1, 1, "same"))

    __call__ = forward

    def manifest(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(k, a.shape) for k, a in self.store.named_arrays()]


def build_network(spec: NetSpec, seed: int = 0, dtype=np.float32) -> Network:
    rng = np.random.default_rng(seed)
    st = ParamStore(dtype)
    f = spec.filters
    init_block_params(spec.block(f), spec.input_channels, st, "enc0", rng)
    prev_side = spec.input_channels
    for i in range(1, spec.depth + 1):
        c = spec.channels(i)
        st.add_conv(f"side{i}", (c, prev_side, 2, 2), rng)
        st.add_conv(f"down{i}", (c, spec.channels(i - 1), 2, 2), rng)
        prev_side = c
        if i < spec.depth:
            init_block_params(spec.block(c), c, st, f"enc{i}", rng)
    cin = spec.channels(spec.depth)
    for r, fb in enumerate(_bottleneck_plan(spec)):
        init_block_params(build_residual(fb), cin, st, f"bottleneck{r}", rng)
        cin = fb
    for i in range(spec.depth - 1, -1, -1):
        fd = _decoder_filters(spec, i)
        init_block_params(spec.block(fd), cin, st, f"dec{i}", rng)
        cin = fd
    st.add_conv("head", (1, cin, 1, 1), rng)
    return Network(spec, st)


def count_parameters(spec: NetSpec) -> int:
    """Trainable scalars of ``build_network(spec)`` without allocating them."""
    conv = lambda cin, cout, k: cout * (cin * k * k + 1)
    total = block_parameter_count(spec.block(spec.filters), spec.input_channels)
    prev_side = spec.input_channels
    for i in range(1, spec.depth + 1):
        c = spec.channels(i)
        total += conv(prev_side, c, 2) + conv(spec.channels(i - 1), c, 2)
        prev_side = c
        if i < spec.depth:
            total += block_parameter_count(spec.block(c), c)
    cin = spec.channels(spec.depth)
    for fb in _bottleneck_plan(spec):
        total += block_parameter_count(build_residual(fb), cin)
        cin = fb
    for i in range(spec.depth - 1, -1, -1):
        fd = _decoder_filters(spec, i)
        total += block_parameter_count(spec.block(fd), cin)
        cin = fd
    return total + conv(cin, 1, 1)


def _bottleneck_plan(spec: NetSpec) -> list[int]:
    d = spec.depth
    return [spec.channels(d)] * 2 + [spec.channels(d - 1)] * 2


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(ValueError):
    """Malformed checkpoint, or one that does not fit the requested spec."""


def checkpoint_bytes(net: Network, extra: list[tuple[str, np.ndarray]] | None = None) -> bytes:
    entries = net.store.named_arrays() + list(extra or [])
    head = io.StringIO()
    head.write(CKPT_MAGIC + "\n")
    head.write(net.spec.header() + "\n")
    offset = 0
    for name, arr in entries:
        shape = ",".join(str(s) for s in arr.shape) or "scalar"
        head.write(f"{name} {shape} {offset}\n")
        offset += arr.size * 4
    head.write("\n")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in entries)
    return head.getvalue().encode("utf-8") + payload


def save_checkpoint(net: Network, path, extra=None) -> None:
    atomic_write(path, checkpoint_bytes(net, extra))


@dataclass
class CheckpointData:
    spec: NetSpec
    entries: list[tuple[str, tuple[int, ...], np.ndarray]]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: arr for name, _, arr in self.entries}


def parse_checkpoint(blob: bytes) -> CheckpointData:
    sep = blob.find(b"\n\n")
    if sep < 0:
        raise CheckpointError("checkpoint has no manifest terminator (blank line)")
    lines = blob[:sep].decode("utf-8").split("\n")
    payload = blob[sep + 2:]
    if lines[0] != CKPT_MAGIC:
        raise CheckpointError(f"bad magic line {lines[0]!r}")
    try:
        spec = NetSpec.from_header(lines[1])
    except (ValueError, KeyError, IndexError) as exc:
        raise CheckpointError(f"bad spec line: {exc}") from None
    entries = []
    expected_offset = 0
    for line in lines[2:]:
        try:
            name, shape_s, off_s = line.split(" ")
            shape = () if shape_s == "scalar" else tuple(int(v) for v in shape_s.split(","))
            off = int(off_s)
        except ValueError:
            raise CheckpointError(f"malformed manifest line {line!r}") from None
        if off != expected_offset:
            raise CheckpointError(f"{name}: offset {off} != expected {expected_offset}")
        size = int(np.prod(shape, dtype=np.int64))
        end = off + 4 * size
        if end > len(payload):
            raise CheckpointError(f"truncated payload: {name} needs bytes up to {end}, "
                                  f"payload has {len(payload)}")
        arr = np.frombuffer(payload, dtype="<f4", count=size, offset=off).reshape(shape)
        entries.append((name, shape, arr.astype(np.float32)))
        expected_offset = end
    if expected_offset != len(payload):
        raise CheckpointError(f"payload has {len(payload) - expected_offset} trailing bytes")
    return CheckpointData(spec, entries)


def load_into(net: Network, data: CheckpointData) -> list[tuple[str, np.ndarray]]:
    """Copy checkpoint arrays into ``net``; returns entries not owned by the network."""
    own = net.store.named_arrays()
    for k, (name, arr) in enumerate(own):
        if k >= len(data.entries):
            raise CheckpointError(f"checkpoint ends before entry {k} ({name} {arr.shape})")
        cname, cshape, carr = data.entries[k]
        if cname != name or tuple(cshape) != arr.shape:
            raise CheckpointError(f"first mismatch at entry {k}: checkpoint has {cname} {cshape}, "
                                  f"network expects {name} {arr.shape}")
    for (name, arr), (_, _, carr) in zip(own, data.entries):
        arr[...] = carr
    return [(n, a) for n, _, a in data.entries[len(own):]]


def load_checkpoint(path, spec: NetSpec | None = None) -> Network:
    """Rebuild a network from ``path``; if ``spec`` is given the file must match it."""
    data = parse_checkpoint(Path(path).read_bytes())
    target = spec or data.spec
    net = build_network(target, seed=0)
    load_into(net, data)
    return net
