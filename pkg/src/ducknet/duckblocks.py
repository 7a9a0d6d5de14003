"""Block specifications, their receptive fields, and execution on the tensor engine.

A :class:`BlockSpec` is a declarative description of a convolution chain.  The
same spec drives three things: parameter allocation (:func:`init_block_params`),
execution (:func:`run_block`) and static analysis (:func:`receptive_field`,
:func:`parameter_count`).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .tensorcore import (
    BatchNormState,
    Mode,
    ShapeError,
    Tensor4,
    add,
    batchnorm,
    conv2d,
    init_weights,
    relu,
)

DEFAULT_SEPARATED_N = 13


class BlockKind(str, enum.Enum):
    RESIDUAL = "residual"
    MIDSCOPE = "midscope"
    WIDESCOPE = "widescope"
    SEPARATED = "separated"
    DUCK = "duck"
    SIMPLE_DOUBLE = "simple_double"


@dataclass(frozen=True)
class ConvLayer:
    kernel: tuple[int, int]
    dilation: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)


@dataclass(frozen=True)
class BlockSpec:
    kind: BlockKind
    filters: int
    layers: tuple[ConvLayer, ...] = ()
    repeat: int = 1
    separated_n: int | None = None
    branches: tuple["BlockSpec", ...] = field(default=())

    def __post_init__(self):
        if self.filters < 1:
            raise ValueError(f"filters must be >= 1, got {self.filters}")
        if self.repeat < 1:
            raise ValueError(f"repeat must be >= 1, got {self.repeat}")
        for layer in self.layers:
            if layer.stride != (1, 1):
                raise ValueError("block layers must have stride 1; downsampling belongs to the network")


def _conv3(d: int = 1) -> ConvLayer:
    return ConvLayer((3, 3), (d, d))


def build_residual(filters: int, repeat: int = 1) -> BlockSpec:
    return BlockSpec(BlockKind.RESIDUAL, filters, (_conv3(), _conv3()), repeat=repeat)


def build_midscope(filters: int) -> BlockSpec:
    return BlockSpec(BlockKind.MIDSCOPE, filters, (_conv3(1), _conv3(2)))


def build_widescope(filters: int, dilations: tuple[int, ...] = (1, 2, 4)) -> BlockSpec:
    return BlockSpec(BlockKind.WIDESCOPE, filters, tuple(_conv3(d) for d in dilations))


def build_separated(filters: int, n: int = DEFAULT_SEPARATED_N) -> BlockSpec:
    if n < 3 or n % 2 == 0:
        raise ValueError(f"separated kernel length must be odd and >= 3, got {n}")
    return BlockSpec(BlockKind.SEPARATED, filters,
                     (ConvLayer((1, n)), ConvLayer((n, 1))), separated_n=n)


def build_duck(filters: int, separated_n: int = DEFAULT_SEPARATED_N) -> BlockSpec:
    branches = (
        build_widescope(filters),
        build_midscope(filters),
        build_residual(filters, 1),
        build_residual(filters, 2),
        build_residual(filters, 3),
        build_separated(filters, separated_n),
    )
    return BlockSpec(BlockKind.DUCK, filters, separated_n=separated_n, branches=branches)


def build_simple_double(filters: int) -> BlockSpec:
    return BlockSpec(BlockKind.SIMPLE_DOUBLE, filters, (_conv3(), _conv3()))


def receptive_field(spec: BlockSpec) -> tuple[int, int]:
    """Per-axis extent of input pixels that can influence one output pixel."""
    if spec.branches:
        rfs = [receptive_field(b) for b in spec.branches]
        return max(r[0] for r in rfs), max(r[1] for r in rfs)
    grow_h = sum((layer.kernel[0] - 1) * layer.dilation[0] for layer in spec.layers)
    grow_w = sum((layer.kernel[1] - 1) * layer.dilation[1] for layer in spec.layers)
    return 1 + spec.repeat * grow_h, 1 + spec.repeat * grow_w


def format_block(spec: BlockSpec, indent: str = "") -> str:
    """Human-readable dump, one layer per line."""
    head = f"{indent}{spec.kind.value} F={spec.filters}"
    if spec.repeat > 1:
        head += f" x{spec.repeat}"
    if spec.separated_n is not None and spec.kind is BlockKind.SEPARATED:
        head += f" N={spec.separated_n}"
    lines = [head]
    if spec.kind is BlockKind.DUCK:
        lines.append(f"{indent}  batchnorm (input)")
    for layer in spec.layers:
        lines.append(f"{indent}  conv {layer.kernel[0]}x{layer.kernel[1]} "
                     f"dilation {layer.dilation[0]}x{layer.dilation[1]} relu")
    if spec.kind is BlockKind.RESIDUAL:
        lines.append(f"{indent}  shortcut conv 1x1 (linear), add")
    for b in spec.branches:
        lines.append(format_block(b, indent + "  "))
    if spec.branches:
        lines.append(f"{indent}  sum of {len(spec.branches)} branches")
    lines.append(f"{indent}  batchnorm")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# parameters


class ParamStore:
    """Named trainable tensors plus batch-norm states, in creation order."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor4] = {}
        self.norms: dict[str, BatchNormState] = {}

    def add_conv(self, name: str, shape: tuple[int, int, int, int], rng: np.random.Generator):
        if f"{name}.w" in self.params:
            raise KeyError(f"duplicate parameter {name}")
        self.params[f"{name}.w"] = Tensor4(init_weights(shape, rng, self.dtype),
                                           requires_grad=True, name=f"{name}.w")
        self.params[f"{name}.b"] = Tensor4(np.zeros(shape[0], self.dtype),
                                           requires_grad=True, name=f"{name}.b")

    def add_norm(self, name: str, channels: int):
        s = BatchNormState.create(channels, self.dtype, name=name)
        self.norms[name] = s
        self.params[f"{name}.gamma"] = s.gamma
        self.params[f"{name}.beta"] = s.beta

    def conv(self, name: str) -> tuple[Tensor4, Tensor4]:
        try:
            return self.params[f"{name}.w"], self.params[f"{name}.b"]
        except KeyError:
            raise ShapeError(f"missing convolution parameters {name!r}") from None

    def norm(self, name: str) -> BatchNormState:
        try:
            return self.norms[name]
        except KeyError:
            raise ShapeError(f"missing batch-norm state {name!r}") from None

    def trainable(self) -> list[Tensor4]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Every stored array (parameters, then running statistics), in a stable order."""
        out = [(k, t.data) for k, t in self.params.items()]
        for k, s in self.norms.items():
            out.append((f"{k}.running_mean", s.running_mean))
            out.append((f"{k}.running_var", s.running_var))
        return out

    def count(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))


def _branch_names(spec: BlockSpec) -> list[str]:
    names = []
    for b in spec.branches:
        if b.kind is BlockKind.RESIDUAL:
            names.append(f"residual{b.repeat}")
        else:
            names.append(b.kind.value)
    return names


def init_block_params(spec: BlockSpec, in_channels: int, store: ParamStore, prefix: str,
                      rng: np.random.Generator) -> None:
    f = spec.filters
    if spec.kind is BlockKind.DUCK:
        store.add_norm(f"{prefix}.bn_in", in_channels)
        for name, branch in zip(_branch_names(spec), spec.branches):
            init_block_params(branch, in_channels, store, f"{prefix}.{name}", rng)
        store.add_norm(f"{prefix}.bn_out", f)
        return
    if spec.kind is BlockKind.RESIDUAL:
        cin = in_channels
        for r in range(spec.repeat):
            unit = f"{prefix}.unit{r}"
            for j, layer in enumerate(spec.layers):
                store.add_conv(f"{unit}.conv{j}", (f, cin if j == 0 else f, *layer.kernel), rng)
            store.add_conv(f"{unit}.shortcut", (f, cin, 1, 1), rng)
            store.add_norm(f"{unit}.bn", f)
            cin = f
        return
    cin = in_channels
    for j, layer in enumerate(spec.layers):
        store.add_conv(f"{prefix}.conv{j}", (f, cin, *layer.kernel), rng)
        cin = f
    store.add_norm(f"{prefix}.bn", f)


def conv_parameter_count(spec: BlockSpec, in_channels: int) -> int:
    """Kernel and bias scalars only (normalisation parameters excluded)."""
    f = spec.filters
    if spec.branches:
        return sum(conv_parameter_count(b, in_channels) for b in spec.branches)
    total = 0
    cin = in_channels
    for _ in range(spec.repeat):
        c = cin
        for layer in spec.layers:
            total += f * (c * layer.kernel[0] * layer.kernel[1] + 1)
            c = f
        if spec.kind is BlockKind.RESIDUAL:
            total += f * (cin + 1)
        cin = f
    return total


def parameter_count(spec: BlockSpec, in_channels: int) -> int:
    """All trainable scalars, batch-norm scale and shift included."""
    f = spec.filters
    if spec.kind is BlockKind.DUCK:
        return (2 * in_channels + 2 * f
                + sum(parameter_count(b, in_channels) for b in spec.branches))
    norms = spec.repeat if spec.kind is BlockKind.RESIDUAL else 1
    return conv_parameter_count(spec, in_channels) + 2 * f * norms


def _chain(spec: BlockSpec, store: ParamStore, prefix: str, x: Tensor4, mode: Mode) -> Tensor4:
    for j, layer in enumerate(spec.layers):
        w, b = store.conv(f"{prefix}.conv{j}")
        x = relu(conv2d(x, w, b, 1, layer.dilation, "same"))
    return x


def run_block(spec: BlockSpec, store: ParamStore, x: Tensor4, mode: Mode | str = Mode.TRAIN,
              prefix: str = "block") -> Tensor4:
    mode = Mode(mode)
    if spec.kind is BlockKind.DUCK:
        h = batchnorm(x, store.norm(f"{prefix}.bn_in"), mode)
        total = None
        # fixed branch order keeps the sum bit-reproducible
        for name, branch in zip(_branch_names(spec), spec.branches):
            y = run_block(branch, store, h, mode, f"{prefix}.{name}")
            total = y if total is None else add(total, y)
        return batchnorm(total, store.norm(f"{prefix}.bn_out"), mode)
    if spec.kind is BlockKind.RESIDUAL:
        for r in range(spec.repeat):
            unit = f"{prefix}.unit{r}"
            main = _chain(spec, store, unit, x, mode)
            ws, bs = store.conv(f"{unit}.shortcut")
            short = conv2d(x, ws, bs, 1, 1, "same")
            x = batchnorm(add(main, short), store.norm(f"{unit}.bn"), mode)
        return x
    y = _chain(spec, store, prefix, x, mode)
    return batchnorm(y, store.norm(f"{prefix}.bn"), mode)
