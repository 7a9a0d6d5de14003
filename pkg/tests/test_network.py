import time

import numpy as np
import pytest

from ducknet.network import (
    CheckpointError,
    NetSpec,
    build_network,
    checkpoint_bytes,
    count_parameters,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
    trace_shapes,
)
from ducknet.tensorcore import Mode, ShapeError, Tensor4
from oracles import network_count

# trainable-parameter totals, frozen from the independent counting oracle
COUNT_F17 = 40733503
COUNT_F34 = 162830325


@pytest.fixture(scope="module")
def small_net():
    return build_network(NetSpec(filters=2, depth=3, input_size=(32, 32)), seed=7)


def test_full_size_bottleneck_is_11x11():
    t0 = time.perf_counter()
    net = build_network(NetSpec(filters=17, input_size=(352, 352)), seed=0)
    assert time.perf_counter() - t0 < 5.0
    assert net.bottleneck_shape == (17 * 16, 11, 11)
    assert net.parameter_count() == COUNT_F17


def test_parameter_counts_frozen():
    assert network_count(17) == COUNT_F17
    assert network_count(34) == COUNT_F34
    assert count_parameters(NetSpec(filters=17)) == COUNT_F17
    assert count_parameters(NetSpec(filters=34)) == COUNT_F34
    assert 3.5 < COUNT_F34 / COUNT_F17 < 4.1


@pytest.mark.parametrize("block", ["duck", "simple"])
def test_count_matches_allocation(block):
    spec = NetSpec(filters=3, depth=3, input_size=(32, 32), block_kind=block)
    assert build_network(spec).parameter_count() == count_parameters(spec) == network_count(3, block, 3)


def test_forward_shape_and_range():
    net = build_network(NetSpec(filters=2, input_size=(64, 64)), seed=1)
    x = Tensor4(np.random.default_rng(0).random((1, 3, 64, 64)).astype(np.float32))
    for mode in (Mode.TRAIN, Mode.INFER):
        out = net.forward(x, mode).data
        assert out.shape == (1, 1, 64, 64)
        assert np.all((out > 0) & (out < 1))


def test_forward_deterministic(small_net, rng):
    x = Tensor4(rng.random((2, 3, 32, 32)).astype(np.float32))
    assert np.array_equal(small_net(x).data, small_net(x).data)


def test_other_sizes_divisible_by_32(small_net, rng):
    out = small_net(Tensor4(rng.random((1, 3, 64, 96)).astype(np.float32)))
    assert out.shape == (1, 1, 64, 96)


def test_bad_inputs_rejected(small_net):
    with pytest.raises(ShapeError):
        NetSpec(input_size=(100, 96))
    with pytest.raises(ShapeError):
        small_net(Tensor4(np.zeros((1, 3, 36, 32), np.float32)))
    with pytest.raises(ShapeError):
        small_net(Tensor4(np.zeros((1, 4, 32, 32), np.float32)))


def test_ablation_swap_keeps_every_shape():
    for size in [(64, 64), (352, 352), (96, 64)]:
        a = trace_shapes(NetSpec(filters=5, input_size=size, block_kind="duck"))
        b = trace_shapes(NetSpec(filters=5, input_size=size, block_kind="simple"))
        assert a.nodes == b.nodes


def test_trace_fusions_all_equal():
    tr = trace_shapes(NetSpec(filters=4, input_size=(64, 64)))
    assert tr.nodes["bottleneck"] == (64, 2, 2)
    assert tr.nodes["t0"] == (4, 64, 64) and tr.nodes["output"] == (1, 64, 64)
    for i in range(1, 6):
        # both fusion operands of s_i agree
        assert tr.nodes[f"p{i}"] == tr.nodes[f"down{i}"] == tr.nodes[f"s{i}"]
        assert tr.nodes[f"s{i}"][0] == 4 * 2 ** i
    for i in range(5):
        assert tr.nodes[f"up{i}"][0] == tr.nodes[f"t{i}"][0]


def test_checkpoint_round_trip(tmp_path, small_net, rng):
    x = Tensor4(rng.random((1, 3, 32, 32)).astype(np.float32))
    # give the running statistics non-default values
    small_net(x, Mode.TRAIN)
    before = small_net(x, Mode.INFER).data
    path = tmp_path / "m.ckpt"
    save_checkpoint(small_net, path)
    again = load_checkpoint(path)
    assert np.array_equal(again(x, Mode.INFER).data, before)
    assert checkpoint_bytes(again) == path.read_bytes()
    assert [n for n, _ in again.manifest()] == [n for n, _ in small_net.manifest()]


def test_checkpoint_layout(small_net):
    blob = checkpoint_bytes(small_net)
    head, payload = blob.split(b"\n\n", 1)
    lines = head.decode().split("\n")
    assert lines[0] == "DUCKNET-CKPT 1"
    assert lines[1].startswith("spec filters=2 depth=3 block=duck input=32x32")
    n = sum(int(np.prod(s)) for _, s in small_net.manifest())
    assert len(payload) == 4 * n
    name, shape, off = lines[2].split(" ")
    first = np.frombuffer(payload[:4 * int(np.prod([int(v) for v in shape.split(",")]))], "<f4")
    assert int(off) == 0 and np.array_equal(first, small_net.store.named_arrays()[0][1].ravel())


def test_checkpoint_truncated_and_trailing(small_net):
    blob = checkpoint_bytes(small_net)
    with pytest.raises(CheckpointError, match="truncated"):
        parse_checkpoint(blob[:-4])
    with pytest.raises(CheckpointError, match="trailing"):
        parse_checkpoint(blob + b"\0\0\0\0")
    with pytest.raises(CheckpointError, match="magic"):
        parse_checkpoint(b"NOPE\n" + blob.split(b"\n", 1)[1])


def test_checkpoint_spec_mismatch(tmp_path):
    small = build_network(NetSpec(filters=17, depth=2, input_size=(32, 32)))
    path = tmp_path / "f17.ckpt"
    save_checkpoint(small, path)
    with pytest.raises(CheckpointError, match="first mismatch at entry 2: checkpoint has enc0.widescope.conv0.w"):
        load_checkpoint(path, NetSpec(filters=34, depth=2, input_size=(32, 32)))


def test_checkpoint_extra_entries(tmp_path, small_net):
    extra = [("rmsprop.head.w", np.ones((1, 2, 1, 1), np.float32))]
    data = parse_checkpoint(checkpoint_bytes(small_net, extra))
    assert data.entries[-1][0] == "rmsprop.head.w"
    assert np.array_equal(data.entries[-1][2], extra[0][1])
