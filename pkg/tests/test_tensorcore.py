import numpy as np
import pytest

from ducknet.tensorcore import (
    BatchNormState,
    ConvParams,
    Mode,
    NumericalError,
    RmspropState,
    ShapeError,
    Tensor4,
    add,
    batchnorm,
    batchnorm_backward,
    batchnorm_forward,
    configure_threads,
    conv2d,
    conv2d_backward,
    conv2d_forward,
    conv_geometry,
    init_weights,
    relu,
    rmsprop_step,
    sigmoid,
    upsample_nearest_2x,
)
from ducknet.tensorcore.optim import fans
from ducknet.verify import gradcheck
from oracles import loop_conv2d


def _params(rng, cout, cin, kh, kw, dtype=np.float64, **kw_):
    return ConvParams(rng.standard_normal((cout, cin, kh, kw)).astype(dtype),
                      rng.standard_normal(cout).astype(dtype), **kw_)


# ---------------------------------------------------------------------------
# convolution


def test_conv_ones_example():
    # frozen from the scalar-loop oracle
    x = np.ones((1, 1, 3, 3))
    p = ConvParams(np.ones((1, 1, 3, 3)), np.zeros(1))
    out = conv2d_forward(x, p)
    assert np.array_equal(out[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])
    assert np.array_equal(out, loop_conv2d(x, p.kernel, p.bias, pad=(1, 1, 1, 1)))


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 1, 5, 7)).astype(np.float32)
    p = ConvParams(np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32))
    assert np.array_equal(conv2d_forward(x, p), x)


def test_conv_stride2_average_of_constant():
    x = np.full((1, 1, 4, 4), 0.7)
    p = ConvParams(np.full((1, 1, 2, 2), 0.25), np.zeros(1), stride=2, padding="none")
    out = conv2d_forward(x, p)
    assert out.shape == (1, 1, 2, 2)
    np.testing.assert_allclose(out, 0.7, rtol=1e-15)


@pytest.mark.parametrize("kh,kw", [(1, 1), (2, 2), (3, 3), (1, 13), (13, 1)])
@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("dilation", [1, 2, 4])
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_conv_matches_scalar_loop(kh, kw, stride, dilation, dtype):
    rng = np.random.default_rng(kh * 100 + kw * 10 + stride + dilation)
    eff_h, eff_w = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    padding = "same" if eff_h % 2 and eff_w % 2 else "none"
    h = max(eff_h, 5) + 3
    w = max(eff_w, 18) + 1  # wide enough for the row kernels when stride is 1
    x = rng.standard_normal((2, 3, h, w)).astype(dtype)
    p = _params(rng, 4, 3, kh, kw, dtype, stride=stride, dilation=dilation, padding=padding)
    g = conv_geometry(h, w, kh, kw, p)
    want = loop_conv2d(x, p.kernel, p.bias, p.stride, p.dilation,
                       (g.pad_top, g.pad_bottom, g.pad_left, g.pad_right))
    got = conv2d_forward(x, p)
    assert got.dtype == dtype
    assert np.array_equal(got, want)


def test_same_padding_preserves_shape(rng):
    for k, d in [(3, 1), (3, 2), (5, 3), (1, 7), (7, 1)]:
        x = rng.standard_normal((1, 2, 11, 9))
        out = conv2d_forward(x, _params(rng, 3, 2, k, k, dilation=d))
        assert out.shape == (1, 3, 11, 9)


def test_same_padding_extra_cell_goes_bottom_right():
    p = ConvParams(np.ones((1, 1, 3, 3)), np.zeros(1), stride=2)
    g = conv_geometry(6, 6, 3, 3, p)
    assert (g.out_h, g.pad_top, g.pad_bottom) == (3, 0, 1)


def test_none_padding_output_formula():
    p = ConvParams(np.ones((1, 1, 3, 2)), np.zeros(1), stride=(2, 3), dilation=(2, 1),
                   padding="none")
    g = conv_geometry(17, 11, 3, 2, p)
    assert g.out_h == (17 - 2 * 2 - 1) // 2 + 1
    assert g.out_w == (11 - 1 * 1 - 1) // 3 + 1


def test_conv_errors_name_axis(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    with pytest.raises(ShapeError, match="axis 1"):
        conv2d_forward(x, _params(rng, 1, 3, 3, 3))
    with pytest.raises(ShapeError, match="zero-extent"):
        conv2d_forward(x, _params(rng, 1, 2, 5, 5, padding="none"))
    with pytest.raises(ShapeError, match="odd effective kernel"):
        conv2d_forward(x, _params(rng, 1, 2, 2, 2))


def test_conv_backward_identity_and_bias():
    g = np.arange(12.0).reshape(1, 1, 3, 4)
    x = np.zeros((1, 1, 3, 4))
    p = ConvParams(np.ones((1, 1, 1, 1)), np.zeros(1))
    gi, _, gb = conv2d_backward(x, p, g)
    assert np.array_equal(gi, g)
    ones = np.ones((1, 2, 5, 6))
    _, _, gb = conv2d_backward(np.zeros((1, 3, 5, 6)),
                               ConvParams(np.ones((2, 3, 3, 3)), np.zeros(2)), ones)
    assert np.array_equal(gb, [30, 30])


def test_conv_backward_rejects_wrong_grad_shape(rng):
    p = _params(rng, 2, 1, 3, 3)
    with pytest.raises(ShapeError):
        conv2d_backward(np.zeros((1, 1, 4, 4)), p, np.zeros((1, 2, 3, 3)))


def test_conv_dilated_gradcheck(rng):
    x = Tensor4(rng.standard_normal((2, 4, 5, 5)), requires_grad=True, dtype=np.float64)
    w = Tensor4(rng.standard_normal((3, 4, 3, 3)), requires_grad=True, dtype=np.float64)
    b = Tensor4(rng.standard_normal(3), requires_grad=True, dtype=np.float64)
    r = gradcheck(lambda: conv2d(x, w, b, 1, 2, "same"), [x, w, b], max_coords=40)
    assert r.passed, r.where


def test_conv_linearity(rng):
    a, b = rng.standard_normal((2, 1, 2, 6, 20))
    p = _params(rng, 3, 2, 3, 3)
    p.bias[:] = 0
    lhs = conv2d_forward(a + b, p)
    np.testing.assert_allclose(lhs, conv2d_forward(a, p) + conv2d_forward(b, p), rtol=1e-12, atol=1e-12)


def test_conv_deterministic_across_thread_counts(rng):
    x = rng.standard_normal((2, 5, 20, 24)).astype(np.float32)
    p = _params(rng, 6, 5, 3, 3, np.float32, dilation=2)
    before = configure_threads()
    try:
        configure_threads(1)
        one = conv2d_forward(x, p)
        one_b = conv2d_backward(x, p, one)
        configure_threads(before)
        many = conv2d_forward(x, p)
        many_b = conv2d_backward(x, p, many)
    finally:
        configure_threads(before)
    assert np.array_equal(one, many)
    for u, v in zip(one_b, many_b):
        assert np.array_equal(u, v)


# ---------------------------------------------------------------------------
# batch norm


def test_bn_constant_input_gives_beta():
    s = BatchNormState.create(2, np.float64)
    s.beta.data[:] = [0.0, 0.25]
    x = np.ones((3, 2, 4, 4)) * np.array([5.0, -1.0])[None, :, None, None]
    out = batchnorm_forward(x, s, Mode.TRAIN)
    assert np.all(out[:, 0] == 0)
    assert np.all(out[:, 1] == 0.25)


def test_bn_standardizes_two_values():
    s = BatchNormState.create(1, np.float64)
    s.epsilon = 0.0
    x = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
    assert np.array_equal(batchnorm_forward(x, s, Mode.TRAIN).ravel(), [-1.0, 1.0])


def test_bn_running_stats_momentum():
    s = BatchNormState.create(1, np.float64)
    x = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
    batchnorm_forward(x, s, Mode.TRAIN)
    np.testing.assert_allclose(s.running_mean, [0.99 * 0 + 0.01 * 2])
    np.testing.assert_allclose(s.running_var, [0.99 * 1 + 0.01 * 1])
    before = s.running_mean.copy()
    batchnorm_forward(x, s, Mode.INFER)
    assert np.array_equal(s.running_mean, before)


def test_bn_infer_uses_running_stats():
    s = BatchNormState.create(1, np.float64)
    s.running_mean[:] = 2.0
    s.running_var[:] = 4.0
    out = batchnorm_forward(np.full((1, 1, 2, 2), 6.0), s, Mode.INFER)
    np.testing.assert_allclose(out, 4.0 / np.sqrt(4.0 + 1e-5))


def test_bn_backward_properties(rng):
    s = BatchNormState.create(3, np.float64)
    x = rng.standard_normal((2, 3, 4, 4))
    g = rng.standard_normal(x.shape)
    _, _, gb = batchnorm_backward(x, s, g)
    np.testing.assert_allclose(gb, g.sum(axis=(0, 2, 3)))
    gi, _, _ = batchnorm_backward(x, s, np.ones_like(x))
    np.testing.assert_allclose(gi.sum(axis=(0, 2, 3)), 0, atol=1e-12)


def test_bn_gradcheck(rng):
    s = BatchNormState.create(3, np.float64)
    s.gamma.data[:] = rng.uniform(0.5, 2, 3)
    x = Tensor4(rng.standard_normal((2, 3, 4, 4)), requires_grad=True, dtype=np.float64)
    r = gradcheck(lambda: batchnorm(x, s, Mode.TRAIN), [x, s.gamma, s.beta], max_coords=32)
    assert r.passed, r.where


def test_bn_channel_mismatch():
    with pytest.raises(ShapeError):
        batchnorm_forward(np.zeros((1, 2, 2, 2)), BatchNormState.create(3))


# ---------------------------------------------------------------------------
# activations, upsampling, add


def test_activation_values():
    x = Tensor4(np.array([-2.0, 3.0, 0.0]).reshape(1, 1, 1, 3), requires_grad=True)
    assert relu(x).data.ravel().tolist() == [0.0, 3.0, 0.0]
    y = sigmoid(x)
    assert y.data.ravel()[2] == 0.5
    y.backward(np.ones_like(y.data))
    assert x.grad.ravel()[2] == 0.25


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_sigmoid_extremes_stay_open_interval(dtype):
    out = sigmoid(Tensor4(np.array([-1000.0, -50.0, 50.0, 1000.0], dtype).reshape(1, 1, 1, 4))).data
    assert out.dtype == dtype
    assert np.all(np.isfinite(out)) and np.all((out > 0) & (out < 1))
    assert out[0, 0, 0, 0] == np.finfo(dtype).tiny


def test_upsample():
    assert np.array_equal(upsample_nearest_2x(Tensor4(np.full((1, 1, 1, 1), 7.0))).data,
                          np.full((1, 1, 2, 2), 7.0))
    x = Tensor4(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2), requires_grad=True)
    y = upsample_nearest_2x(x)
    assert np.array_equal(y.data[0, 0], np.kron([[1, 2], [3, 4]], np.ones((2, 2))))
    y.backward(np.ones_like(y.data))
    assert np.array_equal(x.grad, np.full((1, 1, 2, 2), 4.0))


def test_add(rng):
    a = Tensor4(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
    b = Tensor4(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
    assert np.array_equal(add(a, b).data, add(b, a).data)
    assert np.array_equal(add(a, Tensor4(np.zeros((1, 2, 3, 3)))).data, a.data)
    g = rng.standard_normal((1, 2, 3, 3))
    add(a, b).backward(g)
    assert np.array_equal(a.grad, g) and np.array_equal(b.grad, g)
    with pytest.raises(ShapeError):
        add(a, Tensor4(np.zeros((1, 2, 3, 4))))


def test_shared_node_accumulates(rng):
    x = Tensor4(rng.standard_normal((1, 1, 2, 2)), requires_grad=True)
    h = relu(x)
    y = add(h, h)
    y.backward(np.ones_like(y.data))
    np.testing.assert_array_equal(x.grad, 2.0 * (x.data > 0))


# ---------------------------------------------------------------------------
# optimizer and init


def test_rmsprop_first_step():
    p = np.zeros(3)
    state = RmspropState(lr=1e-4, rho=0.9, eps=1e-7)
    rmsprop_step([p], [np.ones(3)], state)
    np.testing.assert_allclose(state.sq_avg[0], 0.1)
    np.testing.assert_allclose(p, -3.1623e-4, rtol=1e-4)


def test_rmsprop_zero_grad_and_independence():
    p = np.array([1.0, 2.0])
    q = np.array([5.0])
    state = RmspropState()
    rmsprop_step([p, q], [np.zeros(2), np.array([1.0])], state)
    assert np.array_equal(p, [1.0, 2.0])
    assert np.all(state.sq_avg[0] >= 0)
    p2, q2 = np.array([1.0, 2.0]), np.array([5.0])
    rmsprop_step([p2, q2], [np.array([3.0, 0.0]), np.array([1.0])], RmspropState())
    assert q2[0] == q[0]


def test_rmsprop_rejects_nonfinite():
    with pytest.raises(NumericalError):
        rmsprop_step([np.zeros(2)], [np.array([1.0, np.nan])], RmspropState())


def test_init_weights():
    shape = (8, 4, 3, 3)
    a = init_weights(shape, 3)
    assert np.array_equal(a, init_weights(shape, 3))
    fi, fo = fans(shape)
    assert (fi, fo) == (36, 72)
    lim = np.sqrt(6 / (fi + fo))
    assert np.all(np.abs(a) <= lim)
    big = init_weights((100000, 1), 0, np.float64)
    lim = np.sqrt(6 / 100001)
    assert abs(big.mean()) < 3 * lim / np.sqrt(3 * 1e5)
