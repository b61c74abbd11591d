import struct
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import gradient_check
from tagnoise.nncore import (
    CheckpointError, ConfigError, LayerSpec, Parameters, ShapeError, Tensor, UsageError,
    avgpool2d, batchnorm, bce_loss, conv2d, decode_checkpoint, dense, dropout,
    encode_checkpoint, global_avg_pool, load_checkpoint, mul, no_grad, relu, save_checkpoint,
    sigmoid, tsum,
)

GRAD_TOL = 1e-4


def param(shape, rng, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def weighted_sum(out, weights):
    # a random linear read-out keeps gradients non-trivial
    return tsum(mul(out, weights))


# autodiff basics

def test_sum_gradient_is_ones():
    x = Tensor(np.arange(5.0), requires_grad=True)
    tsum(x).backward()
    assert np.array_equal(x.grad, np.ones(5))


def test_square_gradient():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    tsum(mul(x, x)).backward()
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x + x
    tsum(mul(y, y)).backward()
    assert x.grad.tolist() == [24.0]


def test_backward_without_graph_is_usage_error():
    with pytest.raises(UsageError):
        Tensor(np.ones(3), requires_grad=True).backward()
    loss = tsum(Tensor(np.ones(3), requires_grad=True))
    loss.backward()
    with pytest.raises(UsageError):
        loss.backward()


def test_non_scalar_backward_needs_seed():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError):
        (x + x).backward()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = tsum(mul(x, x))
    assert not y.requires_grad
    with pytest.raises(UsageError):
        y.backward()


# forward examples

def test_conv_identity_and_box_kernels():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    out = conv2d(x, np.ones((1, 1, 1, 1)), np.zeros(1)).data
    assert np.array_equal(out, x)
    assert conv2d(x, np.ones((1, 1, 2, 2)), np.zeros(1)).data.tolist() == [[[[10.0]]]]
    assert np.all(conv2d(x, np.zeros((1, 1, 1, 1)), np.array([2.5])).data == 2.5)


def test_conv_output_extent_and_shape_errors():
    x = np.zeros((2, 3, 9, 7))
    w = np.zeros((4, 3, 3, 3))
    assert conv2d(x, w, np.zeros(4), padding=1, stride=2).shape == (2, 4, 5, 4)
    with pytest.raises(ShapeError, match=r"\(2, 3, 9, 7\).*\(4, 2, 3, 3\)"):
        conv2d(x, np.zeros((4, 2, 3, 3)), np.zeros(4))


@given(st.integers(0, 2**32), st.floats(-3, 3), st.floats(-3, 3))
def test_conv_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    x, z = rng.standard_normal((2, 2, 5, 6)), rng.standard_normal((2, 2, 5, 6))
    w, zero = rng.standard_normal((3, 2, 3, 3)), np.zeros(3)
    lhs = conv2d(a * x + b * z, w, zero, padding=1).data
    rhs = a * conv2d(x, w, zero, padding=1).data + b * conv2d(z, w, zero, padding=1).data
    assert np.allclose(lhs, rhs, atol=1e-10, rtol=0)


def test_batchnorm_examples():
    rng = np.random.default_rng(0)
    g, b = np.ones(2), np.zeros(2)
    const = np.full((3, 2, 2, 2), 4.0)
    out = batchnorm(const, g, b, np.zeros(2), np.ones(2), training=True).data
    assert np.allclose(out, 0.0)
    x = rng.standard_normal((4, 2, 3, 3))
    out = batchnorm(x, np.zeros(2), np.array([0.5, -1.0]), np.zeros(2), np.ones(2), True).data
    assert np.allclose(out[:, 0], 0.5) and np.allclose(out[:, 1], -1.0)
    out = batchnorm(x, g, b, np.zeros(2), np.ones(2), training=False).data
    assert np.allclose(out, x / np.sqrt(1 + 1e-5))


def test_batchnorm_standardizes_and_tracks_running_stats():
    rng = np.random.default_rng(1)
    x = rng.normal(3.0, 2.0, (8, 3, 4, 4))
    rm, rv = np.zeros(3), np.ones(3)
    out = batchnorm(x, np.ones(3), np.zeros(3), rm, rv, training=True).data
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-4)
    m = 8 * 16
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1))


def test_batchnorm_single_value_per_channel_rejected():
    with pytest.raises(ValueError):
        batchnorm(np.ones((1, 2, 1, 1)), np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), True)


def test_eval_batchnorm_does_not_touch_running_stats():
    rm, rv = np.array([0.3]), np.array([2.0])
    batchnorm(np.ones((2, 1, 2, 2)), np.ones(1), np.zeros(1), rm, rv, training=False)
    assert rm.tolist() == [0.3] and rv.tolist() == [2.0]


def test_avgpool_examples():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    assert avgpool2d(x).data.tolist() == [[[[2.5]]]]
    ramp = np.arange(16.0).reshape(1, 1, 4, 4)
    assert avgpool2d(ramp).data[0, 0].tolist() == [[2.5, 4.5], [10.5, 12.5]]
    assert np.all(avgpool2d(np.full((1, 2, 6, 4), 7.0)).data == 7.0)
    # ragged row and column dropped
    assert avgpool2d(np.zeros((1, 1, 5, 3))).shape == (1, 1, 2, 1)
    with pytest.raises(ShapeError):
        avgpool2d(np.zeros((1, 1, 1, 4)))


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32))
def test_avgpool_energy(h, w, seed):
    x = np.random.default_rng(seed).standard_normal((2, 3, 2 * h, 2 * w))
    assert avgpool2d(x).data.sum() * 4 == pytest.approx(x.sum(), abs=1e-9)


def test_global_avg_pool_examples():
    assert np.all(global_avg_pool(np.full((2, 3, 5, 7), 1.5)).data == 1.5)
    assert global_avg_pool(np.array([[[[1.0, 3.0], [5.0, 7.0]]]])).data.tolist() == [[4.0]]
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 5))
    tiled = np.concatenate([x, x], axis=3)
    assert np.allclose(global_avg_pool(tiled).data, global_avg_pool(x).data)


def test_pointwise_examples():
    assert sigmoid(np.array([0.0])).data.tolist() == [0.5]
    assert relu(np.array([-2.0, 3.0])).data.tolist() == [0.0, 3.0]
    big = sigmoid(np.array([-800.0, 800.0])).data
    assert np.all((big > 0) & (big < 1))
    x = Tensor(np.random.default_rng(0).standard_normal((3, 4)))
    assert dropout(x, 0.5, training=False) is x
    out = dense(np.array([[1.0, 2.0]]), np.array([[1.0], [3.0]]), np.array([0.5])).data
    assert out.tolist() == [[7.5]]


def test_dropout_zeroes_and_scales():
    out = dropout(np.ones((100, 100)), 0.25, True, np.random.default_rng(0)).data
    assert set(np.unique(out)) == {0.0, 1 / 0.75}
    assert abs((out == 0).mean() - 0.25) < 0.02


def test_dropout_is_unbiased():
    x = np.linspace(-1, 1, 8)
    rng = np.random.default_rng(1)
    mean = np.mean([dropout(x, 0.3, True, rng).data for _ in range(20000)], axis=0)
    assert np.all(np.abs(mean - x) <= 0.02 * np.abs(x))


def test_dropout_rate_one_rejected():
    with pytest.raises(ConfigError):
        LayerSpec("dropout", rate=1.0)
    with pytest.raises(ValueError):
        dropout(np.ones(3), 1.0, True, np.random.default_rng(0))


def test_bce_examples():
    assert float(bce_loss(np.array([[0.5]]), np.array([[1.0]])).data) == pytest.approx(np.log(2))
    assert float(bce_loss(np.array([[1.0]]), np.array([[1.0]])).data) <= -np.log1p(-1e-7) + 1e-15
    y = (np.random.default_rng(0).random((4, 12)) < 0.3).astype(float)
    assert float(bce_loss(np.full((4, 12), 0.5), y).data) == pytest.approx(np.log(2))
    with pytest.raises(ShapeError):
        bce_loss(np.full((2, 12), 0.5), np.zeros((2, 11)))


def test_layer_spec_validation():
    with pytest.raises(ConfigError):
        LayerSpec("lstm")
    with pytest.raises(ConfigError):
        LayerSpec("conv", in_channels=0, out_channels=3)
    with pytest.raises(ConfigError):
        LayerSpec("dense", in_features=3)


# gradient checks, one per layer

def check(loss_fn, tensors, **kw):
    errors = gradient_check(loss_fn, tensors, **kw)
    assert max(errors.values()) < GRAD_TOL, errors


@pytest.mark.parametrize("method", ["im2col", "direct"])
@pytest.mark.parametrize("padding,stride", [(0, 1), (1, 1), (1, 2), (2, 3)])
def test_conv_gradients(method, padding, stride):
    rng = np.random.default_rng(padding * 10 + stride)
    x, w, b = param((2, 3, 7, 6), rng), param((4, 3, 3, 3), rng), param((4,), rng)
    out_shape = conv2d(x.data, w.data, b.data, padding, stride).shape
    r = rng.standard_normal(out_shape)
    check(lambda: weighted_sum(conv2d(x, w, b, padding, stride, method), r),
          {"x": x, "w": w, "b": b})


@pytest.mark.parametrize("training", [True, False])
@pytest.mark.parametrize("shape", [(4, 3, 3, 2), (5, 3)])
def test_batchnorm_gradients(training, shape):
    rng = np.random.default_rng(2)
    x = param(shape, rng)
    g, b = param((3,), rng), param((3,), rng)
    rm, rv = rng.standard_normal(3), rng.uniform(0.5, 2, 3)
    r = rng.standard_normal(shape)

    def loss():
        # fresh copies so the running-stat update never feeds back
        return weighted_sum(batchnorm(x, g, b, rm.copy(), rv.copy(), training), r)

    check(loss, {"x": x, "gamma": g, "beta": b})


def test_relu_gradient():
    rng = np.random.default_rng(3)
    x = param((3, 4), rng)
    x.data[np.abs(x.data) < 0.05] += 0.1  # keep clear of the kink
    r = rng.standard_normal((3, 4))
    check(lambda: weighted_sum(relu(x), r), {"x": x})


def test_avgpool_gradient():
    rng = np.random.default_rng(4)
    x = param((2, 2, 5, 6), rng)
    r = rng.standard_normal((2, 2, 2, 3))
    check(lambda: weighted_sum(avgpool2d(x), r), {"x": x})


def test_global_avg_pool_gradient():
    rng = np.random.default_rng(5)
    x = param((2, 3, 4, 5), rng)
    r = rng.standard_normal((2, 3))
    check(lambda: weighted_sum(global_avg_pool(x), r), {"x": x})


def test_dense_gradient():
    rng = np.random.default_rng(6)
    x, w, b = param((3, 5), rng), param((5, 4), rng), param((4,), rng)
    r = rng.standard_normal((3, 4))
    check(lambda: weighted_sum(dense(x, w, b), r), {"x": x, "w": w, "b": b})


def test_dropout_gradient_with_fixed_mask():
    rng = np.random.default_rng(7)
    x = param((4, 6), rng)
    r = rng.standard_normal((4, 6))
    check(lambda: weighted_sum(dropout(x, 0.4, True, np.random.default_rng(11)), r), {"x": x})


def test_sigmoid_bce_gradient():
    rng = np.random.default_rng(8)
    x = param((4, 12), rng)
    y = (rng.random((4, 12)) < 0.3).astype(float)
    check(lambda: bce_loss(sigmoid(x), y), {"x": x})


def test_bce_gradient():
    rng = np.random.default_rng(9)
    p = Tensor(rng.uniform(0.05, 0.95, (3, 12)), requires_grad=True)
    y = (rng.random((3, 12)) < 0.5).astype(float)
    check(lambda: bce_loss(p, y), {"p": p})


# parameters and checkpoints

def make_params():
    p = Parameters()
    p.add("conv0.weight", np.arange(24.0).reshape(2, 3, 2, 2))
    p.add("fc.bias", [0.5, -0.25])
    p.add_state("bn0.running_var", [1.0, 2.0])
    return p


def test_checkpoint_round_trip(tmp_path):
    p = make_params()
    save_checkpoint(tmp_path / "c.bin", p.arrays(), header="a = 1\n")
    header, arrays = load_checkpoint(tmp_path / "c.bin")
    assert header == "a = 1\n"
    assert list(arrays) == ["conv0.weight", "fc.bias", "bn0.running_var"]
    for k, v in p.arrays().items():
        assert np.array_equal(arrays[k], v) and arrays[k].dtype == np.float64
    q = make_params()
    for t in q:
        t.data[...] = 0
    q.load_arrays(arrays)
    assert all(np.array_equal(q[k] if k in q.state else q[k].data, v) for k, v in arrays.items())


def test_checkpoint_layout():
    blob = encode_checkpoint({"w": np.array([[1.0, 2.0]])}, header="h")
    # build the expected bytes field by field
    body = (b"TNPF" + struct.pack("<II", 1, 1) + b"h" + struct.pack("<I", 1)
            + struct.pack("<I", 1) + b"w" + struct.pack("<III", 2, 1, 2)
            + struct.pack("<2d", 1.0, 2.0))
    assert blob == body + struct.pack("<I", zlib.crc32(body))


def test_checkpoint_corruption_detected():
    blob = bytearray(encode_checkpoint(make_params().arrays()))
    blob[30] ^= 0xFF
    with pytest.raises(CheckpointError, match="CRC"):
        decode_checkpoint(bytes(blob))
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"XXXX" + bytes(blob[4:]))
    with pytest.raises(CheckpointError):
        decode_checkpoint(bytes(blob[:10]))


def test_load_arrays_checks_names_and_shapes():
    p = make_params()
    with pytest.raises(CheckpointError):
        p.load_arrays({**p.arrays(), "extra": np.zeros(1)})
    bad = dict(p.arrays())
    bad["fc.bias"] = np.zeros(3)
    with pytest.raises(CheckpointError):
        p.load_arrays(bad)
    partial = dict(p.arrays())
    del partial["fc.bias"]
    with pytest.raises(CheckpointError):
        p.load_arrays(partial)
