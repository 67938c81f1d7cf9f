import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wheelnav.errors import SchemaError, ShapeError, UsageError
from wheelnav.tensornet import (
    AdamState,
    ConvLayer,
    DenseLayer,
    Tape,
    Tensor,
    adam_step,
    conv2d_forward,
    dense_forward,
    load_arrays,
    mse,
    relu,
    save_arrays,
    sgd_step,
)


def conv_loop(x, w, b):
    """Direct nested-loop valid cross-correlation, (C, H, W) input."""
    co, ci, kh, kw = w.shape
    _, H, W = x.shape
    out = np.zeros((co, H - kh + 1, W - kw + 1))
    for o in range(co):
        for i in range(H - kh + 1):
            for j in range(W - kw + 1):
                acc = b[o]
                for c in range(ci):
                    for a in range(kh):
                        for e in range(kw):
                            acc += w[o, c, a, e] * x[c, i + a, j + e]
                out[o, i, j] = acc
    return out


# -- forward ops ---------------------------------------------------------


def test_conv_unit_kernel_is_identity():
    x = np.arange(12.0).reshape(1, 3, 4)
    out = conv2d_forward(x, ConvLayer(np.ones((1, 1, 1, 1)), np.zeros(1)))
    assert np.array_equal(out.data, x)


def test_conv_diagonal_kernel():
    out = conv2d_forward([[[1.0, 2.0], [3.0, 4.0]]], ConvLayer([[[[1.0, 0.0], [0.0, 1.0]]]], [0.0]))
    assert out.data.tolist() == [[[5.0]]]


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 3, 8))
    w = rng.normal(size=(2, 1, 1, 3))
    b = rng.normal(size=2)
    np.testing.assert_allclose(conv2d_forward(x, ConvLayer(w, b)).data, conv_loop(x, w, b), atol=1e-12, rtol=0)


def test_conv_multichannel_batch_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 2, 4, 9))
    w = rng.normal(size=(5, 2, 3, 4))
    b = rng.normal(size=5)
    out = conv2d_forward(x, ConvLayer(w, b)).data
    for n in range(3):
        np.testing.assert_allclose(out[n], conv_loop(x[n], w, b), atol=1e-12, rtol=0)


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        conv2d_forward(np.zeros((2, 3, 8)), ConvLayer(np.zeros((1, 1, 1, 3)), np.zeros(1)))
    with pytest.raises(ShapeError):
        conv2d_forward(np.zeros((1, 3, 2)), ConvLayer(np.zeros((1, 1, 1, 3)), np.zeros(1)))


@settings(max_examples=30)
@given(st.floats(-10, 10, allow_nan=False))
def test_conv_is_linear_without_bias(a):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 7))
    layer = ConvLayer(rng.normal(size=(3, 2, 2, 3)), np.zeros(3))
    np.testing.assert_allclose(conv2d_forward(a * x, layer).data, a * conv2d_forward(x, layer).data,
                               atol=1e-10, rtol=0)


def test_dense_identity():
    x = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(dense_forward(x, DenseLayer(np.eye(3), np.zeros(3))).data, x)


def test_dense_small_case():
    assert dense_forward([2.0, 3.0], DenseLayer([[1.0, 1.0]], [1.0])).data.tolist() == [6.0]


def test_dense_matches_loop_oracle():
    rng = np.random.default_rng(4)
    W, b, x = rng.normal(size=(5, 32)), rng.normal(size=5), rng.normal(size=32)
    ref = [b[i] + sum(W[i, j] * x[j] for j in range(32)) for i in range(5)]
    np.testing.assert_allclose(dense_forward(x, DenseLayer(W, b)).data, ref, atol=1e-12, rtol=0)


def test_dense_shape_error():
    with pytest.raises(ShapeError):
        dense_forward(np.zeros(4), DenseLayer(np.zeros((2, 3)), np.zeros(2)))


def test_relu_cases():
    assert relu([-1.0, 0.0, 2.0]).data.tolist() == [0.0, 0.0, 2.0]
    assert np.all(relu(-np.arange(1.0, 6.0)).data == 0)


@given(arrays(np.float64, 10, elements=st.floats(-1e6, 1e6)))
def test_relu_idempotent(x):
    assert np.array_equal(relu(relu(x).data).data, relu(x).data)


def test_mse_cases():
    assert mse(np.ones((3, 2)), np.ones((3, 2))) == 0.0
    assert mse([[1.0, 1.0]], [[0.0, 0.0]]) == 2.0


def test_mse_matches_loop_oracle():
    rng = np.random.default_rng(5)
    p, t = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    ref = sum((p[i, 0] - t[i, 0]) ** 2 + (p[i, 1] - t[i, 1]) ** 2 for i in range(4)) / 4
    assert mse(p, t) == pytest.approx(ref, abs=1e-12)


@given(arrays(np.float64, (3, 2), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, (3, 2), elements=st.floats(-1e3, 1e3)))
def test_mse_symmetric(p, t):
    assert mse(p, t) == mse(t, p)


def test_mse_shape_error():
    with pytest.raises(ShapeError):
        mse(np.zeros((3, 2)), np.zeros((2, 2)))


# -- reverse mode --------------------------------------------------------


def test_scalar_square_gradient():
    tape = Tape()
    x = Tensor(3.0, requires_grad=True)
    loss = tape.mse(x, np.zeros(()))
    assert tape.backward(loss)[x] == pytest.approx(6.0)


def test_backward_before_forward_is_usage_error():
    tape = Tape()
    with pytest.raises(UsageError):
        tape.backward(Tensor(1.0))


def test_backward_on_non_recording_tape_is_usage_error():
    tape = Tape(record=False)
    loss = tape.mse(Tensor(1.0, requires_grad=True), np.zeros(()))
    with pytest.raises(UsageError):
        tape.backward(loss)


def test_unused_parameter_gets_zero_gradient():
    tape = Tape()
    a = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones(4), requires_grad=True)
    loss = tape.mse(tape.scale(a, 2.0), np.zeros(3))
    grads = tape.gradients(loss, {"a": a, "unused": unused})
    assert np.array_equal(grads["unused"], np.zeros(4))
    assert np.all(grads["a"] != 0)


def numeric_grad(fn, x, idx, h=1e-5):
    old = x[idx]
    x[idx] = old + h
    up = fn()
    x[idx] = old - h
    down = fn()
    x[idx] = old
    return (up - down) / (2 * h)


def check_op(build, shapes, seed=0, probes=20):
    """Compare analytic and central-difference gradients for ``build(tape, *tensors)``."""
    rng = np.random.default_rng(seed)
    values = [rng.normal(size=s) for s in shapes]

    def value():
        return float(build(Tape(record=False), *values).data)

    tape = Tape()
    tensors = [Tensor(v, requires_grad=True) for v in values]
    grads = tape.backward(build(tape, *tensors))
    checked = 0
    for v, t in zip(values, tensors):
        flat = [np.unravel_index(i, v.shape) for i in rng.choice(v.size, min(v.size, probes), replace=False)]
        for idx in flat:
            num = numeric_grad(value, v, idx)
            ana = grads[t][idx]
            assert abs(num - ana) <= 1e-6 + 1e-5 * abs(num), (idx, num, ana)
            checked += 1
    return checked


def test_conv_gradient():
    def build(tape, x, w, b):
        y = tape.conv2d(x, w, b)
        return tape.mse(tape.reshape(y, (y.shape[0], -1)), np.zeros((2, 3 * 2 * 6)))

    assert check_op(build, [(2, 2, 4, 8), (3, 2, 3, 3), (3,)]) > 20


def test_dense_gradient():
    def build(tape, x, w, b):
        return tape.mse(tape.dense(x, w, b), np.ones((4, 5)))

    assert check_op(build, [(4, 7), (5, 7), (5,)]) > 20


def test_relu_concat_flatten_gradient():
    def build(tape, a, b):
        h = tape.relu(tape.concat([a, b], axis=1))
        return tape.mse(tape.flatten(h), np.zeros((2, 5 * 3 * 4)))

    # random normals are far from zero with overwhelming probability at this size
    assert check_op(build, [(2, 2, 3, 4), (2, 3, 3, 4)], seed=7) > 20


def test_elementwise_ops_gradient():
    def build(tape, a, b):
        d = tape.sub(tape.add(a, b), tape.scale(b, 0.5))
        s = tape.sqrt(tape.shift(tape.sum(tape.square(d), axis=-1), 1.0))
        return tape.weighted_sum([tape.mean(s), tape.mean(tape.abs(a))], [0.7, 0.3])

    assert check_op(build, [(3, 5, 2), (3, 5, 2)], seed=3) > 20


# -- optimisers ----------------------------------------------------------


def test_sgd_zero_gradient_is_noop():
    p = {"w": np.array([1.0, 2.0])}
    assert np.array_equal(sgd_step(p, {"w": np.zeros(2)}, 0.1)["w"], p["w"])


def test_sgd_single_step():
    assert sgd_step({"w": np.array(1.0)}, {"w": np.array(2.0)}, 0.1)["w"] == pytest.approx(0.8)


def test_sgd_contracts_quadratic():
    p = {"w": np.array(1.0)}
    for _ in range(50):
        p = sgd_step(p, {"w": 2.0 * p["w"]}, 0.4)
    assert abs(p["w"]) < 1e-4
    assert p["w"] == pytest.approx(0.2**50, rel=1e-9)


def test_sgd_shape_error():
    with pytest.raises(ShapeError):
        sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, 0.1)


def test_adam_first_step_is_signed_learning_rate():
    g = np.array([3.0, -0.5, 1e-3])
    p, st_ = adam_step({"w": np.zeros(3)}, {"w": g}, AdamState.zeros_like({"w": np.zeros(3)}), 0.002)
    np.testing.assert_allclose(p["w"], -0.002 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    assert st_.step == 1


def test_adam_zero_gradient_is_noop():
    p0 = {"w": np.array([1.0, -1.0])}
    p, _ = adam_step(p0, {"w": np.zeros(2)}, AdamState.zeros_like(p0), 0.1)
    assert np.array_equal(p["w"], p0["w"])


def test_adam_matches_reference_recursion_and_decreases_loss():
    theta, m, v = 1.0, 0.0, 0.0
    p = {"w": np.array(1.0)}
    state = AdamState.zeros_like(p)
    losses = []
    for t in range(1, 401):
        g = 2.0 * theta
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.002 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        p, state = adam_step(p, {"w": 2.0 * p["w"]}, state, 0.002)
        assert float(p["w"]) == pytest.approx(theta, abs=1e-15)
        losses.append(theta**2)
    assert all(b <= a for a, b in zip(losses[10:], losses[11:]))


def test_adam_state_shape_error():
    p = {"w": np.zeros(2)}
    with pytest.raises(ShapeError):
        adam_step(p, {"w": np.zeros(2)}, AdamState.zeros_like({"w": np.zeros(3)}), 0.1)


# -- container -----------------------------------------------------------


def test_container_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a": rng.normal(size=(3, 4)), "b": np.arange(5, dtype=np.int64), "c": np.array(np.pi)}
    path = tmp_path / "x.bin"
    save_arrays(path, arrays, {"k": [1, 2]})
    back, meta = load_arrays(path)
    assert meta == {"k": [1, 2]}
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype
        assert np.array_equal(back[k], arrays[k])
        assert back[k].tobytes() == arrays[k].tobytes()


def test_container_bytes_are_deterministic(tmp_path):
    arrays = {"w": np.linspace(0, 1, 7)}
    save_arrays(tmp_path / "1.bin", arrays, {"x": 1})
    save_arrays(tmp_path / "2.bin", arrays, {"x": 1})
    assert (tmp_path / "1.bin").read_bytes() == (tmp_path / "2.bin").read_bytes()


def test_container_rejects_foreign_file(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"hello\nworld")
    with pytest.raises(SchemaError):
        load_arrays(p)


def test_container_rejects_future_version(tmp_path):
    p = tmp_path / "v.bin"
    save_arrays(p, {"w": np.zeros(2)})
    p.write_bytes(p.read_bytes().replace(b"WHEELNAV-ARRAYS 1", b"WHEELNAV-ARRAYS 9", 1))
    with pytest.raises(SchemaError):
        load_arrays(p)
