import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jobtitles import autodiff as ad
from jobtitles.autodiff import AdamState, Tape, Tensor, adam_step, backward, bce_loss
from jobtitles.errors import DimensionError, ValidationError
from oracles import central_difference

RTOL, ATOL = 1e-4, 1e-6


def rand(rng, *shape):
    return rng.normal(size=shape)


# name -> (builder of input arrays, function of input Tensors)
PRIMITIVES = {
    "matmul": (lambda r: [rand(r, 3, 4), rand(r, 4, 2)], lambda a, b: ad.matmul(a, b)),
    "matmul_batched": (lambda r: [rand(r, 2, 3, 4), rand(r, 4, 5)], lambda a, b: ad.matmul(a, b)),
    "add": (lambda r: [rand(r, 3, 4), rand(r, 3, 4)], lambda a, b: ad.add(a, b)),
    "add_broadcast": (lambda r: [rand(r, 3, 4), rand(r, 4)], lambda a, b: ad.add(a, b)),
    "sub": (lambda r: [rand(r, 2, 3), rand(r, 1, 3)], lambda a, b: ad.sub(a, b)),
    "mul": (lambda r: [rand(r, 3, 4), rand(r, 3, 4)], lambda a, b: ad.mul(a, b)),
    "concat": (lambda r: [rand(r, 2, 3), rand(r, 2, 5)], lambda a, b: ad.concat([a, b], axis=1)),
    "concat_axis0": (lambda r: [rand(r, 2, 3), rand(r, 4, 3)], lambda a, b: ad.concat([a, b], axis=0)),
    "stack": (lambda r: [rand(r, 2, 3), rand(r, 2, 3)], lambda a, b: ad.stack([a, b], axis=1)),
    "slice": (lambda r: [rand(r, 4, 6)], lambda a: a[1:3, ::2]),
    "slice_twice": (lambda r: [rand(r, 4, 6)], lambda a: ad.add(a[:, :3], a[:, 3:])),
    "sigmoid": (lambda r: [rand(r, 3, 4)], ad.sigmoid),
    "tanh": (lambda r: [rand(r, 3, 4)], ad.tanh),
    "relu": (lambda r: [rand(r, 3, 4) + 0.05], ad.relu),
    "where": (lambda r: [rand(r, 3, 4), rand(r, 3, 4)],
              lambda a, b: ad.where(np.array([[1], [0], [1]]), a, b)),
    "conv1d": (lambda r: [rand(r, 2, 7, 3), rand(r, 3, 3, 4), rand(r, 4)], ad.conv1d),
    "max_pool_over_time": (lambda r: [rand(r, 2, 5, 3)], ad.max_pool_over_time),
    "dense": (lambda r: [rand(r, 3, 4), rand(r, 4, 2), rand(r, 2)], ad.dense),
    "embedding": (lambda r: [rand(r, 6, 3)], lambda t: ad.embedding(t, np.array([[1, 2, 2], [0, 5, 1]]), 0)),
    "sum": (lambda r: [rand(r, 3, 4)], ad.sum_),
    "mean": (lambda r: [rand(r, 3, 4)], ad.mean),
    "bce": (lambda r: [r.uniform(0.05, 0.95, (3, 4))],
            lambda p: bce_loss(p, np.eye(3, 4))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    build, fn = PRIMITIVES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    arrs = build(rng)
    tensors = [Tensor(a, requires_grad=True) for a in arrs]
    out_shape = fn(*[Tensor(a) for a in arrs]).shape
    weights = rng.normal(size=out_shape)

    def scalar():
        return float(np.sum(fn(*[Tensor(a) for a in arrs]).data * weights))

    with Tape() as tape:
        loss = ad.sum_(ad.mul(fn(*tensors), Tensor(weights)))
    grads = backward(tape, loss, tensors)
    for arr, g in zip(arrs, grads):
        num = central_difference(scalar, arr)
        if name == "embedding":
            num[0] = 0.0  # padding row is excluded from updates by design
        np.testing.assert_allclose(g, num, rtol=RTOL, atol=ATOL)


def test_embedding_padding_row_gets_no_gradient():
    t = Tensor(np.ones((4, 2)), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_(ad.embedding(t, np.array([0, 0, 3]), padding_idx=0))
    (g,) = backward(tape, loss, [t])
    assert np.all(g[0] == 0) and np.all(g[3] == 1)


def test_sigmoid_tanh_at_zero():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5
    assert ad.tanh(Tensor(0.0)).item() == 0.0


def test_sigmoid_saturates_without_overflow():
    with np.errstate(all="raise"):
        y = ad.sigmoid(Tensor(np.array([-1000.0, 1000.0]))).data
    assert y.tolist() == [0.0, 1.0]


def test_conv1d_output_length():
    y = ad.conv1d(Tensor(np.zeros((1, 5, 2))), Tensor(np.zeros((3, 2, 4))), Tensor(np.zeros(4)))
    assert y.shape == (1, 3, 4)


def test_conv1d_matches_explicit_sum():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(1, 6, 2)), rng.normal(size=(3, 2, 4)), rng.normal(size=4)
    y = ad.conv1d(Tensor(x), Tensor(w), Tensor(b)).data
    for t in range(4):
        expected = b + sum(x[0, t + j] @ w[j] for j in range(3))
        np.testing.assert_allclose(y[0, t], expected, rtol=1e-12)


@pytest.mark.parametrize(
    "op, shapes",
    [
        (ad.matmul, [(3, 4), (5, 2)]),
        (ad.add, [(3, 4), (2, 4)]),
        (ad.mul, [(3,), (4,)]),
        (lambda a, b: ad.concat([a, b], axis=1), [(2, 3), (3, 3)]),
        (lambda x, w: ad.conv1d(x, w, Tensor(np.zeros(2))), [(1, 2, 3), (3, 3, 2)]),
    ],
)
def test_shape_mismatch_names_shapes(op, shapes):
    with pytest.raises(DimensionError) as err:
        op(*[Tensor(np.zeros(s)) for s in shapes])
    assert str(shapes[0]) in str(err.value) or str(tuple(shapes[0])) in str(err.value)


def test_linear_gradient_is_input():
    x = np.array([1.0, -2.0, 3.0])
    w = Tensor(np.array([0.5, 0.1, 0.2]), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_(ad.mul(w, Tensor(x)))
    (g,) = backward(tape, loss, [w])
    assert g.tolist() == x.tolist()


def test_unused_tensor_gets_zero_gradient():
    w = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_(ad.mul(w, w))
        ad.tanh(unused)
    gw, gu = backward(tape, loss, [w, unused])
    assert gw.tolist() == [2.0, 2.0, 2.0]
    assert np.array_equal(gu, np.zeros((2, 2)))
    assert np.array_equal(unused.grad, np.zeros((2, 2)))


def test_fan_out_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with Tape() as tape:
        y = ad.mul(x, x)
        loss = ad.sum_(ad.add(ad.add(y, x), x))
    (g,) = backward(tape, loss, [x])
    assert g.tolist() == [6.0]


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ad.tanh(x)
    with pytest.raises(ValidationError):
        backward(tape, y)


def test_no_recording_outside_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ad.tanh(x)
    assert not y.requires_grad


def three_layer_loss(params, x, y):
    h = ad.tanh(ad.dense(x, params[0], params[1]))
    h = ad.sigmoid(ad.dense(h, params[2], params[3]))
    return bce_loss(ad.sigmoid(ad.dense(h, params[4], params[5])), y)


def test_random_three_layer_network_gradcheck():
    rng = np.random.default_rng(3)
    shapes = [(5, 7), (7,), (7, 6), (6,), (6, 3), (3,)]
    arrs = [rng.normal(size=s) for s in shapes]
    x, y = rng.normal(size=(4, 5)), (rng.random((4, 3)) > 0.5).astype(float)
    ts = [Tensor(a, requires_grad=True) for a in arrs]
    with Tape() as tape:
        loss = three_layer_loss(ts, Tensor(x), y)
    grads = backward(tape, loss, ts)
    for arr, g in zip(arrs, grads):
        num = central_difference(lambda: three_layer_loss([Tensor(a) for a in arrs], Tensor(x), y).item(), arr)
        np.testing.assert_allclose(g, num, rtol=RTOL, atol=ATOL)


# loss ---------------------------------------------------------------------------


def test_bce_perfect_prediction():
    y = np.array([[1.0, 0.0, 1.0]])
    loss = bce_loss(Tensor(y.copy()), y).item()
    assert loss == pytest.approx(-math.log(1 - 1e-7), rel=1e-6)


def test_bce_perfect_prediction_float32():
    # 1 - 1e-7 rounds to 1 - 2**-23 in single precision
    y = np.ones((2, 3), dtype=np.float32)
    loss = bce_loss(Tensor(y.copy()), y).item()
    assert loss == pytest.approx(1.19e-7, rel=1e-2)


def test_bce_half():
    assert bce_loss(Tensor(np.full((2, 5), 0.5)), np.eye(2, 5)).item() == pytest.approx(math.log(2), abs=1e-12)


def test_bce_hand_value():
    loss = bce_loss(Tensor(np.array([[0.9, 0.2]])), np.array([[1.0, 0.0]])).item()
    assert loss == pytest.approx(0.164252033486018, abs=1e-12)
    assert loss == pytest.approx(-(math.log(0.9) + math.log(0.8)) / 2, abs=1e-15)


def test_bce_shape_mismatch():
    with pytest.raises(DimensionError):
        bce_loss(Tensor(np.full((2, 3), 0.5)), np.zeros((3, 2)))


@settings(max_examples=200)
@given(
    arrays(np.float64, (3, 4), elements=st.floats(0.0, 1.0)),
    arrays(np.int8, (3, 4), elements=st.integers(0, 1)),
)
def test_bce_nonnegative(p, y):
    loss = bce_loss(Tensor(p), y.astype(float)).item()
    assert loss >= 0 and math.isfinite(loss)


@settings(max_examples=50)
@given(arrays(np.int8, (2, 6), elements=st.integers(0, 1)))
def test_bce_ln2_for_any_target(y):
    assert bce_loss(Tensor(np.full((2, 6), 0.5)), y.astype(float)).item() == pytest.approx(math.log(2), abs=1e-12)


# adam ---------------------------------------------------------------------------


def test_adam_zero_gradient_is_noop():
    p = np.array([1.0, -2.0])
    st_ = AdamState.for_params([p])
    adam_step([p], [np.zeros(2)], st_)
    assert p.tolist() == [1.0, -2.0]
    assert st_.m[0].tolist() == [0.0, 0.0] and st_.v[0].tolist() == [0.0, 0.0]
    assert st_.t == 1


def test_adam_first_step_hand_value():
    p = np.array([0.0])
    adam_step([p], [np.array([1.0])], AdamState.for_params([p]))
    assert p[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def test_adam_identical_params_identical_updates():
    a, b = np.array([0.3, 0.1]), np.array([0.3, 0.1])
    g = np.array([0.7, -4.0])
    st_ = AdamState.for_params([a, b])
    for _ in range(5):
        adam_step([a, b], [g, g.copy()], st_)
    assert np.array_equal(a, b)


@settings(max_examples=200)
@given(arrays(np.float64, 5, elements=st.floats(-1e6, 1e6)))
def test_adam_first_update_bounded_by_lr(g):
    p = np.zeros(5)
    adam_step([p], [g], AdamState.for_params([p], lr=1e-3))
    assert np.all(np.abs(p) <= 1e-3 * (1 + 1e-9))


def test_adam_frozen_parameter():
    p, q = np.ones(2), np.ones(2)
    adam_step([p, q], [np.ones(2), None], AdamState.for_params([p, q]))
    assert q.tolist() == [1.0, 1.0] and p[0] < 1.0


def test_tape_replay_is_bit_identical():
    rng = np.random.default_rng(0)
    arrs = [rng.normal(size=s).astype(np.float32) for s in [(5, 7), (7,), (7, 6), (6,), (6, 3), (3,)]]
    x = rng.normal(size=(4, 5)).astype(np.float32)
    y = (rng.random((4, 3)) > 0.5).astype(np.float32)

    def run():
        ps = [a.copy() for a in arrs]
        st_ = AdamState.for_params(ps)
        losses = []
        for _ in range(5):
            ts = [Tensor(p, requires_grad=True) for p in ps]
            with Tape() as tape:
                loss = three_layer_loss(ts, Tensor(x), y)
            adam_step(ps, backward(tape, loss, ts), st_)
            losses.append(loss.data.tobytes())
        return losses

    assert run() == run()
