import zlib

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kgzsl.errors import DataError, NonFiniteInput, ShapeMismatch, UntrackedParameter
from kgzsl.numerics import tape as T
from kgzsl.numerics.matrix import (
    as_matrix,
    format_keyed,
    format_matrix,
    parse_keyed,
    parse_matrix,
    row_normalize,
)
from kgzsl.numerics.optim import Optimizer, adam_step, sgd_momentum_step
from kgzsl.numerics.rng import derive_seed, glorot_init, seeded_rng
from oracles import central_difference, relative_error


def scalar(build, *values):
    """Evaluate ``build`` on fresh tape params; return (loss value, grads)."""
    tape = T.Tape()
    ps = [tape.param(v) for v in values]
    loss = build(*ps)
    return float(loss.value), tape.gradients(loss, ps)


# ------------------------------------------------------------ primitive values


def test_matmul_identity():
    M = np.arange(6.0).reshape(2, 3)
    tape = T.Tape()
    assert np.array_equal(T.matmul(tape.const(np.eye(2)), tape.const(M)).value, M)


def test_row_softmax_uniform_and_shift_invariance():
    tape = T.Tape()
    assert np.allclose(T.row_softmax(tape.const([[0.0, 0.0]])).value, [[0.5, 0.5]])
    x = np.random.default_rng(0).normal(size=(4, 5)) * 30
    a = T.row_softmax(tape.const(x)).value
    b = T.row_softmax(tape.const(x + np.arange(4)[:, None] * 7.0)).value
    assert (a > 0).all() and np.allclose(a.sum(axis=1), 1, atol=1e-9)
    assert np.allclose(a, b, atol=1e-12)


def test_row_l2_normalize_zero_row():
    tape = T.Tape()
    out = T.row_l2_normalize(tape.const([[3.0, 4.0], [0.0, 0.0]])).value
    assert np.allclose(out, [[0.6, 0.8], [0.0, 0.0]])


def test_mse_identical_is_zero():
    tape = T.Tape()
    X = tape.param(np.ones((3, 2)))
    assert float(T.mean_squared_l2_loss(X, np.ones((3, 2))).value) == 0.0


def test_shape_and_finite_errors():
    tape = T.Tape()
    with pytest.raises(ShapeMismatch):
        T.matmul(tape.const(np.ones((2, 3))), tape.const(np.ones((2, 3))))
    with pytest.raises(ShapeMismatch):
        T.concat_cols(tape.const(np.ones((2, 1))), tape.const(np.ones((3, 1))))
    with pytest.raises(NonFiniteInput):
        tape.param([[np.nan]])
    with pytest.raises(ShapeMismatch):
        tape.backward(tape.param(np.ones((2, 2))))


def test_untracked_parameter():
    t1, t2 = T.Tape(), T.Tape()
    a = t1.param(np.ones((1, 1)))
    stray = t2.param(np.ones((1, 1)))
    loss = T.sum_all(a)
    with pytest.raises(UntrackedParameter):
        t1.gradients(loss, [stray])


# -------------------------------------------------------------- backward pass


def test_grad_of_sum_is_ones():
    _, (g,) = scalar(T.sum_all, np.random.default_rng(1).normal(size=(3, 4)))
    assert np.array_equal(g, np.ones((3, 4)))


def test_grad_of_squared_residual_by_hand():
    W = np.array([[1.0, 2.0], [3.0, -1.0]])
    x = np.array([[0.5], [-2.0]])
    t = np.array([[1.0], [0.0]])

    def build(Wv):
        r = T.sub(T.matmul(Wv, Wv.tape.const(x)), t)
        return T.sum_all(T.mul(r, r))

    _, (g,) = scalar(build, W)
    assert np.allclose(g, 2 * (W @ x - t) @ x.T, atol=1e-12)


PRIMITIVE_CASES = {
    "matmul": (lambda a, b: T.sum_all(T.mul(T.matmul(a, b), T.matmul(a, b))), [(3, 4), (4, 2)]),
    "add_broadcast": (lambda a, b: T.sum_all(T.tanh(T.add(a, b))), [(3, 4), (1, 4)]),
    "mul_broadcast": (lambda a, b: T.sum_all(T.sigmoid(T.mul(a, b))), [(3, 4), (3, 1)]),
    "relu_scale": (lambda a: T.sum_all(T.scale(T.relu(a), 3.0)), [(3, 3)]),
    "leaky": (lambda a: T.sum_all(T.mul(T.leaky_relu(a, 0.2), a)), [(3, 3)]),
    "softmax": (lambda a: T.sum_all(T.mul(T.row_softmax(a), T.row_softmax(a))), [(2, 5)]),
    "l2norm": (lambda a: T.sum_all(T.mul(T.row_l2_normalize(a), a)), [(3, 4)]),
    "concat_slice": (lambda a, b: T.sum_all(T.tanh(T.slice_cols(T.concat_cols(a, b), 1, 5))), [(2, 3), (2, 3)]),
    "rowdot": (lambda a, b: T.sum_all(T.tanh(T.rowdot(a, b))), [(4, 3), (4, 3)]),
    "mse": (lambda a, b: T.mean_squared_l2_loss(a, b), [(3, 4), (3, 4)]),
    "take_row": (lambda a: T.sum_all(T.tanh(T.take_row_as_matrix(a, 1, (2, 3)))), [(3, 6)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients(name):
    build, shapes = PRIMITIVE_CASES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    values = [rng.normal(size=s) for s in shapes]
    _, grads = scalar(build, *values)
    for k in range(len(values)):
        def f(x, k=k):
            vs = list(values)
            vs[k] = x
            return scalar(build, *vs)[0]

        assert relative_error(grads[k], central_difference(f, values[k])) < 1e-6


def test_gather_segment_gradients():
    rng = np.random.default_rng(4)
    idx = np.array([0, 2, 2, 1, 0])
    seg = np.array([0, 0, 1, 2, 2])

    def build(x, s):
        g = T.gather_rows(x, idx)
        w = T.segment_softmax(s, seg, 3)
        return T.sum_all(T.tanh(T.segment_sum(T.mul(g, w), seg, 3)))

    values = [rng.normal(size=(3, 4)), rng.normal(size=(5, 1))]
    _, grads = scalar(build, *values)
    for k in range(2):
        def f(x, k=k):
            vs = list(values)
            vs[k] = x
            return scalar(build, *vs)[0]

        assert relative_error(grads[k], central_difference(f, values[k])) < 1e-6


def test_spmm_gradient():
    A = sp.csr_matrix(np.array([[0.5, 0.5, 0.0], [0.0, 1.0, 0.0], [0.2, 0.0, 0.8]]))
    x0 = np.random.default_rng(5).normal(size=(3, 2))
    build = lambda x: T.sum_all(T.tanh(T.spmm(A, x)))  # noqa: E731
    _, (g,) = scalar(build, x0)
    assert relative_error(g, central_difference(lambda x: scalar(build, x)[0], x0)) < 1e-6


def test_cross_entropy_mask():
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(4, 5))
    labels = np.array([0, 1, 2, 1])
    mask = np.array([True, True, True, False, False])
    build = lambda z: T.cross_entropy_from_logits(z, labels, mask)  # noqa: E731
    val, (g,) = scalar(build, logits)
    # against a direct log-sum-exp over the kept columns
    kept = logits[:, mask]
    want = np.mean(np.log(np.exp(kept).sum(axis=1)) - kept[np.arange(4), labels])
    assert val == pytest.approx(want, abs=1e-12)
    assert (g[:, ~mask] == 0.0).all()
    assert relative_error(g, central_difference(lambda z: scalar(build, z)[0], logits)) < 1e-6
    with pytest.raises(ShapeMismatch):
        T.cross_entropy_from_logits(T.Tape().param(logits), np.array([0, 1, 2, 3]), mask)


# ----------------------------------------------------------------- optimizers


def test_adam_zero_gradient():
    p = [np.array([[1.0, -2.0]])]
    new, state = adam_step(p, [np.zeros((1, 2))], None)
    assert np.array_equal(new[0], p[0])
    assert not state.m[0].any() and not state.v[0].any() and state.step == 1


def test_adam_first_step_closed_form():
    new, _ = adam_step([np.array([[0.0]])], [np.array([[1.0]])], None, lr=1e-3)
    assert new[0][0, 0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def test_adam_constant_gradient_against_scalar_reference():
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    theta, m, v = 0.0, 0.0, 0.0
    params, state = [np.array([[0.0]])], None
    steps = []
    for t in range(1, 6):
        g = 0.7
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        prev = params[0][0, 0]
        params, state = adam_step(params, [np.array([[g]])], state, lr, b1, b2, eps)
        assert params[0][0, 0] == pytest.approx(theta, rel=1e-12)
        steps.append(abs(params[0][0, 0] - prev))
    assert all(a >= b - 1e-15 for a, b in zip(steps, steps[1:]))


def test_sgd_momentum_recurrence():
    p = [np.array([[0.0]])]
    g = [np.array([[1.0]])]
    p1, s1 = sgd_momentum_step(p, g, None, lr=0.1, momentum=0.9)
    assert p1[0][0, 0] == pytest.approx(-0.1)
    p2, s2 = sgd_momentum_step(p1, g, s1, lr=0.1, momentum=0.9)
    assert s2.velocity[0][0, 0] == pytest.approx(1.9)
    assert p2[0][0, 0] - p1[0][0, 0] == pytest.approx(-0.19)


def test_sgd_zero_and_plain():
    p = [np.array([[2.0, 3.0]])]
    assert np.array_equal(sgd_momentum_step(p, [np.zeros((1, 2))], None)[0][0], p[0])
    q, s = p, None
    for _ in range(3):
        q, s = sgd_momentum_step(q, [np.ones((1, 2))], s, lr=0.5, momentum=0.0)
    assert np.allclose(q[0], p[0] - 1.5)


def test_optimizer_shape_checks():
    with pytest.raises(ShapeMismatch):
        adam_step([np.zeros((2, 2))], [np.zeros((2, 1))], None)
    with pytest.raises(ShapeMismatch):
        sgd_momentum_step([np.zeros((2, 2))], [], None)
    with pytest.raises(ValueError):
        Optimizer("rmsprop")


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, (3, 2), elements=st.floats(-1e3, 1e3)),
    arrays(np.float64, (3, 2), elements=st.floats(-1e3, 1e3)),
    st.sampled_from(["adam", "sgd"]),
)
def test_optimizer_preserves_shape_and_finiteness(p, g, kind):
    opt = Optimizer(kind, lr=1e-2)
    params = [p]
    for _ in range(3):
        params = opt.step(params, [g])
    assert params[0].shape == p.shape and np.isfinite(params[0]).all()


# ------------------------------------------------------------------------ rng


def test_glorot_deterministic_and_bounded():
    a = glorot_init(30, 20, seeded_rng(7))
    b = glorot_init(30, 20, seeded_rng(7))
    assert np.array_equal(a, b)
    assert np.abs(a).max() <= np.sqrt(6 / 50)
    assert not np.array_equal(a, glorot_init(30, 20, seeded_rng(8)))


def test_glorot_mean_within_three_sigma():
    rows, cols = 500, 200  # 10^5 draws
    x = glorot_init(rows, cols, seeded_rng(11))
    bound = np.sqrt(6 / (rows + cols))
    sigma = bound / np.sqrt(3) / np.sqrt(x.size)
    assert abs(x.mean()) < 3 * sigma


def test_derive_seed_stable():
    assert derive_seed(3, "a", 1) == derive_seed(3, "a", 1)
    assert derive_seed(3, "a") != derive_seed(3, "b")


# --------------------------------------------------------------- matrix I/O


def test_matrix_round_trip():
    m = np.random.default_rng(9).normal(size=(3, 4))
    text = format_matrix(m)
    assert text.splitlines()[0] == "dims 3 4"
    assert np.array_equal(parse_matrix(text.splitlines()), m)


def test_keyed_round_trip():
    m = np.random.default_rng(10).normal(size=(2, 3))
    names, back = parse_keyed(format_keyed(["a", "b"], m).splitlines())
    assert names == ["a", "b"] and np.array_equal(back, m)


def test_matrix_errors():
    with pytest.raises(DataError):
        parse_matrix(["dims 2 2", "1 2"])
    with pytest.raises(DataError):
        parse_matrix(["rows 1 1", "1"])
    with pytest.raises(ShapeMismatch):
        as_matrix([1.0, 2.0])
    with pytest.raises(NonFiniteInput):
        as_matrix([[np.inf]])


def test_row_normalize_flags_zero_rows():
    out, zero = row_normalize(np.array([[0.0, 2.0], [0.0, 0.0]]))
    assert np.allclose(out, [[0, 1], [0, 0]]) and zero.tolist() == [False, True]
