import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from polargraph import numcore as nc
from polargraph.numcore import DimensionError, DomainError, EvaluationError, Parameter, Tensor

SEEDS = range(20)
small = st.floats(-1.0, 1.0, allow_nan=False)


def _param(rng, shape, name="p", scale=1.0):
    return Parameter(rng.uniform(-scale, scale, shape), name)


# -- matmul ------------------------------------------------------------------

def test_matmul_identity():
    out = nc.matmul(np.eye(2), [[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_zero_annihilator():
    np.testing.assert_array_equal(nc.matmul([[1.0, 2.0]], [[0.0], [0.0]]).data, [[0.0]])


def test_matmul_by_hand():
    np.testing.assert_array_equal(nc.matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0], [6.0]]).data, [[17.0], [39.0]])


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        nc.matmul(np.ones((2, 3)), np.ones((2, 2)))


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31))
def test_matmul_associative(m, k, l, n, seed):
    r = np.random.default_rng(seed)
    a, b, c = r.uniform(-1, 1, (m, k)), r.uniform(-1, 1, (k, l)), r.uniform(-1, 1, (l, n))
    left = nc.matmul(nc.matmul(a, b), c).data
    right = nc.matmul(a, nc.matmul(b, c)).data
    assert np.max(np.abs(left - right)) <= 1e-10


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul_gradients(seed):
    r = np.random.default_rng(seed)
    a, b = _param(r, (3, 4), "a"), _param(r, (4, 2), "b")
    assert nc.finite_diff_check(lambda: (nc.matmul(a, b) ** 2).sum(), [a, b]).passed


@pytest.mark.parametrize("seed", range(5))
def test_batched_matmul_gradients(seed):
    r = np.random.default_rng(seed)
    a, b = _param(r, (2, 3, 3, 4), "a"), _param(r, (4, 2), "b")
    c = _param(r, (3, 4, 5), "c")
    assert nc.finite_diff_check(lambda: ((a @ b) ** 2).sum() + (nc.matmul(a[0], nc.tanh(b)) ** 2).sum(),
                                [a, b]).passed
    assert nc.finite_diff_check(lambda: (b.T @ c).sum(), [b, c]).passed


# -- elementwise ---------------------------------------------------------------

def test_elementwise_examples():
    assert nc.elementwise("tanh", 0.0).item() == 0.0
    assert nc.elementwise("sigmoid", 0.0).item() == 0.5
    assert nc.elementwise("relu", -3.0).item() == 0.0
    assert nc.elementwise("relu", 2.0).item() == 2.0
    assert nc.elementwise("add", [1.0, 2.0], 1.0).data.tolist() == [2.0, 3.0]


def test_relu_subgradient_at_zero_is_zero():
    p = Parameter(np.array([0.0, 1.0, -1.0]), "p")
    nc.relu(p).sum().backward()
    np.testing.assert_array_equal(p.grad, [0.0, 1.0, 0.0])


def test_log_domain_error():
    with pytest.raises(DomainError):
        nc.log([1.0, 0.0])
    with pytest.raises(DomainError):
        nc.elementwise("log", -1.0)


def test_unknown_op_and_bad_broadcast():
    with pytest.raises(ValueError):
        nc.elementwise("cosh", 1.0)
    with pytest.raises(DimensionError):
        nc.add(np.ones((2, 3)), np.ones((3, 2)))


def test_sigmoid_stable_at_extremes():
    out = nc.sigmoid([-1000.0, 1000.0]).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, 1.0])


@pytest.mark.parametrize("op", ["tanh", "sigmoid", "exp", "neg", "relu"])
@pytest.mark.parametrize("seed", SEEDS)
def test_unary_gradients(op, seed):
    r = np.random.default_rng(seed)
    p = _param(r, (3, 2))
    if op == "relu":
        p.data[np.abs(p.data) < 1e-3] = 0.5  # keep clear of the kink
    assert nc.finite_diff_check(lambda: (nc.elementwise(op, p) * p).sum(), [p]).passed


@pytest.mark.parametrize("seed", SEEDS)
def test_binary_and_misc_gradients(seed):
    r = np.random.default_rng(seed)
    a, b = _param(r, (3, 4), "a"), _param(r, (4,), "b")
    pos = Parameter(r.uniform(0.5, 1.5, (3, 4)), "pos")

    def loss():
        out = nc.mul(nc.sub(a, b), nc.add(a, b)).sum()
        out = out + nc.log(pos).sum() + nc.sqrt(pos).sum() + nc.div(a, pos).sum()
        out = out + nc.softplus(a).mean() + nc.leaky_relu(a * 3.0, 0.2).sum()
        out = out + nc.log_softmax(a, axis=-1)[:, 1].sum() + nc.logsumexp(a, axis=0).sum()
        return out + nc.stack([a, pos], axis=0).swapaxes(0, 2).reshape(-1)[::3].sum() + (a ** 3.0).sum()

    assert nc.finite_diff_check(loss, [a, b, pos]).passed


# -- matrix exponential trace ------------------------------------------------------

def test_matrix_exp_trace_zero():
    assert nc.matrix_exp_trace(np.zeros((3, 3))).item() == 3.0


@given(arrays(np.float64, (4, 4), elements=st.floats(-5, 5, allow_nan=False)))
def test_matrix_exp_trace_nilpotent(m):
    assert abs(nc.matrix_exp_trace(np.triu(m, k=1)).item() - 4.0) <= 1e-9


def test_matrix_exp_trace_two_cycle():
    assert abs(nc.matrix_exp_trace([[0.0, 1.0], [1.0, 0.0]]).item() - 2 * math.cosh(1.0)) <= 1e-12


@given(st.floats(0.01, 3.0), st.floats(0.01, 3.0))
def test_matrix_exp_trace_two_cycle_closed_form(p, q):
    got = nc.matrix_exp_trace([[0.0, p], [q, 0.0]]).item()
    assert got == pytest.approx(2 * math.cosh(math.sqrt(p * q)), rel=1e-12)


@given(st.integers(0, 2 ** 31), st.integers(1, 4), st.integers(1, 4))
def test_matrix_exp_trace_block_diagonal(seed, n1, n2):
    r = np.random.default_rng(seed)
    a, b = r.uniform(-1, 1, (n1, n1)), r.uniform(-1, 1, (n2, n2))
    block = np.zeros((n1 + n2, n1 + n2))
    block[:n1, :n1], block[n1:, n1:] = a, b
    whole = nc.matrix_exp_trace(block).item()
    assert abs(whole - nc.matrix_exp_trace(a).item() - nc.matrix_exp_trace(b).item()) <= 1e-9


def test_matrix_exp_trace_batched_matches_loop(rng):
    ms = rng.uniform(-1, 1, (5, 3, 3))
    batched = nc.matrix_exp_trace(ms).data
    np.testing.assert_allclose(batched, [nc.matrix_exp_trace(m).item() for m in ms], atol=1e-12)


def test_matrix_exp_trace_matches_eigen(rng):
    m = rng.uniform(-1, 1, (5, 5))
    ref = np.sum(np.exp(np.linalg.eigvals(m))).real
    assert nc.matrix_exp_trace(m).item() == pytest.approx(ref, rel=1e-11)


def test_matrix_exp_trace_non_square():
    with pytest.raises(DimensionError):
        nc.matrix_exp_trace(np.zeros((2, 3)))


@pytest.mark.parametrize("seed", SEEDS)
def test_matrix_exp_trace_gradient(seed):
    e = _param(np.random.default_rng(seed), (4, 4), "e")
    assert nc.finite_diff_check(lambda: nc.matrix_exp_trace(e * e), [e]).passed


# -- finite-difference checker -------------------------------------------------------

def test_finite_diff_polynomial():
    x = Parameter(np.array([1.0, 2.0]), "x")
    rep = nc.finite_diff_check(lambda: (x * x).sum(), [x])
    np.testing.assert_allclose(x.grad, [2.0, 4.0])
    assert rep.passed and set(rep.max_rel_error) == {"x"}


def test_finite_diff_temperature_tanh():
    t = Parameter(np.array(0.0), "T")
    assert nc.finite_diff_check(lambda: nc.tanh(nc.exp(t) * 0.5), [t]).passed


def test_finite_diff_detects_wrong_gradient():
    x = Parameter(np.array([0.3, -0.7]), "x")

    def broken():
        return nc._make(np.sum(x.data ** 2), (x,), lambda g: ((x, g * x.data),))

    assert not nc.finite_diff_check(broken, [x]).passed


def test_finite_diff_non_finite_loss():
    x = Parameter(np.array([1.0]), "x")
    with pytest.raises(EvaluationError):
        nc.finite_diff_check(lambda: x * np.inf, [x])


# -- tensor and parameter contracts -------------------------------------------------------

def test_parameter_gradient_reset_and_shape():
    p = Parameter(np.ones((2, 3)), "w")
    p.zero_grad()
    assert p.grad.shape == p.shape and not p.grad.any()
    (p * 2.0).sum().backward()
    assert p.grad.shape == p.shape
    p.zero_grad()
    assert not p.grad.any()


def test_gradients_accumulate_across_uses():
    p = Parameter(np.array([1.0, 2.0]), "p")
    p.zero_grad()
    (p * p + p * 3.0).sum().backward()
    np.testing.assert_allclose(p.grad, 2 * p.data + 3.0)


def test_no_grad_records_nothing():
    p = Parameter(np.array([1.0]), "p")
    with nc.no_grad():
        out = nc.tanh(p) * 2.0
    assert not out.requires_grad


def test_broadcast_gradient_unbroadcasts():
    p = Parameter(np.array([1.0, 2.0, 3.0]), "b")
    p.zero_grad()
    (Tensor(np.ones((4, 3))) + p).sum().backward()
    np.testing.assert_array_equal(p.grad, [4.0, 4.0, 4.0])


def test_backward_requires_scalar():
    p = Parameter(np.ones(2), "p")
    with pytest.raises(DimensionError):
        (p * 2.0).backward()


def test_deep_chain_does_not_recurse():
    p = Parameter(np.array(0.5), "p")
    p.zero_grad()
    out = p
    for _ in range(5000):
        out = out * 1.0
    out.backward()
    assert p.grad == 1.0


@given(arrays(np.float64, (3, 3), elements=small))
def test_values_stay_finite(x):
    out = nc.softplus(nc.sigmoid(x) * nc.tanh(x)) + nc.exp(x)
    assert np.all(np.isfinite(out.data))


def test_glorot_bounds(rng):
    w = nc.glorot(rng, (30, 10))
    assert np.all(np.abs(w) <= math.sqrt(6 / 40))
