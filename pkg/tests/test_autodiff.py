import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ritzcad.autodiff import ExprGraph, GraphError, GraphUsageError


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_build_examples():
    g = ExprGraph()
    assert g.value(g.build("add", [g.const(1.0), g.const(2.0)])) == 3.0
    assert g.value(g.build("tanh", [g.const(0.0)])) == 0.0
    x = g.var(3.0)
    assert g.value(g.build("square", [x])) == 9.0


def test_const_and_var_through_build():
    g = ExprGraph()
    x = g.build("var", value=2.0)
    assert x in g.variables
    c = g.build("const", value=5.0)
    assert c not in g.variables
    with pytest.raises(GraphError):
        g.build("const")


@pytest.mark.parametrize("bad", [-1, 7, 2.5, "0"])
def test_invalid_operand_rejected(bad):
    g = ExprGraph()
    g.const(1.0)
    with pytest.raises(GraphError):
        g.build("neg", [bad])


def test_unknown_op_rejected():
    g = ExprGraph()
    with pytest.raises(GraphError):
        g.build("sin", [g.const(0.0)])


def test_operands_precede_consumers():
    g = ExprGraph()
    x = g.var(1.5)
    y = g.build("mul", [x, g.build("tanh", [x])])
    g.grad_nodes(y, [x])
    for i in range(len(g)):
        assert all(a < i for a in g._args[i])


def test_grad_nodes_tanh_at_zero():
    g = ExprGraph()
    x = g.var(0.0)
    (d,) = g.grad_nodes(g.build("tanh", [x]), [x])
    assert g.value(d) == 1.0


@pytest.mark.parametrize("x0", [-2.0, 0.3, 7.0])
def test_second_derivative_of_square(x0):
    g = ExprGraph()
    x = g.var(x0)
    (d1,) = g.grad_nodes(g.build("square", [x]), [x])
    (d2,) = g.grad_nodes(d1, [x])
    assert g.value(d1) == pytest.approx(2 * x0)
    assert g.value(d2) == 2.0


def test_grad_wrt_non_variable_is_usage_error():
    g = ExprGraph()
    c = g.const(1.0)
    y = g.build("square", [c])
    with pytest.raises(GraphUsageError):
        g.grad_nodes(y, [c])
    with pytest.raises(GraphUsageError):
        g.gradients(y, [c])


def test_grad_of_nonscalar_is_usage_error():
    g = ExprGraph()
    x = g.var(np.ones(3))
    with pytest.raises(GraphUsageError):
        g.grad_nodes(g.build("square", [x]), [x])


def _random_expr(g, xs):
    a, b, c = xs
    t = g.build("tanh", [g.build("mul", [a, b])])
    s = g.build("sqrt", [g.build("add", [g.build("square", [c]), g.const(1.0)])])
    q = g.build("div", [g.build("sub", [t, c]), s])
    return g.build("add", [g.build("scale", [q], c=3.0), g.build("neg", [g.build("mul", [a, q])])])


def _eval_expr(v):
    g = ExprGraph()
    xs = [g.var(x) for x in v]
    return float(g.value(_random_expr(g, xs)))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_grad_matches_finite_differences(v):
    g = ExprGraph()
    xs = [g.var(x) for x in v]
    y = _random_expr(g, xs)
    sym = np.array([g.value(n) for n in g.grad_nodes(y, xs)], dtype=float)
    num = np.array([float(x) for x in g.gradients(y, xs)])
    fd = central_diff(lambda z: _eval_expr(z), np.array(v))
    np.testing.assert_allclose(sym, num, rtol=1e-12, atol=1e-14)
    assert np.linalg.norm(sym - fd) <= 1e-6 * max(np.linalg.norm(fd), 1.0)


def test_jvp_product():
    g = ExprGraph()
    x = g.var(np.array([2.0, 3.0]))
    x0 =g.build("dot", [x, g.const([1.0, 0.0])])
    x1 = g.build("dot", [x, g.const([0.0, 1.0])])
    f = g.build("mul", [x0, x1])
    (d,) = g.jvp_nodes([f], [x], [g.const([1.0, 0.0])])
    assert g.value(d) == 3.0


def test_jvp_identity():
    g = ExprGraph()
    x = g.var(np.array([0.4, -1.0]))
    e1 = g.const([1.0, 0.0])
    (d,) = g.jvp_nodes([x], [x], [e1])
    np.testing.assert_array_equal(g.value(d), [1.0, 0.0])


def test_jvp_length_mismatch():
    g = ExprGraph()
    x = g.var(1.0)
    with pytest.raises(GraphUsageError):
        g.jvp_nodes([x], [x], [])


def test_jvp_two_layer_net_matches_fd():
    rng = np.random.default_rng(3)
    W1, W2 = rng.normal(size=(2, 5)), rng.normal(size=(5, 1))
    b1 = rng.normal(size=5)

    def net(g, x):
        h = g.build("tanh", [g.build("add", [g.build("matmul", [x, g.const(W1)]), g.const(b1)])])
        return g.build("sum", [g.build("tanh", [g.build("matmul", [h, g.const(W2)])])])

    p = rng.uniform(size=(1, 2))
    g = ExprGraph()
    x = g.var(p)
    (d,) = g.jvp_nodes([net(g, x)], [x], [g.const([[0.0, 1.0]])])

    def f(z):
        h = ExprGraph()
        return float(h.value(net(h, h.var(z))))

    fd = central_diff(f, p)[0, 1]
    assert abs(g.value(d) - fd) <= 1e-6 * abs(fd)


def test_linearity_of_grad():
    g = ExprGraph()
    x = g.var(0.7)
    f = g.build("tanh", [x])
    h = g.build("square", [g.build("sqrt", [g.build("add", [x, g.const(2.0)])])])
    comb = g.build("add", [g.build("scale", [f], c=2.5), g.build("scale", [h], c=-1.5)])
    (dc,) = g.grad_nodes(comb, [x])
    (df,) = g.grad_nodes(f, [x])
    (dh,) = g.grad_nodes(h, [x])
    assert g.value(dc) == pytest.approx(2.5 * g.value(df) - 1.5 * g.value(dh), rel=1e-14)


def test_grad_of_jvp_consistency_small_net():
    """d/dtheta of sum |grad_x u|^2 via grad_nodes over jvp_nodes vs finite differences."""
    rng = np.random.default_rng(11)
    pts = rng.uniform(-1, 1, size=(6, 2))
    theta0 = rng.normal(size=2 * 6 + 6 + 6)  # W (2x6), b (6), w_out (6): 30 params

    def loss(theta, want_grad=False):
        g = ExprGraph()
        W = g.var(theta[:12].reshape(2, 6))
        b = g.var(theta[12:18])
        w = g.var(theta[18:24].reshape(6, 1))
        x = g.var(pts)
        h = g.build("tanh", [g.build("add", [g.build("matmul", [x, W]), b])])
        u = g.build("reshape", [g.build("matmul", [h, w])], shape=(6,))
        e1, e2 = np.tile([1.0, 0.0], (6, 1)), np.tile([0.0, 1.0], (6, 1))
        (ux,) = g.jvp_nodes([u], [x], [g.const(e1)])
        (uy,) = g.jvp_nodes([u], [x], [g.const(e2)])
        L = g.build("sum", [g.build("add", [g.build("square", [ux]), g.build("square", [uy])])])
        if not want_grad:
            return float(g.value(L))
        grads = g.gradients(L, [W, b, w])
        return np.concatenate([np.ravel(a) for a in grads])

    theta0 = theta0[:24]
    an = loss(theta0, True)
    fd = central_diff(loss, theta0)
    assert np.linalg.norm(an - fd) / np.linalg.norm(fd) <= 1e-5


def test_replay_is_bit_identical():
    g = ExprGraph()
    x = g.var(np.array([0.1, 0.2, 0.3]))
    y = g.build("sum", [g.build("tanh", [g.build("scale", [x], c=4.0)])])
    first = g.value(y).copy()
    g.set_value(x, [1.0, 1.0, 1.0])
    g.recompute()
    assert g.value(y) != first
    g.set_value(x, [0.1, 0.2, 0.3])
    g.recompute([x])
    assert g.value(y).tobytes() == first.tobytes()


def test_set_value_checks():
    g = ExprGraph()
    x = g.var(np.zeros(2))
    c = g.const(1.0)
    with pytest.raises(GraphUsageError):
        g.set_value(c, 2.0)
    with pytest.raises(GraphUsageError):
        g.set_value(x, np.zeros(3))


def test_broadcast_reductions_have_correct_gradients():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 3))
    g = ExprGraph()
    b = g.var(rng.normal(size=3))
    y = g.build("sum", [g.build("square", [g.build("add", [g.const(A), b])])])
    (gb,) = g.gradients(y, [b])
    np.testing.assert_allclose(gb, 2 * (A + g.value(b)).sum(axis=0), rtol=1e-13)
