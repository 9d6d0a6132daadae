import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ndcf import diffcore as dc
from ndcf.diffcore import MLPSpec, Tape, Value

from .oracles import central_diff, rel_err, straight_mlp


def test_square_gradient():
    t = Tape()
    w = t.var(3.0)
    (g,) = dc.grad_params(w * w, [w])
    assert g == pytest.approx(6.0)


def test_sin_gradient_at_zero():
    t = Tape()
    w = t.var(0.0)
    (g,) = dc.grad_params(dc.sin(w), [w])
    assert g == pytest.approx(1.0)


def test_non_scalar_loss_rejected():
    t = Tape()
    w = t.var(np.ones(3))
    with pytest.raises(ValueError, match="scalar"):
        dc.grad_params(w * 2.0, [w])


def test_grad_leaves_tape_rerunnable():
    t = Tape()
    w = t.var(np.array([1.0, -2.0]))
    loss = (dc.sin(w) * w).sum()
    n = len(t)
    g1 = dc.grad_params(loss, [w])[0]
    assert len(t) == n
    g2 = dc.grad_params(loss, [w])[0]
    assert np.array_equal(g1, g2)


def test_zero_weights_give_zero_output():
    spec = MLPSpec((3, 5, 2), hidden="softplus")
    x = np.random.default_rng(0).normal(size=(4, 3))
    out = dc.forward_mlp(np.zeros(spec.n_params), MLPSpec((3, 5, 2), hidden="tanh"), x)
    assert np.array_equal(out.data, np.zeros((4, 2)))


def test_identity_layer():
    spec = MLPSpec((3, 3))
    w = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
    x = np.array([[1.0, -2.0, 0.5]])
    assert np.array_equal(dc.forward_mlp(w, spec, x).data, x)


@pytest.mark.parametrize("hidden,output", [("softplus", "linear"), ("sine", "sigmoid"), ("tanh", "linear")])
def test_forward_matches_straight_line_oracle(hidden, output):
    rng = np.random.default_rng(7)
    spec = MLPSpec((3, 6, 2), hidden=hidden, output=output, w0=3.0)
    w = dc.init_mlp(spec, rng)
    x = rng.normal(size=(5, 3))
    got = dc.forward_mlp(w, spec, x).data
    want = np.array([straight_mlp(w, spec, row) for row in x])
    assert np.allclose(got, want, rtol=0, atol=1e-13)


def test_shape_errors_name_dimensions():
    spec = MLPSpec((3, 4, 1))
    with pytest.raises(ValueError, match=str(spec.n_params)):
        dc.forward_mlp(np.zeros(spec.n_params + 1), spec, np.zeros((2, 3)))
    with pytest.raises(ValueError, match="input dimension 2"):
        dc.forward_mlp(np.zeros(spec.n_params), spec, np.zeros((2, 2)))


def test_mlp_parameter_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    spec = MLPSpec((3, 8, 2), hidden="sine", w0=2.0)
    w0 = dc.init_mlp(spec, rng)
    x = rng.normal(size=(6, 3))

    def f(w):
        t = Tape()
        wv = t.var(w) if not isinstance(w, Value) else w
        out = dc.forward_mlp(wv, spec, x)
        return (out * out).sum(), wv

    loss, wv = f(w0)
    g = dc.grad_params(loss, [wv])[0]
    fd = central_diff(lambda w: float(f(w)[0].data), w0)
    assert rel_err(g, fd) < 1e-6


def test_grad_input_linear_map():
    a = np.array([[0.5], [-1.0], [2.0]])
    t = Tape()
    q = t.var(np.random.default_rng(0).normal(size=(7, 3)))
    out = dc.matmul(q, a).sum()
    g = dc.grad_input(out, q)
    assert np.allclose(g.data, np.tile(a.T, (7, 1)))


def test_grad_input_requires_ancestor():
    t = Tape()
    q = t.var(np.ones((2, 3)))
    other = t.var(np.ones(3))
    with pytest.raises(ValueError, match="ancestor"):
        dc.grad_input((other * other).sum(), q)


def test_nested_gradient_matches_finite_differences():
    """d/dw of a loss built on d(net)/dq."""
    rng = np.random.default_rng(3)
    spec = MLPSpec((3, 8, 1), hidden="sine", w0=2.0)
    w0 = dc.init_mlp(spec, rng)
    q0 = rng.normal(size=(5, 3))
    n = rng.normal(size=(5, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)

    def loss_of(w):
        t = Tape()
        wv = t.var(w)
        q = t.var(q0)
        s = dc.forward_mlp(wv, spec, q)
        g = dc.grad_input(s.sum(), q)
        return (1.0 - (g * n).sum(axis=1)).mean(), wv

    loss, wv = loss_of(w0)
    g = dc.grad_params(loss, [wv])[0]
    fd = central_diff(lambda w: float(loss_of(w)[0].data), w0)
    assert rel_err(g, fd) < 1e-5


def test_second_derivative_of_sine():
    t = Tape()
    x = t.var(0.7)
    (g,) = dc.grad(dc.sin(x), [x], create_graph=True)
    (h,) = dc.grad(g, [x])
    assert h.data == pytest.approx(-np.sin(0.7))


@pytest.mark.parametrize("op", ["exp", "log", "sigmoid", "softplus", "tanh", "sqrt", "abs", "div", "pow"])
def test_primitive_gradients(op):
    rng = np.random.default_rng(5)
    x0 = rng.uniform(0.3, 2.0, size=(3, 4))
    y0 = rng.uniform(0.5, 1.5, size=(4,))

    def f(x, y):
        fn = {"exp": lambda: dc.exp(x), "log": lambda: dc.log(x), "sigmoid": lambda: dc.sigmoid(x),
              "softplus": lambda: dc.softplus(x), "tanh": lambda: dc.tanh(x),
              "sqrt": lambda: dc.sqrt(x), "abs": lambda: dc.vabs(x - 1.0),
              "div": lambda: x / y, "pow": lambda: x ** 3}[op]
        return (fn() * fn()).sum()

    def run(x, y):
        t = Tape()
        xv, yv = t.var(x), t.var(y)
        return f(xv, yv), xv, yv

    loss, xv, yv = run(x0, y0)
    gx, gy = dc.grad_params(loss, [xv, yv])
    assert rel_err(gx, central_diff(lambda x: float(run(x, y0)[0].data), x0)) < 1e-6
    if op == "div":
        assert rel_err(gy, central_diff(lambda y: float(run(x0, y)[0].data), y0)) < 1e-6


def test_broadcast_and_indexing_gradients():
    rng = np.random.default_rng(6)
    a0 = rng.normal(size=(4, 3))
    b0 = rng.normal(size=(3,))
    idx = np.array([0, 2, 2, 3])

    def run(a, b):
        t = Tape()
        av, bv = t.var(a), t.var(b)
        c = dc.concatenate([dc.getitem(av + bv, idx), av.T.reshape(4, 3)], axis=0)
        return (c * c).mean(), av, bv

    loss, av, bv = run(a0, b0)
    ga, gb = dc.grad_params(loss, [av, bv])
    assert rel_err(ga, central_diff(lambda a: float(run(a, b0)[0].data), a0)) < 1e-6
    assert rel_err(gb, central_diff(lambda b: float(run(a0, b)[0].data), b0)) < 1e-6


def test_unused_parameter_gets_zero_gradient():
    t = Tape()
    a, b = t.var(2.0), t.var(np.ones(3))
    ga, gb = dc.grad_params(a * a, [a, b])
    assert ga == 4.0 and np.array_equal(gb, np.zeros(3))


def test_no_recording_outside_tape():
    x = Value(np.ones(3))
    y = dc.sin(x) * 2.0
    assert y.tape is None and not y.requires_grad


def test_forward_backward_bit_deterministic():
    def run():
        rng = np.random.default_rng(11)
        spec = MLPSpec((3, 16, 1), hidden="sine")
        t = Tape()
        w = t.var(dc.init_mlp(spec, rng))
        q = t.var(rng.normal(size=(50, 3)))
        s = dc.forward_mlp(w, spec, q)
        g = dc.grad_input(s.sum(), q)
        loss = (g * g).sum() + s.mean()
        return loss.data.tobytes(), dc.grad_params(loss, [w])[0].tobytes()

    assert run() == run()


# ---------------------------------------------------------------- Adam


def test_adam_zero_gradient_keeps_params():
    st_ = dc.OptimizerState(lr=0.1)
    p = {"w": np.array([1.0, 2.0])}
    new, st_ = dc.adam_step(p, {"w": np.zeros(2)}, st_)
    assert np.array_equal(new["w"], p["w"]) and st_.step == 1


def test_adam_first_step_is_lr_per_coordinate():
    st_ = dc.OptimizerState(lr=0.01)
    g = np.array([3.0, -0.2, 1e-3])
    new, _ = dc.adam_step({"w": np.zeros(3)}, {"w": g}, st_)
    expected = -0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(new["w"], expected, rtol=1e-12, atol=0)


def test_adam_solves_quadratic():
    st_ = dc.OptimizerState(lr=0.1)
    w = {"w": np.array(0.0)}
    for _ in range(500):
        w, st_ = dc.adam_step(w, {"w": 2 * (w["w"] - 5.0)}, st_)
    assert abs(w["w"] - 5.0) < 1e-3


def test_adam_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        dc.adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, dc.OptimizerState(lr=0.1))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.floats(1e-4, 1.0))
def test_adam_step_counter_strictly_increases(n, lr):
    s = dc.OptimizerState(lr=lr)
    steps = []
    for _ in range(n):
        dc.adam_step({"w": np.ones(2)}, {"w": np.ones(2)}, s)
        steps.append(s.step)
    assert steps == list(range(1, n + 1))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_small_net_gradients_property(seed):
    rng = np.random.default_rng(seed)
    spec = MLPSpec((2, 4, 1), hidden="softplus")
    w0 = dc.init_mlp(spec, rng)
    x = rng.normal(size=(3, 2))

    def run(w):
        t = Tape()
        wv = t.var(w)
        return dc.forward_mlp(wv, spec, x).sum(), wv

    loss, wv = run(w0)
    g = dc.grad_params(loss, [wv])[0]
    assert rel_err(g, central_diff(lambda w: float(run(w)[0].data), w0)) < 1e-6
