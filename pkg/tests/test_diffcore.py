import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sacd.diffcore import (
    Adam,
    AdamState,
    DomainError,
    NonFiniteError,
    ShapeError,
    Tape,
    adam_step,
    forward,
    gradient_check,
    he_init,
    log_softmax,
    numerical_gradient,
    softmax,
    value_and_grad,
    zeros_bias,
)


class TestForward:
    def test_matmul_identity(self):
        x = np.arange(12.0).reshape(3, 4)
        out = forward(lambda t, n: t.matmul(t.const(np.eye(3)), n["x"]), {"x": x})
        np.testing.assert_array_equal(out, x)

    def test_softmax_of_zeros_is_uniform(self):
        out = forward(lambda t, n: t.softmax(n["z"]), {"z": np.zeros(3)})
        np.testing.assert_allclose(out, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_relu(self):
        out = forward(lambda t, n: t.relu(n["x"]), {"x": np.array([-1.0, 2.0])})
        np.testing.assert_array_equal(out, [0.0, 2.0])

    def test_shape_mismatch_names_both_shapes(self):
        tape = Tape()
        a, b = tape.const(np.ones((2, 3))), tape.const(np.ones((2, 3)))
        with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
            tape.matmul(a, b)
        with pytest.raises(ShapeError, match="add"):
            tape.add(tape.const(np.ones(3)), tape.const(np.ones(4)))

    def test_log_of_nonpositive_raises(self):
        tape = Tape()
        with pytest.raises(DomainError):
            tape.log(tape.const([1.0, 0.0]))

    def test_add_broadcasts_bias_over_batch(self):
        def graph(t, n):
            return t.sum(t.add(n["x"], n["b"]))

        loss, g = value_and_grad(graph, {"x": np.ones((4, 3)), "b": np.zeros(3)})
        assert loss == 12.0
        np.testing.assert_array_equal(g["b"], [4.0, 4.0, 4.0])

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        x, w = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))

        def graph(t, n):
            return t.mean(t.softmax(t.relu(n["x"] @ n["w"])))

        a = value_and_grad(graph, {"x": x, "w": w})
        b = value_and_grad(graph, {"x": x, "w": w})
        assert a[0] == b[0]
        for k in a[1]:
            assert np.array_equal(a[1][k], b[1][k])

    def test_log_softmax_is_stable(self):
        out = log_softmax(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out[0], 0.0, atol=1e-12)


class TestBackward:
    def test_square(self):
        _, g = value_and_grad(lambda t, n: t.square(n["w"]), {"w": 3.0})
        assert g["w"] == 6.0

    def test_softmax_dot_constant_matches_finite_differences(self):
        c = np.array([0.3, -1.2, 2.0, 0.5])

        def graph(t, n):
            return t.mean(t.mul(t.softmax(n["z"]), t.const(c)))

        _, g = value_and_grad(graph, {"z": np.zeros(4)})
        fd = numerical_gradient(graph, {"z": np.zeros(4)}, 1e-5)
        np.testing.assert_allclose(g["z"], fd["z"], rtol=1e-6, atol=1e-10)

    def test_unused_parameter_gets_exact_zero(self):
        _, g = value_and_grad(lambda t, n: t.sum(n["a"]), {"a": np.ones(3), "p": np.ones((2, 2))})
        assert g["p"].shape == (2, 2)
        assert np.all(g["p"] == 0.0)

    def test_non_scalar_loss_raises(self):
        tape = Tape()
        x = tape.param(np.ones(3), "x")
        with pytest.raises(ShapeError):
            tape.backward(x)

    def test_gather_scatters_into_selected_entries(self):
        x = np.arange(6.0).reshape(3, 2)
        _, g = value_and_grad(lambda t, n: t.sum(t.gather(n["x"], [1, 0, 1])), {"x": x})
        np.testing.assert_array_equal(g["x"], [[0, 1], [1, 0], [0, 1]])

    def test_node_ids_increase(self):
        tape = Tape()
        x = tape.param(np.ones(2), "x")
        y = tape.exp(x) * 2.0 + x
        assert [n.id for n in tape.nodes] == sorted(n.id for n in tape.nodes)
        assert all(p.id < node.id for node in tape.nodes for p in node.inputs)
        assert y.id == len(tape.nodes) - 1


# every op against central differences on random graphs

UNARY = {
    "relu": lambda t, x: t.relu(x),
    "exp": lambda t, x: t.exp(x),
    "log": lambda t, x: t.log(t.add(t.square(x), t.const(0.5))),
    "softmax": lambda t, x: t.softmax(x),
    "log_softmax": lambda t, x: t.log_softmax(x),
    "square": lambda t, x: t.square(x),
    "neg": lambda t, x: t.neg(x),
    "scale": lambda t, x: t.scale(x, -1.7),
    "sum_axis": lambda t, x: t.sum(x, axis=-1, keepdims=True),
    "mean_axis": lambda t, x: t.mean(x, axis=0),
    "gather": lambda t, x: t.gather(x, np.arange(x.shape[0]) % x.shape[1]),
}
BINARY = {
    "add": lambda t, x, y: t.add(x, y),
    "sub": lambda t, x, y: t.sub(x, y),
    "mul": lambda t, x, y: t.mul(x, y),
    "add_bias": lambda t, x, y: t.add(x, t.sum(y, axis=0)),
    "matmul": lambda t, x, y: t.matmul(x, t.matmul(t.const(np.ones((x.shape[1], y.shape[0]))) * 0.3, y)),
}


@settings(max_examples=150, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    rows=st.integers(1, 4),
    cols=st.integers(1, 4),
    op1=st.sampled_from(sorted(UNARY)),
    op2=st.sampled_from(sorted(BINARY)),
)
def test_random_graph_gradients_match_finite_differences(seed, rows, cols, op1, op2):
    rng = np.random.default_rng(seed)
    params = {"x": rng.uniform(-2, 2, size=(rows, cols)), "y": rng.uniform(-2, 2, size=(rows, cols))}
    shape = forward(lambda t, n: UNARY[op1](t, BINARY[op2](t, n["x"], n["y"])), params).shape
    weights = rng.uniform(-2, 2, size=shape)

    def graph(t, n):
        h = UNARY[op1](t, BINARY[op2](t, n["x"], n["y"]))
        return t.sum(t.mul(h, t.const(weights)))

    # relu kinks make finite differences meaningless within eps of zero
    pre = forward(lambda t, n: BINARY[op2](t, n["x"], n["y"]), params)
    if op1 == "relu" and np.min(np.abs(pre)) < 1e-4:
        return
    assert gradient_check(graph, params, eps=1e-5) < 1e-5


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-700, 700), min_size=1, max_size=8))
def test_softmax_entries_in_open_unit_interval(values):
    p = softmax(np.array(values))
    assert abs(p.sum() - 1.0) < 1e-9
    assert np.all(p <= 1.0) and np.all(p >= 0.0)
    if np.ptp(values) < 30:
        assert np.all(p > 0.0) and np.all(p < 1.0) or len(values) == 1


class TestAdam:
    def test_zero_gradient_leaves_param(self):
        p = np.array([1.5, -2.0])
        new, state = adam_step(p, np.zeros(2), AdamState.zeros_like(p), 3e-4)
        np.testing.assert_array_equal(new, p)
        assert state.t == 1

    def test_first_step_moves_by_lr(self):
        # m = 0.1, v = 0.001, both bias-correct to 1: step = lr * 1 / (1 + 1e-8)
        new, _ = adam_step(np.array(1.0), np.array(1.0), AdamState.zeros_like(np.array(1.0)), 3e-4)
        assert new == pytest.approx(1.0 - 3e-4 / (1.0 + 1e-8), abs=1e-15)
        assert new == pytest.approx(0.9997, abs=1e-10)

    def test_deterministic(self):
        p, g = np.array([0.2, 0.4]), np.array([0.7, -0.1])
        s = AdamState.zeros_like(p)
        a = adam_step(p, g, s, 0.01)
        b = adam_step(p, g, s, 0.01)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1].m, b[1].m)

    def test_counter_increments_by_one(self):
        opt = Adam(0.1)
        params = {"w": np.ones(3)}
        for k in range(1, 4):
            opt.step(params, {"w": np.ones(3)})
            assert opt.states["w"].t == k

    def test_non_finite_gradient_names_param(self):
        p = np.ones(2)
        with pytest.raises(NonFiniteError, match="W0"):
            adam_step(p, np.array([np.nan, 0.0]), AdamState.zeros_like(p), 0.1, name="W0")

    def test_state_dict_round_trip(self):
        opt = Adam(0.05)
        params = {"w": np.array([[0.1, 0.2]])}
        opt.step(params, {"w": np.array([[1.0, -3.0]])})
        again = Adam.from_state_dict(opt.state_dict())
        assert again.states["w"].t == 1
        assert np.array_equal(again.states["w"].v, opt.states["w"].v)


class TestHeInit:
    def test_std(self):
        w = he_init((512, 200), np.random.default_rng(0))
        assert abs(w.std() - 0.0625) < 0.05 * 0.0625
        assert abs(w.mean()) < 0.01 * 0.0625 * 10

    def test_seeded(self):
        a = he_init((4, 3), np.random.default_rng(9))
        b = he_init((4, 3), np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_bias_zero(self):
        assert np.all(zeros_bias((7,)) == 0.0)
        assert np.all(zeros_bias((2, 3)) == 0.0)

    def test_zero_fan_in(self):
        with pytest.raises(ShapeError):
            he_init((0, 3), np.random.default_rng(0))


class TestGradientCheck:
    def test_quadratic(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(4, 4))

        def graph(t, n):
            return t.sum(t.square(t.matmul(t.const(A), n["x"])))

        assert gradient_check(graph, {"x": rng.normal(size=(4, 2))}, 1e-5) < 1e-9

    def test_non_finite_loss(self):
        with pytest.raises(NonFiniteError):
            gradient_check(lambda t, n: t.sum(t.scale(n["x"], np.inf)), {"x": np.ones(2)}, 1e-5)
