import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igstab import dynamics as dyn
from igstab.errors import DimensionError, DivergenceError, PreconditionError
from igstab.policies import LinearPolicy, random_mlp, AffinePolicy


def zero_policy(n, d):
    return LinearPolicy(np.zeros((d, n)))


class TestStep:
    def test_zero_fixed_point(self):
        s = dyn.make_p_system(dyn.PSystemSpec(p=1, eta=0.5))
        assert np.array_equal(dyn.step(s, [0.0], [0.0]), [0.0])

    def test_prop6_hand_value(self):
        s = dyn.make_p_system(dyn.PSystemSpec(p=1, eta=0.5))
        assert dyn.step(s, [1.0], [0.0])[0] == pytest.approx(0.75, abs=1e-15)

    def test_experiment_hand_value(self):
        s = dyn.make_p_system(dyn.PSystemSpec(p=2, eta=0.5, variant="experiment", dim=1))
        assert dyn.step(s, [2.0], [0.0])[0] == pytest.approx(2.0 / 3.0, rel=1e-15)

    def test_dimension_mismatch_names_argument(self):
        s = dyn.make_lti(np.eye(2), np.eye(2))
        with pytest.raises(DimensionError) as exc:
            dyn.step(s, [1.0, 2.0], [1.0, 2.0, 3.0])
        assert exc.value.argument == "u"
        with pytest.raises(DimensionError) as exc:
            dyn.step(s, [1.0], [1.0, 2.0])
        assert exc.value.argument == "x"


class TestRolloutClosed:
    def test_zero_policy_zero_ic_all_zero(self):
        s = dyn.make_p_system(dyn.PSystemSpec(p=1, eta=0.5))
        t = dyn.rollout_closed(s, zero_policy(1, 1), [0.0], 5)
        assert np.array_equal(t.states, np.zeros((6, 1)))

    def test_geometric_decay(self):
        s = dyn.make_lti([[0.5]], [[1.0]])
        t = dyn.rollout_closed(s, zero_policy(1, 1), [8.0], 3)
        assert np.array_equal(t.states.ravel(), [8.0, 4.0, 2.0, 1.0])

    def test_expert_closed_loop_matches_reference_recursion(self):
        p, eta, dim = 3.0, 0.5, 4
        h = random_mlp(dim, 8, dim, "tanh", seed=5)
        system = dyn.make_p_system(
            dyn.PSystemSpec(p=p, eta=eta, variant="experiment", dim=dim, h=h)
        )
        expert = AffinePolicy([(-1, h)])
        xi = np.array([0.5, -1.2, 2.0, 0.1])
        t = dyn.rollout_closed(system, expert, xi, 20)
        x = xi.copy()
        for k in range(20):
            x = x - eta * x * np.abs(x) ** p / (1.0 + eta * np.abs(x) ** p)
            assert np.allclose(t.states[k + 1], x, atol=1e-12)

    def test_divergence_carries_first_index(self):
        s = dyn.make_lti([[10.0]], [[1.0]])
        with pytest.raises(DivergenceError) as exc:
            dyn.rollout_closed(s, zero_policy(1, 1), [1.0], 50)
        # 10^t exceeds 1e9 first at t = 10
        assert exc.value.step == 10

    def test_horizon_validation(self):
        s = dyn.make_lti([[0.5]], [[1.0]])
        with pytest.raises(PreconditionError):
            dyn.rollout_closed(s, zero_policy(1, 1), [1.0], 0)


class TestRolloutOpen:
    def test_empty_inputs_single_state(self):
        s = dyn.make_p_system(dyn.PSystemSpec(p=1, eta=0.5))
        t = dyn.rollout_open(s, [3.0], [])
        assert t.horizon == 0
        assert np.array_equal(t.states, [[3.0]])

    def test_prop6_single_input(self):
        s = dyn.make_p_system(dyn.PSystemSpec(p=1, eta=0.5))
        t = dyn.rollout_open(s, [0.0], [[1.0]])
        assert np.array_equal(t.states.ravel(), [0.0, 0.5])

    def test_replay_reproduces_closed_loop_bit_for_bit(self):
        h = random_mlp(3, 6, 3, "tanh", seed=2)
        s = dyn.make_p_system(dyn.PSystemSpec(p=2, eta=0.4, variant="experiment", dim=3, h=h))
        pi = random_mlp(3, 4, 3, "tanh", seed=9)
        closed = dyn.rollout_closed(s, pi, [0.3, -0.7, 1.1], 15)
        opened = dyn.rollout_open(s, closed.initial_condition, closed.inputs)
        assert np.array_equal(closed.states, opened.states)


class TestMakeLti:
    def test_identity_drift(self):
        s = dyn.make_lti(np.eye(3), np.zeros((3, 2)))
        x = np.array([1.0, -2.0, 3.0])
        assert np.array_equal(dyn.step(s, x, np.zeros(2)), x)

    def test_hand_matrix_arithmetic(self):
        s = dyn.make_lti(0.5 * np.eye(2), np.eye(2))
        out = dyn.step(s, [2.0, 4.0], [1.0, 0.0])
        assert np.array_equal(out, [2.0, 2.0])

    def test_spectral_radius_passthrough(self):
        from igstab.linalg import spectral_radius

        rng = np.random.default_rng(0)
        a = rng.standard_normal((5, 5))
        a *= 3.638 / spectral_radius(a)
        s = dyn.make_lti(a, np.zeros((5, 1)))
        jac = np.stack([s.drift(np.eye(5)[i]) for i in range(5)]).T
        assert spectral_radius(jac) == pytest.approx(3.638, rel=1e-6)


class TestMakePSystem:
    def test_prop6_constant_gain(self):
        s = dyn.make_p_system(dyn.PSystemSpec(p=1, eta=0.5))
        for x in ([0.0], [4.2], [-17.0]):
            assert np.array_equal(s.input_gain(np.array(x)), [[0.5]])

    def test_experiment_gain_entry(self):
        s = dyn.make_p_system(dyn.PSystemSpec(p=2, eta=0.5, variant="experiment", dim=2))
        g = s.input_gain(np.array([1.0, 0.0]))
        assert g[0, 0] == pytest.approx(0.5)
        assert g[1, 1] == pytest.approx(1.0)
        assert g[0, 1] == 0.0

    def test_eta_boundary_rejected(self):
        p = 3.0
        with pytest.raises(PreconditionError, match="4/\\(5\\+p\\)"):
            dyn.PSystemSpec(p=p, eta=4.0 / (5.0 + p), variant="prop6")

    def test_prop6_must_be_scalar(self):
        with pytest.raises(PreconditionError):
            dyn.PSystemSpec(p=1, eta=0.5, variant="prop6", dim=3)

    def test_experiment_without_h_is_expert_closed_loop(self):
        p, eta = 2.0, 0.5
        h = random_mlp(3, 5, 3, "tanh", seed=11)
        with_h = dyn.make_p_system(
            dyn.PSystemSpec(p=p, eta=eta, variant="experiment", dim=3, h=h)
        )
        expert = AffinePolicy([(-1, h)])
        reference = dyn.p_system_expert_closed_loop(p, eta, dim=3)
        xi = np.array([0.4, -0.9, 1.6])
        t1 = dyn.rollout_closed(with_h, expert, xi, 12)
        t2 = dyn.rollout_closed(reference, zero_policy(3, 3), xi, 12)
        assert np.allclose(t1.states, t2.states, atol=1e-12)


class TestContractingExamples:
    def test_log_system_fixed_point(self):
        s, metric = dyn.make_contracting_example("log_system")
        assert dyn.step(s, [0.0], [0.0])[0] == 0.0
        assert metric(np.array([0.0]))[0, 0] == pytest.approx(1.0)

    def test_gradient_descent_scalar(self):
        s, metric = dyn.make_contracting_example(
            "gradient_descent", hessian=[[1.0]], eta=0.5
        )
        assert dyn.step(s, [2.0], [0.0])[0] == pytest.approx(1.0)
        assert np.array_equal(metric(np.array([3.0])), np.eye(1))

    def test_gradient_descent_eta_validation(self):
        with pytest.raises(PreconditionError):
            dyn.make_contracting_example("gradient_descent", hessian=[[2.0]], eta=0.6)

    def test_piecewise_linear_requires_common_certificate(self):
        good = dict(
            pieces=[0.5 * np.eye(2), [[0.0, 0.4], [-0.4, 0.0]]],
            selector=lambda x: 0 if x[0] >= 0 else 1,
            b=np.eye(2),
            certificate=np.eye(2),
        )
        system, metric = dyn.make_contracting_example("piecewise_linear", **good)
        assert np.array_equal(metric(np.zeros(2)), np.eye(2))
        assert np.allclose(dyn.step(system, [2.0, 0.0], [0.0, 0.0]), [1.0, 0.0])
        bad = dict(good, pieces=[1.5 * np.eye(2)])
        with pytest.raises(PreconditionError):
            dyn.make_contracting_example("piecewise_linear", **bad)


class TestInvariants:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_replay_identity(self, seed):
        rng = np.random.default_rng(seed)
        s = dyn.make_p_system(dyn.PSystemSpec(p=1.5, eta=0.4))
        inputs = rng.uniform(-1, 1, size=(10, 1))
        t = dyn.rollout_open(s, rng.uniform(-3, 3, 1), inputs)
        r = dyn.replay(s, t)
        assert np.allclose(r.states, t.states, atol=1e-12)

    def test_zero_preservation(self):
        systems = [
            dyn.make_p_system(dyn.PSystemSpec(p=2, eta=0.3)),
            dyn.make_p_system(dyn.PSystemSpec(p=1, eta=0.5, variant="experiment", dim=3)),
            dyn.make_lti(0.9 * np.eye(2), np.ones((2, 1))),
            dyn.make_contracting_example("log_system")[0],
        ]
        for s in systems:
            pi = zero_policy(s.state_dim, s.input_dim)
            t = dyn.rollout_closed(s, pi, np.zeros(s.state_dim), 4)
            assert np.array_equal(t.states, np.zeros((5, s.state_dim)))

    @given(st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_control_affine_linearity(self, alpha, seed):
        rng = np.random.default_rng(seed)
        s = dyn.make_p_system(dyn.PSystemSpec(p=2, eta=0.4, variant="experiment", dim=3))
        x = rng.uniform(-3, 3, 3)
        u1, u2 = rng.uniform(-2, 2, 3), rng.uniform(-2, 2, 3)
        mixed = dyn.step(s, x, alpha * u1 + (1 - alpha) * u2)
        parts = alpha * dyn.step(s, x, u1) + (1 - alpha) * dyn.step(s, x, u2)
        assert np.allclose(mixed, parts, atol=1e-12)

    def test_experiment_decomposition(self):
        p, eta, dim = 2.0, 0.5, 4
        h = random_mlp(dim, 6, dim, "tanh", seed=3)
        s = dyn.make_p_system(dyn.PSystemSpec(p=p, eta=eta, variant="experiment", dim=dim, h=h))
        reference = dyn.p_system_expert_closed_loop(p, eta, dim)
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = rng.uniform(-3, 3, dim)
            v = rng.uniform(-2, 2, dim)
            u = -h(x) + v
            lhs = dyn.step(s, x, u)
            rhs = reference.drift(x) + v / (1.0 + np.abs(x) ** p)
            assert np.allclose(lhs, rhs, atol=1e-12)


class TestBatchRollouts:
    def test_open_matches_serial(self):
        s = dyn.make_p_system(dyn.PSystemSpec(p=1, eta=0.5))
        rng = np.random.default_rng(0)
        xi = rng.uniform(-2, 2, (6, 1))
        u = rng.uniform(-1, 1, (6, 8, 1))
        batch, alive = dyn.batch_rollout_open(s, xi, u)
        assert np.all(alive == 8)
        for i in range(6):
            t = dyn.rollout_open(s, xi[i], u[i])
            assert np.allclose(batch[i], t.states, atol=1e-13)

    def test_closed_matches_serial(self):
        s = dyn.make_lti([[0.8, 0.1], [0.0, 0.7]], np.eye(2))
        pi = random_mlp(2, 4, 2, "tanh", seed=1)
        xi = np.random.default_rng(1).uniform(-2, 2, (5, 2))
        batch, alive = dyn.batch_rollout_closed(s, pi, xi, 7)
        for i in range(5):
            t = dyn.rollout_closed(s, pi, xi[i], 7)
            assert np.allclose(batch[i], t.states, atol=1e-12)

    def test_divergent_rows_freeze(self):
        s = dyn.make_lti([[10.0]], [[1.0]])
        xi = np.array([[1.0], [0.0]])
        states, alive = dyn.batch_rollout_open(s, xi, None, horizon=20)
        assert alive[0] < 20 and alive[1] == 20
        frozen = states[0, alive[0]]
        assert np.all(states[0, alive[0] :] == frozen)


class TestTrajectory:
    def test_invariant_first_state(self):
        with pytest.raises(PreconditionError):
            dyn.Trajectory([1.0], [[2.0], [3.0]], [[0.0]])

    def test_invariant_lengths(self):
        with pytest.raises(PreconditionError):
            dyn.Trajectory([1.0], [[1.0], [2.0], [3.0]], [[0.0]])

    def test_csv_round_trip(self):
        s = dyn.make_lti([[0.9, 0.1], [0.0, 0.8]], np.eye(2))
        pi = random_mlp(2, 3, 2, "tanh", seed=4)
        t = dyn.rollout_closed(s, pi, [1.0, -1.0], 6)
        buf = io.StringIO()
        dyn.write_trajectory_csv(t, buf)
        text = buf.getvalue()
        header, first, *rest, last = text.strip().splitlines()
        assert header == "t,x_0,x_1,u_0,u_1"
        assert last.split(",")[3:] == ["", ""]  # no input at t = T
        back = dyn.read_trajectory_csv(io.StringIO(text))
        assert np.allclose(back.states, t.states, atol=0)
        assert np.allclose(back.inputs, t.inputs, atol=0)
