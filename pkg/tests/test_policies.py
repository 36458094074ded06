import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igstab import policies as pol
from igstab.errors import DimensionError, PreconditionError


class TestEvaluate:
    def test_zero_at_origin(self):
        candidates = [
            pol.random_mlp(3, 8, 2, "tanh", seed=0),
            pol.random_mlp(3, 8, 2, "relu", seed=1),
            pol.LinearPolicy(np.ones((2, 3))),
        ]
        candidates.append(pol.AffinePolicy([(0.3, candidates[0]), (-1.7, candidates[1])]))
        for pi in candidates:
            assert np.array_equal(pi(np.zeros(3)), np.zeros(2))

    def test_linear_dot_product(self):
        pi = pol.LinearPolicy([[1.0, 2.0]])
        assert pi(np.array([3.0, 4.0]))[0] == 11.0

    def test_equal_halves_affine(self):
        base = pol.random_mlp(2, 4, 2, seed=3)
        combo = pol.AffinePolicy([(0.5, base), (0.5, base)])
        x = np.array([0.7, -0.2])
        assert np.array_equal(combo(x), base(x))

    def test_dim_mismatch(self):
        pi = pol.LinearPolicy([[1.0, 2.0]])
        with pytest.raises(DimensionError):
            pi(np.array([1.0, 2.0, 3.0]))

    def test_batched_evaluation(self):
        pi = pol.random_mlp(3, 5, 2, seed=6)
        xs = np.random.default_rng(0).uniform(-1, 1, (10, 3))
        batch = pi(xs)
        rows = np.stack([pi(x) for x in xs])
        assert np.allclose(batch, rows, atol=1e-15)


class TestMix:
    def test_alpha_one_is_second_policy(self):
        p1 = pol.random_mlp(2, 3, 1, seed=0)
        p2 = pol.random_mlp(2, 3, 1, seed=1)
        assert pol.mix(p1, p2, 1.0) is p2

    def test_self_mix_is_identity(self):
        p = pol.random_mlp(2, 3, 1, seed=0)
        assert pol.mix(p, p, 0.3) is p

    def test_nested_flattening_weights(self):
        a, b, c = (pol.random_mlp(2, 3, 1, seed=s) for s in (0, 1, 2))
        nested = pol.mix(pol.mix(a, b, 0.5), c, 0.5)
        weights = {id(base): w for w, base in nested.terms}
        assert weights[id(a)] == Fraction(1, 4)
        assert weights[id(b)] == Fraction(1, 4)
        assert weights[id(c)] == Fraction(1, 2)

    def test_alpha_range(self):
        p = pol.random_mlp(2, 3, 1, seed=0)
        with pytest.raises(PreconditionError):
            pol.mix(p, p, 0.0)
        with pytest.raises(PreconditionError):
            pol.mix(p, p, 1.2)


class TestDemixFinal:
    def test_fixed_point_same_policy(self):
        p = pol.random_mlp(2, 3, 1, seed=0)
        assert pol.demix_final(p, p, p, 0.3, 7) is p

    def test_alpha_one_single_epoch_returns_learned(self):
        prev, hat, star = (pol.random_mlp(2, 3, 1, seed=s) for s in (0, 1, 2))
        assert pol.demix_final(prev, hat, star, 1.0, 1) is hat

    def test_weights_sum_to_one_exactly(self):
        prev, hat, star = (pol.random_mlp(2, 3, 1, seed=s) for s in (0, 1, 2))
        out = pol.demix_final(prev, hat, star, 0.15, 25)
        assert out.weight_sum() == 1

    def test_feasibility_construction_recovers_previous_policy(self):
        # Plugging pi_tilde = (r/alpha) pi_star + (1 - r/alpha) pi_prev with
        # r = (1-alpha)^E as the learned policy de-mixes exactly to pi_prev.
        alpha, epochs = 0.3, 6
        a = Fraction(alpha)
        star = pol.random_mlp(2, 3, 1, seed=0)
        inner = pol.random_mlp(2, 3, 1, seed=1)
        prev = pol.AffinePolicy([((1 - a) ** 3, star), (1 - (1 - a) ** 3, inner)])
        r = (1 - a) ** epochs
        tilde = pol.AffinePolicy([(r / a, star), (1 - r / a, prev)])
        out = pol.demix_final(prev, tilde, star, alpha, epochs)
        assert out == prev

    def test_alpha_zero_rejected(self):
        p = pol.random_mlp(2, 3, 1, seed=0)
        with pytest.raises(PreconditionError):
            pol.demix_final(p, p, p, 0.0, 3)


class TestRandomMlp:
    def test_seed_determinism(self):
        a = pol.random_mlp(4, 8, 3, "tanh", seed=42)
        b = pol.random_mlp(4, 8, 3, "tanh", seed=42)
        assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)

    def test_distinct_seeds_differ(self):
        a = pol.random_mlp(4, 8, 3, seed=1)
        b = pol.random_mlp(4, 8, 3, seed=2)
        assert not np.array_equal(a.w1, b.w1)

    def test_zero_at_origin(self):
        assert np.array_equal(pol.random_mlp(5, 7, 2, seed=0)(np.zeros(5)), np.zeros(2))

    def test_parameter_count(self):
        p = pol.random_mlp(4, 8, 3, seed=0)
        assert p.num_params == 8 * (4 + 3)


class TestGradWrtParams:
    def test_zero_upstream(self):
        p = pol.random_mlp(3, 5, 2, seed=0)
        g = pol.grad_wrt_params(p, np.ones(3), np.zeros(2))
        assert np.array_equal(g, np.zeros(p.num_params))

    def test_degenerate_linear_layer(self):
        # Identity activation with unit second layer: d(u . W1 x)/dW1 = u x'.
        n = 3
        w1 = np.random.default_rng(0).standard_normal((n, n))
        p = pol.MlpPolicy(w1, np.eye(n), "identity")
        x = np.array([0.5, -1.0, 2.0])
        u = np.array([1.0, 2.0, -0.5])
        g = pol.grad_wrt_params(p, x, u)
        dw1 = g[: n * n].reshape(n, n)
        assert np.allclose(dw1, np.outer(u, x), atol=1e-14)

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_difference_agreement(self, seed):
        rng = np.random.default_rng(seed)
        p = pol.random_mlp(3, 6, 2, "tanh", seed=seed)
        x = rng.uniform(-2, 2, 3)
        u = rng.uniform(-1, 1, 2)
        analytic = pol.grad_wrt_params(p, x, u)
        theta = p.params()
        fd = np.zeros_like(theta)
        eps = 1e-6
        for i in range(theta.size):
            plus, minus = theta.copy(), theta.copy()
            plus[i] += eps
            minus[i] -= eps
            fd[i] = (u @ p.with_params(plus)(x) - u @ p.with_params(minus)(x)) / (2 * eps)
        assert np.linalg.norm(analytic - fd) / np.linalg.norm(fd) < 1e-4


class TestInvariants:
    @given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.95))
    @settings(max_examples=25, deadline=None)
    def test_delta_linearity(self, seed, alpha):
        rng = np.random.default_rng(seed)
        p1 = pol.random_mlp(3, 4, 2, seed=seed)
        p2 = pol.random_mlp(3, 4, 2, seed=seed + 1)
        star = pol.random_mlp(3, 4, 2, seed=seed + 2)
        mixed = pol.mix(p1, p2, alpha)
        x = rng.uniform(-2, 2, 3)
        lhs = mixed(x) - star(x)
        rhs = (1 - alpha) * (p1(x) - star(x)) + alpha * (p2(x) - star(x))
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_flattening_preserves_evaluation(self):
        a, b, c = (pol.random_mlp(2, 3, 2, seed=s) for s in (0, 1, 2))
        nested = pol.AffinePolicy([(0.4, pol.AffinePolicy([(0.5, a), (0.5, b)])), (0.6, c)])
        xs = np.random.default_rng(3).uniform(-2, 2, (20, 2))
        manual = 0.4 * (0.5 * a(xs) + 0.5 * b(xs)) + 0.6 * c(xs)
        assert np.allclose(nested(xs), manual, atol=1e-15)

    def test_parameter_round_trip(self):
        p = pol.random_mlp(4, 6, 3, seed=0)
        q = p.with_params(p.params())
        assert np.array_equal(p.params(), q.params())
        assert p == q

    def test_projection(self):
        p = pol.random_mlp(4, 6, 3, seed=0)
        radius = 0.5 * np.linalg.norm(p.params())
        q = p.project(radius)
        assert np.linalg.norm(q.params()) == pytest.approx(radius)
        assert p.project(1e9) is p


class TestSerialization:
    def test_mlp_round_trip_bit_exact(self):
        p = pol.random_mlp(3, 5, 2, "relu", seed=7)
        data = json.loads(json.dumps(pol.to_json_dict(p)))
        q = pol.from_json_dict(data)
        assert q == p

    def test_linear_round_trip(self):
        p = pol.LinearPolicy(np.random.default_rng(0).standard_normal((2, 4)))
        q = pol.from_json_dict(json.loads(json.dumps(pol.to_json_dict(p))))
        assert q == p

    def test_affine_round_trip_exact_weights(self):
        a = pol.random_mlp(2, 3, 2, seed=0)
        b = pol.LinearPolicy(np.eye(2))
        combo = pol.AffinePolicy([(Fraction(1, 3), a), (Fraction(-7, 5), b)])
        q = pol.from_json_dict(json.loads(json.dumps(pol.to_json_dict(combo))))
        assert q == combo
        assert [w for w, _ in q.terms] == [Fraction(1, 3), Fraction(-7, 5)]

    def test_file_round_trip(self, tmp_path):
        p = pol.random_mlp(3, 4, 1, seed=1)
        path = tmp_path / "policy.json"
        pol.save_policy(p, path)
        assert pol.load_policy(path) == p
