"""Incremental-gain-stability parameters, certificate checks, and closed-form
trajectory/discrepancy bounds.

The gain-stability inequality quantifies over all horizons, initial conditions
and input signals, so it cannot be verified exhaustively; every ``check_*``
operation here is a sampled falsification test with an explicit sample count
and tolerance, reporting the worst residual together with the witness that
achieved it.  Samplers are seeded streams, so checks are reproducible and safe
to evaluate in parallel (the merge is a max over residuals and a sum over
violation counts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

from . import dynamics as dyn
from .errors import DimensionError, PreconditionError
from .linalg import require_square, solve_discrete_lyapunov, spectral_radius, symmetrize

#: "holds" means a residual no larger than this, unless a caller overrides it;
#: accumulation over horizons up to ~1e3 steps motivates the margin.
DEFAULT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class IgsParams:
    """Gain-stability tuple ``(a, a0, a1, b0, b1, zeta, gamma)``.

    The exponents live in [1, inf) with ``a0 <= a1`` and ``b0 <= b1``.  The
    definition requires positive ``zeta``/``gamma``; zero is accepted here so
    falsification tests can express vacuous bounds that must be rejected.
    """

    a: float
    a0: float
    a1: float
    b0: float
    b1: float
    zeta: float
    gamma: float

    def __post_init__(self):
        for name in ("a", "a0", "a1", "b0", "b1"):
            if getattr(self, name) < 1.0:
                raise PreconditionError(f"exponent {name} must be >= 1")
        if self.a0 > self.a1:
            raise PreconditionError("a0 must not exceed a1")
        if self.b0 > self.b1:
            raise PreconditionError("b0 must not exceed b1")
        if self.zeta < 0 or self.gamma < 0:
            raise PreconditionError("zeta and gamma must be nonnegative")

    @property
    def lo(self) -> float:
        """min(a, a0) — the small-signal exponent."""
        return min(self.a, self.a0)

    @property
    def hi(self) -> float:
        """max(a, a1) — the large-signal exponent."""
        return max(self.a, self.a1)

    def satisfies_restricted_form(self) -> bool:
        """The restricted parameter form the learning analysis assumes:
        ``a == a0``, ``b0 == b1``, ``zeta >= 1``, ``gamma >= 1``, ``a >= b0``."""
        return (
            self.a == self.a0
            and self.b0 == self.b1
            and self.zeta >= 1.0
            and self.gamma >= 1.0
            and self.a >= self.b0
        )


@dataclass(frozen=True)
class IncLyapunov:
    """Incremental Lyapunov certificate.

    ``V(x, y)`` is sandwiched between ``alpha_lo ||x-y||^a`` and
    ``alpha_hi ||x-y||^a`` and must decay by ``frak_a min(||x-y||^a0,
    ||x-y||^a1)`` per step, up to ``frak_b max(||u||^b0, ||u||^b1)`` of input
    leakage.  ``V`` must accept stacked inputs of shape (..., n) and return
    shape (...,).
    """

    v: Callable[[np.ndarray, np.ndarray], np.ndarray]
    a: float
    alpha_lo: float
    alpha_hi: float
    frak_a: float
    frak_b: float
    a0: float
    a1: float
    b0: float = 1.0
    b1: float = 1.0
    #: For quadratic certificates, the matrix X with V(x, y) = (x-y)' X (x-y);
    #: lets consumers differentiate V analytically.
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.a < 1:
            raise PreconditionError("exponent a must be >= 1")
        if not 0 < self.alpha_lo <= self.alpha_hi:
            raise PreconditionError("need 0 < alpha_lo <= alpha_hi")
        if self.frak_a <= 0:
            raise PreconditionError("decrement rate frak_a must be positive")
        if self.frak_b < 0:
            raise PreconditionError("input coefficient frak_b must be >= 0")
        if self.a0 > self.a1 or self.b0 > self.b1:
            raise PreconditionError("need a0 <= a1 and b0 <= b1")


@dataclass(frozen=True)
class CertificationReport:
    """Outcome of a sampled falsification test."""

    samples_drawn: int
    violations: int
    worst_residual: float
    worst_witness: Optional[dict] = None
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_json_dict(self) -> dict:
        def _clean(value):
            if isinstance(value, np.ndarray):
                return value.tolist()
            if isinstance(value, (np.floating, np.integer)):
                return value.item()
            if isinstance(value, dict):
                return {k: _clean(v) for k, v in value.items()}
            if isinstance(value, (list, tuple)):
                return [_clean(v) for v in value]
            return value

        return {
            "samples": self.samples_drawn,
            "violations": self.violations,
            "worst_residual": self.worst_residual,
            "witness": _clean(self.worst_witness),
        }


# ---------------------------------------------------------------------------
# Trajectory functionals


def discrepancy_sum(t1: dyn.Trajectory, t2: dyn.Trajectory) -> float:
    """Summed state distance ``sum_t ||x1_t - x2_t||_2`` over a shared horizon."""
    if t1.horizon != t2.horizon:
        raise PreconditionError(
            f"horizon mismatch: {t1.horizon} vs {t2.horizon}"
        )
    if t1.state_dim != t2.state_dim:
        raise DimensionError("t2", (t1.state_dim,), (t2.state_dim,))
    return float(np.sum(np.linalg.norm(t1.states - t2.states, axis=1)))


def imitation_loss(
    system: dyn.DynamicsSystem,
    roll: dyn.Trajectory,
    pi1,
    pi2,
    mode: str = "model_based",
) -> float:
    """Running tally of how differently two policies act along a rollout.

    Sums ``||g(x_t)(pi1(x_t) - pi2(x_t))||_2`` over ``t = 0..T-1`` of the
    given rollout; ``mode="model_free"`` drops the gain factor and uses the
    raw action difference.
    """
    if roll.horizon < 1:
        raise PreconditionError("rollout horizon must be >= 1")
    states = roll.states[:-1]
    delta = np.asarray(pi1(states), dtype=float) - np.asarray(pi2(states), dtype=float)
    if delta.shape != (states.shape[0], system.input_dim):
        raise DimensionError("policy outputs", (states.shape[0], system.input_dim), delta.shape)
    if mode == "model_free":
        weighted = delta
    elif mode == "model_based":
        weighted = dyn.batch_gain_apply(system, states, delta)
    else:
        raise PreconditionError(f"unknown loss mode {mode!r}")
    return float(np.sum(np.linalg.norm(weighted, axis=1)))


# ---------------------------------------------------------------------------
# Gain-stability inequality pieces (shared by the checker and its tests)


def min_max_power(x: float, exponents: Sequence[float], mode: str) -> float:
    """Min or max of ``|x|^e`` over the exponents; reduces to the two extremes."""
    exps = [float(e) for e in exponents]
    if not exps:
        raise PreconditionError("need at least one exponent")
    if any(e < 1.0 for e in exps):
        raise PreconditionError("exponents must be >= 1")
    ax = abs(float(x))
    lo, hi = ax ** min(exps), ax ** max(exps)
    if mode == "min":
        return min(lo, hi)
    if mode == "max":
        return max(lo, hi)
    raise PreconditionError(f"mode must be 'min' or 'max', got {mode!r}")


def igs_lhs_terms(delta_norms: np.ndarray, psi: IgsParams) -> np.ndarray:
    """Per-step terms ``min(||d||^lo, ||d||^hi)`` of the inequality's left side."""
    d = np.asarray(delta_norms, dtype=float)
    return np.minimum(d ** psi.lo, d ** psi.hi)


def igs_input_terms(input_norms: np.ndarray, psi: IgsParams) -> np.ndarray:
    """Per-step terms ``max(||u||^b0, ||u||^b1)`` of the inequality's right side."""
    u = np.asarray(input_norms, dtype=float)
    return np.maximum(u ** psi.b0, u ** psi.b1)


@dataclass(frozen=True)
class IgsCases:
    """A batch of falsification cases for the trajectory-level check."""

    xi1: np.ndarray  # (N, n)
    xi2: np.ndarray  # (N, n)
    inputs: np.ndarray  # (N, T_max, d)
    horizons: np.ndarray  # (N,) ints, each <= T_max

    def __post_init__(self):
        for name in ("xi1", "xi2", "inputs"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "horizons", np.asarray(self.horizons, dtype=int))
        if self.xi1.shape != self.xi2.shape:
            raise DimensionError("xi2", self.xi1.shape, self.xi2.shape)
        if np.any(self.horizons < 1) or np.any(self.horizons > self.inputs.shape[1]):
            raise PreconditionError("horizons must lie in [1, T_max]")

    def __len__(self) -> int:
        return self.xi1.shape[0]


def random_igs_cases(
    system: dyn.DynamicsSystem,
    n_cases: int,
    seed: int = 0,
    t_max: int = 200,
    xi_bound: float = 5.0,
    u_bound: float = 1.0,
) -> IgsCases:
    """Uniform initial-condition pairs and input signals inside given bounds."""
    rng = np.random.default_rng(seed)
    n, d = system.state_dim, system.input_dim

    def _ball(count, dim, radius):
        raw = rng.uniform(-1.0, 1.0, size=(count, dim))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        scale = rng.uniform(0.0, radius, size=(count, 1))
        return np.where(norms > 0, raw / np.maximum(norms, 1e-300) * scale, raw)

    xi1 = _ball(n_cases, n, xi_bound)
    xi2 = _ball(n_cases, n, xi_bound)
    inputs = _ball(n_cases * t_max, d, u_bound).reshape(n_cases, t_max, d)
    horizons = rng.integers(1, t_max + 1, size=n_cases)
    return IgsCases(xi1, xi2, inputs, horizons)


def check_igs_on_trajectories(
    psi: IgsParams,
    system_cl: dyn.DynamicsSystem,
    cases: IgsCases,
    tolerance: float = DEFAULT_TOLERANCE,
) -> CertificationReport:
    """Falsify the gain-stability inequality on sampled trajectory pairs.

    For each case the driven trajectory from ``xi1`` is compared against the
    autonomous one from ``xi2``; the inequality is evaluated at *every* prefix
    horizon up to the case's, not just the final one, since it quantifies over
    all horizon lengths.  A diverging rollout counts as a violation with the
    divergence step as witness.
    """
    n_cases = len(cases)
    driven, alive_driven = dyn.batch_rollout_open(system_cl, cases.xi1, cases.inputs)
    auto, alive_auto = dyn.batch_rollout_open(
        system_cl, cases.xi2, None, horizon=cases.inputs.shape[1]
    )

    delta_norms = np.linalg.norm(driven - auto, axis=2)  # (N, T_max + 1)
    lhs_terms = igs_lhs_terms(delta_norms, psi)
    lhs_cum = np.cumsum(lhs_terms, axis=1)
    input_norms = np.linalg.norm(cases.inputs, axis=2)  # (N, T_max)
    rhs_inputs = np.concatenate(
        [np.zeros((n_cases, 1)), np.cumsum(igs_input_terms(input_norms, psi), axis=1)],
        axis=1,
    )
    gap = np.linalg.norm(cases.xi1 - cases.xi2, axis=1)
    rhs_cum = psi.zeta * gap[:, None] ** psi.a + psi.gamma * rhs_inputs

    violations = 0
    worst = -math.inf
    witness = None
    for i in range(n_cases):
        t_i = int(cases.horizons[i])
        ok_steps = min(t_i, int(alive_driven[i]), int(alive_auto[i]))
        if ok_steps < t_i:
            violations += 1
            if witness is None or witness.get("kind") != "divergence":
                witness = {
                    "kind": "divergence",
                    "case": i,
                    "step": ok_steps,
                    "xi1": cases.xi1[i],
                    "xi2": cases.xi2[i],
                }
            worst = math.inf
            continue
        residuals = lhs_cum[i, : t_i + 1] - rhs_cum[i, : t_i + 1]
        r = float(np.max(residuals))
        if r > worst:
            worst = r
            if r > tolerance or witness is None:
                witness = {
                    "kind": "residual",
                    "case": i,
                    "horizon": int(np.argmax(residuals)),
                    "xi1": cases.xi1[i],
                    "xi2": cases.xi2[i],
                    "residual": r,
                }
        if r > tolerance:
            violations += 1
    return CertificationReport(n_cases, violations, worst, witness, tolerance)


# ---------------------------------------------------------------------------
# Pointwise Lyapunov checks


def random_pointwise_cases(
    system: dyn.DynamicsSystem,
    n_cases: int,
    seed: int = 0,
    x_bound: float = 10.0,
    u_bound: float = 10.0,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniform (x, y, u) triples for the decrement check."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-x_bound, x_bound, size=(n_cases, system.state_dim))
    y = rng.uniform(-x_bound, x_bound, size=(n_cases, system.state_dim))
    u = rng.uniform(-u_bound, u_bound, size=(n_cases, system.input_dim))
    return x, y, u


def lyapunov_decrement_residuals(
    cert: IncLyapunov,
    system: dyn.DynamicsSystem,
    x: np.ndarray,
    y: np.ndarray,
    u: np.ndarray,
) -> np.ndarray:
    """Vector of ``V(f(x,u), f(y,0)) - V(x,y) + frak_a min(.) - frak_b max(.)``.

    Nonpositive entries mean the per-step decay condition holds at the sample.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    fx = dyn.batch_step(system, x, u)
    fy = dyn.batch_step(system, y, None)
    dv = np.asarray(cert.v(fx, fy), dtype=float) - np.asarray(cert.v(x, y), dtype=float)
    dist = np.linalg.norm(x - y, axis=1)
    decay = cert.frak_a * np.minimum(dist ** cert.a0, dist ** cert.a1)
    u_norm = np.linalg.norm(u, axis=1)
    leak = cert.frak_b * np.maximum(u_norm ** cert.b0, u_norm ** cert.b1)
    return dv + decay - leak


def check_lyapunov_decrement(
    cert: IncLyapunov,
    system: dyn.DynamicsSystem,
    cases,
    tolerance: float = DEFAULT_TOLERANCE,
) -> CertificationReport:
    """Falsify the per-step decay condition on sampled (x, y, u) triples.

    ``cases`` is either a ``(x, y, u)`` batch of arrays or an iterable of
    triples (stacked internally).
    """
    if isinstance(cases, tuple) and len(cases) == 3:
        x, y, u = cases
    else:
        triples = list(cases)
        x = np.array([np.atleast_1d(t[0]) for t in triples], dtype=float)
        y = np.array([np.atleast_1d(t[1]) for t in triples], dtype=float)
        u = np.array([np.atleast_1d(t[2]) for t in triples], dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    residuals = lyapunov_decrement_residuals(cert, system, x, y, u)
    bad = residuals > tolerance
    violations = int(np.count_nonzero(bad))
    worst_idx = int(np.argmax(residuals))
    witness = {
        "x": x[worst_idx],
        "y": y[worst_idx],
        "u": u[worst_idx],
        "residual": float(residuals[worst_idx]),
    }
    return CertificationReport(
        x.shape[0], violations, float(residuals[worst_idx]), witness, tolerance
    )


def check_lyapunov_sandwich(
    cert: IncLyapunov,
    pairs: Tuple[np.ndarray, np.ndarray],
    tolerance: float = DEFAULT_TOLERANCE,
) -> CertificationReport:
    """Falsify ``alpha_lo ||x-y||^a <= V(x,y) <= alpha_hi ||x-y||^a`` on samples."""
    x, y = (np.atleast_2d(np.asarray(arr, dtype=float)) for arr in pairs)
    values = np.asarray(cert.v(x, y), dtype=float)
    powered = np.linalg.norm(x - y, axis=1) ** cert.a
    residuals = np.maximum(cert.alpha_lo * powered - values, values - cert.alpha_hi * powered)
    violations = int(np.count_nonzero(residuals > tolerance))
    worst_idx = int(np.argmax(residuals))
    witness = {"x": x[worst_idx], "y": y[worst_idx], "residual": float(residuals[worst_idx])}
    return CertificationReport(
        x.shape[0], violations, float(residuals[worst_idx]), witness, tolerance
    )


def igs_from_lyapunov(cert: IncLyapunov) -> IgsParams:
    """Gain-stability parameters implied by a valid incremental certificate:
    ``zeta = alpha_hi / min(alpha_lo, frak_a)`` and
    ``gamma = frak_b / min(alpha_lo, frak_a)``."""
    denom = min(cert.alpha_lo, cert.frak_a)
    if denom <= 0:
        raise PreconditionError("min(alpha_lo, frak_a) must be positive")
    return IgsParams(
        a=cert.a,
        a0=cert.a0,
        a1=cert.a1,
        b0=cert.b0,
        b1=cert.b1,
        zeta=cert.alpha_hi / denom,
        gamma=cert.frak_b / denom,
    )


# ---------------------------------------------------------------------------
# Contraction route


def contraction_igs_params(rho: float, mu_lo: float, mu_hi: float, l_u: float) -> IgsParams:
    """Gain-stability parameters of an autonomously contracting system:
    all exponents one, ``zeta = sqrt(mu_hi/mu_lo) / (1 - sqrt(rho))`` and
    ``gamma = L_u * zeta``."""
    if not 0.0 < rho < 1.0:
        raise PreconditionError(f"contraction rate rho must lie in (0, 1), got {rho}")
    if not 0.0 < mu_lo <= mu_hi:
        raise PreconditionError("need 0 < mu_lo <= mu_hi")
    if l_u <= 0:
        raise PreconditionError("input Lipschitz constant must be positive")
    k = math.sqrt(mu_hi / mu_lo) / (1.0 - math.sqrt(rho))
    return IgsParams(1.0, 1.0, 1.0, 1.0, 1.0, k, l_u * k)


def drift_jacobian(system: dyn.DynamicsSystem, x: np.ndarray, step_size: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of the autonomous map at x."""
    x = np.asarray(x, dtype=float).reshape(-1)
    n = system.state_dim
    jac = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step_size
        hi = np.asarray(system.drift(x + e), dtype=float)
        lo = np.asarray(system.drift(x - e), dtype=float)
        jac[:, j] = (hi - lo) / (2.0 * step_size)
    return jac


def check_contraction_metric(
    system: dyn.DynamicsSystem,
    metric: Callable[[np.ndarray], np.ndarray],
    rho: float,
    grid: Iterable[np.ndarray],
    slack: float = 1e-8,
) -> CertificationReport:
    """Falsify ``J(x)' M(f(x)) J(x) <= rho M(x)`` on a grid of states.

    The Jacobian is taken by central differences (systems are black-box maps)
    and the matrix inequality is decided by attempting a Cholesky factorization
    of ``rho M(x) - J' M(f(x)) J + slack I``; the reported residual is the most
    negative eigenvalue of the un-slackened gap (positive means violated).
    A metric that is not positive definite at a sample is itself a violation.
    """
    samples = 0
    violations = 0
    worst = -math.inf
    witness = None
    for x in grid:
        x = np.asarray(x, dtype=float).reshape(-1)
        samples += 1
        m_here = symmetrize(np.asarray(metric(x), dtype=float))
        try:
            np.linalg.cholesky(m_here)
        except np.linalg.LinAlgError:
            violations += 1
            worst = math.inf
            witness = {"kind": "metric_not_pd", "x": x}
            continue
        fx = np.asarray(system.drift(x), dtype=float)
        jac = drift_jacobian(system, x)
        gap_matrix = rho * m_here - jac.T @ symmetrize(np.asarray(metric(fx), dtype=float)) @ jac
        residual = -float(np.min(np.linalg.eigvalsh(symmetrize(gap_matrix))))
        try:
            np.linalg.cholesky(symmetrize(gap_matrix) + slack * np.eye(len(x)))
            violated = False
        except np.linalg.LinAlgError:
            violated = True
        if violated:
            violations += 1
        if residual > worst:
            worst = residual
            witness = {"kind": "residual", "x": x, "residual": residual}
    if samples == 0:
        raise PreconditionError("empty grid")
    return CertificationReport(samples, violations, worst, witness, slack)


def observed_contraction_factor(
    system: dyn.DynamicsSystem,
    metric: Callable[[np.ndarray], np.ndarray],
    grid: Iterable[np.ndarray],
) -> float:
    """Largest one-step expansion ratio of the metric over a grid.

    Returns ``max_x lambda_max(M(x)^-1/2 J' M(f(x)) J M(x)^-1/2)``; a value
    below one certifies contraction at exactly that rate on the sampled set.
    """
    worst = 0.0
    for x in grid:
        x = np.asarray(x, dtype=float).reshape(-1)
        m_here = symmetrize(np.asarray(metric(x), dtype=float))
        chol = np.linalg.cholesky(m_here)
        fx = np.asarray(system.drift(x), dtype=float)
        jac = drift_jacobian(system, x)
        inner = jac.T @ symmetrize(np.asarray(metric(fx), dtype=float)) @ jac
        half = np.linalg.solve(chol, np.linalg.solve(chol, inner.T).T)
        worst = max(worst, float(np.linalg.eigvalsh(symmetrize(half))[-1]))
    return worst


# ---------------------------------------------------------------------------
# The tunable p-family


def p_system_igs_params(p: float, eta: float) -> IgsParams:
    """Gain-stability tuple of the scalar p-family:
    ``(1, 1, 1+p, 1, 1, 2^(2+p)/eta, 2^(2+p))`` for ``0 < eta < 4/(5+p)``."""
    if p <= 0:
        raise PreconditionError("p must be positive")
    if not 0.0 < eta < dyn.eta_limit(p):
        raise PreconditionError(
            f"eta must satisfy 0 < eta < 4/(5+p) = {dyn.eta_limit(p):.6g}, got {eta}"
        )
    scale = 2.0 ** (2.0 + p)
    return IgsParams(1.0, 1.0, 1.0 + p, 1.0, 1.0, scale / eta, scale)


def p_system_certificate(p: float, eta: float) -> IncLyapunov:
    """The absolute-difference certificate for the scalar p-family.

    ``V(x, y) = |x - y|`` decays at rate ``eta / 2^(2+p)`` against
    ``min(|x-y|, |x-y|^(1+p))`` with input leakage ``eta |u|``; chaining it
    through the Lyapunov route reproduces ``p_system_igs_params``.
    """
    if not 0.0 < eta < dyn.eta_limit(p):
        raise PreconditionError(
            f"eta must satisfy 0 < eta < 4/(5+p) = {dyn.eta_limit(p):.6g}, got {eta}"
        )

    def v(x, y):
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return np.abs(d[..., 0]) if d.ndim > 1 else float(abs(d[0]))

    return IncLyapunov(
        v=v,
        a=1.0,
        alpha_lo=1.0,
        alpha_hi=1.0,
        frak_a=eta / 2.0 ** (2.0 + p),
        frak_b=eta,
        a0=1.0,
        a1=1.0 + p,
        b0=1.0,
        b1=1.0,
    )


# ---------------------------------------------------------------------------
# Closed-form discrepancy bounds


def gronwall_bound(lipschitz: float, bound: float, horizon: int, loss: float) -> float:
    """Worst-case discrepancy growth without any stability assumption:
    ``loss * (r^T - 1) / (r - 1)`` with rate ``r = L (1 + 2B)`` (requires r > 1).

    The rate compounds exponentially in the horizon; overflow saturates to inf.
    """
    rate = lipschitz * (1.0 + 2.0 * bound)
    if rate <= 1.0:
        raise PreconditionError(f"need L(1+2B) > 1, got {rate:.6g}")
    if horizon < 0:
        raise PreconditionError("horizon must be >= 0")
    log_rate = math.log(rate)
    if horizon * log_rate > 700.0:
        return math.inf if loss > 0 else 0.0
    factor = (rate ** horizon - 1.0) / (rate - 1.0)
    return factor * loss


def disc_bound_inputs(psi: IgsParams, horizon: int, loss: float) -> float:
    """Discrepancy bound for an input perturbation of a gain-stable system.

    Bounds ``sum_{t=0..T} ||Delta_t||`` by
    ``4 (gamma v 1)^(1/lo) T^(1 - 1/hi) max(loss^(b0/hi), loss^(b1/lo))`` where
    ``loss`` is the summed perturbation magnitude over the first T steps.
    """
    if loss < 0:
        raise PreconditionError("loss must be >= 0")
    if horizon < 0:
        raise PreconditionError("horizon must be >= 0")
    g = max(psi.gamma, 1.0) ** (1.0 / psi.lo)
    t_factor = float(horizon) ** (1.0 - 1.0 / psi.hi)
    return 4.0 * g * t_factor * max(loss ** (psi.b0 / psi.hi), loss ** (psi.b1 / psi.lo))


@dataclass(frozen=True)
class IcDiscrepancyBound:
    per_step: float
    summed: float


def disc_bound_ics(psi: IgsParams, horizon: int, ic_gap: float) -> IcDiscrepancyBound:
    """Autonomous discrepancy bounds for two initial conditions.

    ``per_step`` bounds ``||Delta_t||`` for every t; ``summed`` bounds
    ``sum_{t=0..T-1} ||Delta_t||`` (the first T steps) by an extra factor
    ``2 T^(1 - 1/hi)``.
    """
    if ic_gap < 0:
        raise PreconditionError("ic_gap must be >= 0")
    if horizon < 0:
        raise PreconditionError("horizon must be >= 0")
    z = max(psi.zeta, 1.0) ** (1.0 / psi.lo)
    gap_factor = max(ic_gap ** (psi.a / psi.lo), ic_gap ** (psi.a / psi.hi))
    per_step = z * gap_factor
    summed = 2.0 * z * float(horizon) ** (1.0 - 1.0 / psi.hi) * gap_factor
    return IcDiscrepancyBound(per_step=per_step, summed=summed)


# ---------------------------------------------------------------------------
# Robust quadratic certificate for the LQ study


def build_robust_lqr_certificate(
    a_cl, p_star, gamma: float, eps: float
) -> IncLyapunov:
    """Quadratic incremental certificate around a stable linear closed loop.

    Solves ``A' X A - X + Q = 0`` with ``Q = (1 - gamma^2) P + eps I`` (P the
    Riccati solution), so X inherits the expert's convergence rate while eps
    buys robustness to policy mismatch.  Packaged with exponent 2, sandwich
    constants ``lambda_min(X), lambda_max(X)``, and decrement constants from a
    Young-inequality completion of the cross term, valid for disturbances
    entering through an identity channel:
    ``frak_a = lambda_min(Q) / 2`` and
    ``frak_b = (1 + 2 lambda_max(A'XA) / lambda_min(Q)) lambda_max(X)``.
    """
    a_cl = require_square(a_cl, "a_cl")
    p_star = require_square(p_star, "p_star")
    rho = spectral_radius(a_cl)
    if rho >= 1.0:
        raise PreconditionError(f"closed loop must be stable, got rho = {rho:.6g}")
    if not rho < gamma < 1.0:
        raise PreconditionError(
            f"gamma must lie in (rho(A_cl), 1) = ({rho:.6g}, 1), got {gamma}"
        )
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    try:
        np.linalg.cholesky(symmetrize(p_star))
    except np.linalg.LinAlgError:
        raise PreconditionError("P must be symmetric positive definite") from None
    q = (1.0 - gamma**2) * symmetrize(p_star) + eps * np.eye(a_cl.shape[0])
    x_mat = solve_discrete_lyapunov(a_cl, q)
    eigs = np.linalg.eigvalsh(x_mat)
    alpha_lo, alpha_hi = float(eigs[0]), float(eigs[-1])
    q_min = float(np.linalg.eigvalsh(q)[0])
    axa_max = float(np.linalg.eigvalsh(symmetrize(a_cl.T @ x_mat @ a_cl))[-1])
    frak_a = 0.5 * q_min
    frak_b = (1.0 + 2.0 * axa_max / q_min) * alpha_hi

    def v(p, r):
        d = np.asarray(p, dtype=float) - np.asarray(r, dtype=float)
        return np.einsum("...i,ij,...j->...", d, x_mat, d)

    return IncLyapunov(
        v=v,
        a=2.0,
        alpha_lo=alpha_lo,
        alpha_hi=alpha_hi,
        frak_a=frak_a,
        frak_b=frak_b,
        a0=2.0,
        a1=2.0,
        b0=2.0,
        b1=2.0,
        matrix=x_mat,
    )
