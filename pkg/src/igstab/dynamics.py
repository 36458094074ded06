"""Discrete-time control-affine systems and rollout operators.

A system is the pair ``x' = f(x) + g(x) u`` with ``f`` the drift and ``g`` the
input gain.  Drift maps are written to broadcast over a leading batch axis
(``(..., n) -> (..., n)``); the gain is exposed per-state as an ``(n, d)``
matrix, with structural shortcuts (constant / diagonal) recorded on the system
so batched evaluation stays cheap.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, DivergenceError, PreconditionError

# Rollouts abort once any state component exceeds this magnitude; the unstable
# open-loop LQ system overflows float64 within a few steps otherwise.
DIVERGENCE_LIMIT = 1e9


def _as_state(x, n: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape != (n,):
        raise DimensionError(name, (n,), arr.shape)
    return arr


@dataclass(frozen=True)
class SystemBounds:
    """Optional smoothness/boundedness metadata (used by closed-form bounds)."""

    b_g: Optional[float] = None  # sup over x of the gain operator norm
    lipschitz: Optional[float] = None  # Lipschitz constant of the pieces
    bound: Optional[float] = None  # uniform bound of the pieces


@dataclass(frozen=True)
class DynamicsSystem:
    """Control-affine system ``x' = drift(x) + input_gain(x) @ u``.

    ``gain_constant`` is set when the gain does not depend on the state and
    ``gain_diag`` when it is diagonal (returns the diagonal entries, batched);
    both are derived conveniences — ``input_gain`` is always authoritative.
    Systems are immutable and safe to share across threads.
    """

    state_dim: int
    input_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    input_gain: Callable[[np.ndarray], np.ndarray]
    gain_constant: Optional[np.ndarray] = None
    gain_diag: Optional[Callable[[np.ndarray], np.ndarray]] = None
    bounds: Optional[SystemBounds] = None
    zero_drift_at_origin: bool = False
    name: str = ""

    def __post_init__(self):
        if self.state_dim <= 0 or self.input_dim <= 0:
            raise PreconditionError("state_dim and input_dim must be positive")
        if self.gain_constant is not None:
            g = np.asarray(self.gain_constant, dtype=float)
            if g.shape != (self.state_dim, self.input_dim):
                raise DimensionError(
                    "gain_constant", (self.state_dim, self.input_dim), g.shape
                )
            object.__setattr__(self, "gain_constant", g)


@dataclass(frozen=True)
class Trajectory:
    """States ``x_0..x_T`` with the inputs ``u_0..u_{T-1}`` that generated them."""

    initial_condition: np.ndarray
    states: np.ndarray  # (T+1, n)
    inputs: np.ndarray  # (T, d)

    def __post_init__(self):
        ic = np.asarray(self.initial_condition, dtype=float).reshape(-1)
        states = np.asarray(self.states, dtype=float)
        inputs = np.asarray(self.inputs, dtype=float)
        if states.ndim != 2:
            raise DimensionError("states", "(T+1, n)", states.shape)
        if inputs.ndim != 2:
            raise DimensionError("inputs", "(T, d)", inputs.shape)
        if states.shape[0] != inputs.shape[0] + 1:
            raise PreconditionError(
                f"states has {states.shape[0]} rows but inputs has "
                f"{inputs.shape[0]}; expected T+1 states for T inputs"
            )
        if states.shape[1] != ic.shape[0]:
            raise DimensionError("initial_condition", (states.shape[1],), ic.shape)
        if not np.array_equal(states[0], ic):
            raise PreconditionError("states[0] must equal the initial condition")
        for name, arr in (("initial_condition", ic), ("states", states), ("inputs", inputs)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def step(system: DynamicsSystem, x, u) -> np.ndarray:
    """One fused evaluation of ``f(x) + g(x) u``."""
    xv = _as_state(x, system.state_dim, "x")
    uv = _as_state(u, system.input_dim, "u")
    return np.asarray(system.drift(xv), dtype=float) + system.input_gain(xv) @ uv


def _check_divergence(x: np.ndarray, step_index: int, limit: float) -> None:
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > limit:
        raise DivergenceError(step_index)


def rollout_closed(
    system: DynamicsSystem, policy, xi, horizon: int, state_limit: Optional[float] = None
) -> Trajectory:
    """Roll the closed loop ``u_t = policy(x_t)``, recording states and inputs.

    ``state_limit`` tightens the divergence guard (a survival-style
    termination bound) below the global limit.
    """
    if horizon < 1:
        raise PreconditionError("horizon must be >= 1")
    limit = DIVERGENCE_LIMIT if state_limit is None else min(state_limit, DIVERGENCE_LIMIT)
    xi = _as_state(xi, system.state_dim, "xi")
    states = np.empty((horizon + 1, system.state_dim))
    inputs = np.empty((horizon, system.input_dim))
    states[0] = xi
    x = xi
    for t in range(horizon):
        u = _as_state(policy(x), system.input_dim, "policy output")
        x = step(system, x, u)
        _check_divergence(x, t + 1, limit)
        inputs[t] = u
        states[t + 1] = x
    return Trajectory(xi, states, inputs)


def rollout_open(system: DynamicsSystem, xi, inputs) -> Trajectory:
    """Roll the system under a fixed input sequence (horizon = len(inputs))."""
    xi = _as_state(xi, system.state_dim, "xi")
    u_arr = np.asarray(inputs, dtype=float)
    if u_arr.size == 0:
        u_arr = u_arr.reshape(0, system.input_dim)
    if u_arr.ndim == 1:
        u_arr = u_arr.reshape(-1, 1)
    if u_arr.ndim != 2 or u_arr.shape[1] != system.input_dim:
        raise DimensionError("inputs", ("T", system.input_dim), u_arr.shape)
    horizon = u_arr.shape[0]
    states = np.empty((horizon + 1, system.state_dim))
    states[0] = xi
    x = xi
    for t in range(horizon):
        x = step(system, x, u_arr[t])
        _check_divergence(x, t + 1, DIVERGENCE_LIMIT)
        states[t + 1] = x
    return Trajectory(xi, states, u_arr)


def replay(system: DynamicsSystem, trajectory: Trajectory) -> Trajectory:
    """Re-simulate a trajectory's recorded inputs from its initial condition."""
    return rollout_open(system, trajectory.initial_condition, trajectory.inputs)


def batch_gain_apply(system: DynamicsSystem, x_batch: np.ndarray, u_batch: np.ndarray) -> np.ndarray:
    """Evaluate ``g(x_i) u_i`` for a batch of states/inputs, shape (N, n)."""
    if system.gain_constant is not None:
        return u_batch @ system.gain_constant.T
    if system.gain_diag is not None:
        return system.gain_diag(x_batch) * u_batch
    out = np.empty((x_batch.shape[0], system.state_dim))
    for i in range(x_batch.shape[0]):
        out[i] = system.input_gain(x_batch[i]) @ u_batch[i]
    return out


def batch_step(system: DynamicsSystem, x_batch: np.ndarray, u_batch=None) -> np.ndarray:
    """Vectorized ``f(x) + g(x) u`` over a batch of rows; ``u=None`` means zero."""
    drift = np.asarray(system.drift(x_batch), dtype=float)
    if u_batch is None:
        return drift
    return drift + batch_gain_apply(system, x_batch, u_batch)


def batch_rollout_open(
    system: DynamicsSystem, xi_batch: np.ndarray, inputs=None, horizon: Optional[int] = None
):
    """Roll a batch of initial conditions jointly.

    Returns ``(states, alive)`` where ``states`` has shape (N, T+1, n) and
    ``alive[i]`` is the number of valid steps before case ``i`` diverged
    (``T`` when it never did).  Diverged rows are frozen at their last finite
    state instead of raising, so certification sweeps can record them as
    violations.
    """
    xi_batch = np.asarray(xi_batch, dtype=float)
    if xi_batch.ndim == 1:
        xi_batch = xi_batch[:, None]
    n_cases = xi_batch.shape[0]
    if inputs is None:
        if horizon is None:
            raise PreconditionError("horizon required when inputs is None")
        t_max = horizon
    else:
        inputs = np.asarray(inputs, dtype=float)
        t_max = inputs.shape[1]
    states = np.empty((n_cases, t_max + 1, system.state_dim))
    states[:, 0, :] = xi_batch
    alive = np.full(n_cases, t_max, dtype=int)
    x = xi_batch.copy()
    ok = np.ones(n_cases, dtype=bool)
    for t in range(t_max):
        u = None if inputs is None else inputs[:, t, :]
        with np.errstate(invalid="ignore", over="ignore"):
            x_next = batch_step(system, x, u)
        finite = np.all(np.isfinite(x_next), axis=1)
        magnitude = np.max(np.abs(np.where(np.isfinite(x_next), x_next, 0.0)), axis=1)
        bad = ~finite | (magnitude > DIVERGENCE_LIMIT)
        newly_dead = ok & bad
        if np.any(newly_dead):
            alive[newly_dead] = t
            ok &= ~bad
        x = np.where(ok[:, None], x_next, x)
        states[:, t + 1, :] = x
    return states, alive


def batch_rollout_closed(
    system: DynamicsSystem, policy, xi_batch: np.ndarray, horizon: int
):
    """Closed-loop counterpart of :func:`batch_rollout_open`.

    Returns ``(states, alive)``; diverged rows freeze at their last finite
    state with ``alive`` recording the number of valid steps.
    """
    xi_batch = np.asarray(xi_batch, dtype=float)
    if xi_batch.ndim == 1:
        xi_batch = xi_batch[:, None]
    n_cases = xi_batch.shape[0]
    states = np.empty((n_cases, horizon + 1, system.state_dim))
    states[:, 0, :] = xi_batch
    alive = np.full(n_cases, horizon, dtype=int)
    ok = np.ones(n_cases, dtype=bool)
    x = xi_batch.copy()
    for t in range(horizon):
        with np.errstate(invalid="ignore", over="ignore"):
            u = np.asarray(policy(x), dtype=float)
            x_next = batch_step(system, x, u)
        finite = np.all(np.isfinite(x_next), axis=1)
        magnitude = np.max(np.abs(np.where(np.isfinite(x_next), x_next, 0.0)), axis=1)
        bad = ~finite | (magnitude > DIVERGENCE_LIMIT)
        newly_dead = ok & bad
        if np.any(newly_dead):
            alive[newly_dead] = t
            ok &= ~bad
        x = np.where(ok[:, None], x_next, x)
        states[:, t + 1, :] = x
    return states, alive


def make_lti(a, b) -> DynamicsSystem:
    """Linear system ``x' = A x + B u``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("A", "square", a.shape)
    if b.ndim != 2 or b.shape[0] != a.shape[0]:
        raise DimensionError("B", (a.shape[0], "d"), b.shape)
    return DynamicsSystem(
        state_dim=a.shape[0],
        input_dim=b.shape[1],
        drift=lambda x: x @ a.T,
        input_gain=lambda x: b,
        gain_constant=b,
        zero_drift_at_origin=True,
        name="lti",
    )


def p_nonlinearity(x, p: float):
    """The saturating odd map ``x |x|^p / (1 + |x|^p)`` (element-wise)."""
    ax = np.abs(x) ** p
    return x * ax / (1.0 + ax)


def eta_limit(p: float) -> float:
    """Largest admissible step size for the p-family: ``4 / (5 + p)``."""
    return 4.0 / (5.0 + p)


@dataclass(frozen=True)
class PSystemSpec:
    """Parameters of the tunable p-family.

    ``prop6`` is the scalar benchmark ``x' = x - eta x|x|^p/(1+|x|^p) + eta u``;
    ``experiment`` is the vector variant with saturating input channel
    ``x' = x - eta x|x|^p/(1 + eta |x|^p) + (h(x) + u)/(1 + |x|^p)`` where all
    arithmetic is element-wise and ``h`` is an optional drift perturbation.
    """

    p: float
    eta: float
    variant: str = "prop6"
    dim: int = field(default=0)  # 0 -> canonical (1 for prop6, 10 for experiment)
    h: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.p <= 0:
            raise PreconditionError("p must be positive")
        if self.variant not in ("prop6", "experiment"):
            raise PreconditionError(f"unknown variant {self.variant!r}")
        # The step-size bound is the scalar certificate's precondition.  The
        # vector variant is globally stable for any eta > 0 (its shrink factor
        # stays below one), and the reference experiment runs it at eta = 0.5
        # for every p, so only the scalar variant enforces the bound.
        if self.variant == "prop6" and not 0.0 < self.eta < eta_limit(self.p):
            raise PreconditionError(
                f"eta must satisfy 0 < eta < 4/(5+p) = {eta_limit(self.p):.6g}, "
                f"got eta = {self.eta}"
            )
        if self.eta <= 0:
            raise PreconditionError("eta must be positive")
        dim = self.dim
        if dim == 0:
            dim = 1 if self.variant == "prop6" else 10
        if dim <= 0:
            raise PreconditionError("dim must be positive")
        if self.variant == "prop6" and dim != 1:
            raise PreconditionError("the prop6 variant is scalar (dim must be 1)")
        object.__setattr__(self, "dim", dim)


def make_p_system(spec: PSystemSpec) -> DynamicsSystem:
    p, eta, n = spec.p, spec.eta, spec.dim
    if spec.variant == "prop6":
        gain = np.array([[eta]])
        return DynamicsSystem(
            state_dim=1,
            input_dim=1,
            drift=lambda x: x - eta * p_nonlinearity(x, p),
            input_gain=lambda x: gain,
            gain_constant=gain,
            zero_drift_at_origin=True,
            name=f"p_system_prop6(p={p}, eta={eta})",
        )

    h = spec.h

    def drift(x):
        ax = np.abs(x) ** p
        core = x - eta * x * ax / (1.0 + eta * ax)
        if h is None:
            return core
        return core + h(x) / (1.0 + ax)

    def gain_diag(x):
        return 1.0 / (1.0 + np.abs(x) ** p)

    def input_gain(x):
        return np.diag(gain_diag(x))

    return DynamicsSystem(
        state_dim=n,
        input_dim=n,
        drift=drift,
        input_gain=input_gain,
        gain_diag=gain_diag,
        zero_drift_at_origin=h is None,
        name=f"p_system_experiment(p={p}, eta={eta}, dim={n})",
    )


def p_system_expert_closed_loop(p: float, eta: float = 0.5, dim: int = 10) -> DynamicsSystem:
    """Closed loop of the experiment variant under its canceling expert.

    The expert absorbs the drift perturbation exactly, leaving the autonomous
    map ``x' = x - eta x|x|^p/(1 + eta |x|^p)``; inputs re-enter through the
    saturating diagonal channel.
    """
    return make_p_system(PSystemSpec(p=p, eta=eta, variant="experiment", dim=dim, h=None))


def make_contracting_example(kind: str, **params):
    """Bundled autonomously-contracting systems with their metrics.

    Returns ``(system, metric)`` where ``metric(x)`` is the positive-definite
    matrix certifying contraction:

    - ``log_system``: scalar ``x' = log(1 + x^2) + u`` with
      ``M(x) = 2 / (1 + exp(-|x|))``.
    - ``gradient_descent``: ``x' = x - eta (Q x + u)`` for a quadratic
      potential with Hessian Q (requires ``0 < eta <= 1/lambda_max(Q)`` and
      Q positive definite); identity metric.
    - ``piecewise_linear``: ``x' = A_{s(x)} x + B u`` with stable pieces
      sharing the quadratic certificate P; ``M(x) = P``.
    """
    if kind == "log_system":
        gain = np.array([[1.0]])
        system = DynamicsSystem(
            state_dim=1,
            input_dim=1,
            drift=lambda x: np.log1p(x * x),
            input_gain=lambda x: gain,
            gain_constant=gain,
            zero_drift_at_origin=True,
            name="log_system",
        )

        def metric(x):
            v = 2.0 / (1.0 + np.exp(-abs(float(np.asarray(x).reshape(-1)[0]))))
            return np.array([[v]])

        return system, metric

    if kind == "gradient_descent":
        hessian = as_square_matrix(params["hessian"])
        eta = float(params["eta"])
        eigs = np.linalg.eigvalsh(hessian)
        mu, lip = float(eigs[0]), float(eigs[-1])
        if mu <= 0:
            raise PreconditionError("potential Hessian must be positive definite")
        if not 0.0 < eta <= 1.0 / lip:
            raise PreconditionError(
                f"eta must satisfy 0 < eta <= 1/L = {1.0 / lip:.6g}, got {eta}"
            )
        n = hessian.shape[0]
        gain = -eta * np.eye(n)

        system = DynamicsSystem(
            state_dim=n,
            input_dim=n,
            drift=lambda x: x - eta * (x @ hessian.T),
            input_gain=lambda x: gain,
            gain_constant=gain,
            zero_drift_at_origin=True,
            name="gradient_descent",
        )
        identity = np.eye(n)
        return system, lambda x: identity

    if kind == "piecewise_linear":
        mats = [as_square_matrix(a) for a in params["pieces"]]
        selector = params["selector"]  # x -> piece index
        b = np.asarray(params["b"], dtype=float)
        cert = as_square_matrix(params["certificate"])
        n = mats[0].shape[0]
        if not _is_pd(cert):
            raise PreconditionError("certificate P must be positive definite")
        for i, a in enumerate(mats):
            if a.shape != (n, n):
                raise DimensionError(f"pieces[{i}]", (n, n), a.shape)
            if not _is_pd(cert - a.T @ cert @ a):
                raise PreconditionError(
                    f"piece {i} does not strictly decrease the certificate"
                )

        def drift(x):
            flat = x.reshape(-1, n)
            out = np.empty_like(flat)
            for j in range(flat.shape[0]):
                out[j] = mats[selector(flat[j])] @ flat[j]
            return out.reshape(x.shape)

        system = DynamicsSystem(
            state_dim=n,
            input_dim=b.shape[1],
            drift=drift,
            input_gain=lambda x: b,
            gain_constant=b,
            zero_drift_at_origin=True,
            name="piecewise_linear",
        )
        return system, lambda x: cert

    raise PreconditionError(f"unknown contracting example {kind!r}")


def as_square_matrix(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError("matrix", "square", arr.shape)
    return arr


def _is_pd(a: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(0.5 * (a + a.T))
        return True
    except np.linalg.LinAlgError:
        return False


def closed_loop(system: DynamicsSystem, policy) -> DynamicsSystem:
    """Fold a policy into the drift, leaving an identity input channel.

    The result is the system whose stability is meant when a policy's closed
    loop is certified: disturbances enter additively.
    """
    n = system.state_dim
    identity = np.eye(n)

    def drift(x):
        flat = np.atleast_2d(x)
        u = np.asarray(policy(flat), dtype=float)
        out = batch_step(system, flat, u)
        return out.reshape(np.shape(x))

    return DynamicsSystem(
        state_dim=n,
        input_dim=n,
        drift=drift,
        input_gain=lambda x: identity,
        gain_constant=identity,
        name=f"closed_loop({system.name})",
    )


TRAJECTORY_FLOAT_FORMAT = "%.17g"


def write_trajectory_csv(trajectory: Trajectory, path_or_file) -> None:
    """One row per timestep: ``t, x_0..x_{n-1}, u_0..u_{d-1}`` (u blank at t=T)."""
    n, d = trajectory.state_dim, trajectory.input_dim
    header = ["t"] + [f"x_{i}" for i in range(n)] + [f"u_{j}" for j in range(d)]

    def _write(fh):
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(trajectory.horizon + 1):
            row = [str(t)]
            row += [TRAJECTORY_FLOAT_FORMAT % v for v in trajectory.states[t]]
            if t < trajectory.horizon:
                row += [TRAJECTORY_FLOAT_FORMAT % v for v in trajectory.inputs[t]]
            else:
                row += [""] * d
            writer.writerow(row)

    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)
    else:
        _write(path_or_file)


def read_trajectory_csv(path_or_file) -> Trajectory:
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        with open(path_or_file, newline="") as fh:
            return read_trajectory_csv(io.StringIO(fh.read()))
    reader = csv.reader(path_or_file)
    header = next(reader)
    n = sum(1 for c in header if c.startswith("x_"))
    d = sum(1 for c in header if c.startswith("u_"))
    states, inputs = [], []
    for row in reader:
        states.append([float(v) for v in row[1 : 1 + n]])
        u_cells = row[1 + n : 1 + n + d]
        if any(c != "" for c in u_cells):
            inputs.append([float(v) for v in u_cells])
    states_arr = np.array(states)
    inputs_arr = np.array(inputs) if inputs else np.empty((0, d))
    return Trajectory(states_arr[0], states_arr, inputs_arr)
