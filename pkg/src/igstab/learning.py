"""Imitation-learning algorithms: empirical loss, Adam-driven constrained ERM,
behavior cloning, mixing iterative learning (with and without data
aggregation), and DAgger.

The trust region of the ERM subproblem is realized softly — warm-starting at
the previous epoch's parameters with a small learning rate — and the stability
constraint, when enabled, as a hinge penalty on the certificate's decrement
residual evaluated on trajectory states.  Rollout collection within an epoch
is independent across initial conditions (deterministic ordering); the
optimizer loop is sequential.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import dynamics as dyn
from .errors import DivergenceError, PreconditionError, TrainingDivergenceError
from .policies import MlpPolicy, Policy, demix_final, mix, random_mlp
from .stability import IgsParams, IncLyapunov, imitation_loss

# Spawn-key tags so every stream is derived from (seed, purpose, epoch)
# without order-dependent state.
_STREAM_IC = 1
_STREAM_INIT = 2
_STREAM_SHUFFLE = 3
_STREAM_SPLIT = 4

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, tags)]))


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators plus the bias-correction step count."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def zeros(size: int) -> "AdamState":
        return AdamState(np.zeros(size), np.zeros(size), 0)


def adam_step(
    params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float
) -> Tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; pure (returns new params and state)."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape:
        raise PreconditionError("params and grads must have matching shapes")
    t = state.t + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grads
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grads**2
    m_hat = m / (1.0 - ADAM_BETA1**t)
    v_hat = v / (1.0 - ADAM_BETA2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new_params, AdamState(m, v, t)


@dataclass(frozen=True)
class StabilityPenalty:
    """Hinge penalty on a quadratic certificate's decrement residual.

    The decrement condition is meant to hold inside a region of attraction;
    ``region_radius`` restricts the penalty to trajectory states within that
    ball (states escaping it would otherwise dominate every gradient).
    """

    certificate: IncLyapunov
    weight: float
    region_radius: Optional[float] = None

    def __post_init__(self):
        if self.weight < 0:
            raise PreconditionError("penalty weight must be >= 0")
        if self.region_radius is not None and self.region_radius <= 0:
            raise PreconditionError("region_radius must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs_optimizer: int = 300
    learning_rate: float = 0.01
    batch_size: int = 512
    seed: int = 0
    hidden: int = 32
    activation: str = "tanh"
    projection_radius: Optional[float] = None
    stability_penalty: Optional[StabilityPenalty] = None
    loss_mode: str = "model_based"  # or "model_free"
    early_stop_patience: Optional[int] = None
    holdout_fraction: float = 0.05

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise PreconditionError("learning_rate must be positive")
        if self.batch_size < 1:
            raise PreconditionError("batch_size must be >= 1")
        if self.loss_mode not in ("model_based", "model_free"):
            raise PreconditionError(f"unknown loss_mode {self.loss_mode!r}")


def empirical_loss(
    trajs: Sequence[dyn.Trajectory],
    system: dyn.DynamicsSystem,
    pi: Policy,
    target: Policy,
    mode: str = "model_based",
) -> float:
    """Mean over trajectories of the imitation loss of ``pi`` against ``target``."""
    if not trajs:
        raise PreconditionError("empirical loss needs at least one trajectory")
    return float(
        np.mean([imitation_loss(system, t, pi, target, mode) for t in trajs])
    )


def generalization_gap(
    trajs_train, trajs_test, system, pi, target, mode: str = "model_based"
) -> float:
    """Absolute difference of empirical losses on two trajectory sets."""
    return abs(
        empirical_loss(trajs_test, system, pi, target, mode)
        - empirical_loss(trajs_train, system, pi, target, mode)
    )


# ---------------------------------------------------------------------------
# Batched objective internals


def _stack_states(trajs: Sequence[dyn.Trajectory]) -> np.ndarray:
    return np.concatenate([t.states[:-1] for t in trajs], axis=0)


def _weighted_residuals(system, states, delta, mode):
    if mode == "model_free":
        return delta, None
    if system.gain_constant is not None:
        return delta @ system.gain_constant.T, ("const", system.gain_constant)
    if system.gain_diag is not None:
        gd = system.gain_diag(states)
        return gd * delta, ("diag", gd)
    mats = [system.input_gain(states[i]) for i in range(states.shape[0])]
    out = np.stack([mats[i] @ delta[i] for i in range(states.shape[0])])
    return out, ("general", mats)


def _pull_back(upstream_state, gain_info):
    """Map a state-space upstream to input space through the gain transpose."""
    if gain_info is None:
        return upstream_state
    kind, payload = gain_info
    if kind == "const":
        return upstream_state @ payload
    if kind == "diag":
        return payload * upstream_state
    return np.stack(
        [payload[i].T @ upstream_state[i] for i in range(upstream_state.shape[0])]
    )


def _loss_and_grad(
    policy: MlpPolicy,
    system: dyn.DynamicsSystem,
    states: np.ndarray,
    targets: np.ndarray,
    mode: str,
) -> Tuple[float, np.ndarray]:
    """Summed per-state 2-norm loss and its parameter subgradient.

    A state with zero residual contributes a zero subgradient (the
    minimum-norm element of the subdifferential).
    """
    actions = policy(states)
    weighted, gain_info = _weighted_residuals(system, states, actions - targets, mode)
    norms = np.linalg.norm(weighted, axis=1)
    loss = float(np.sum(norms))
    nonzero = norms > 0
    unit = np.zeros_like(weighted)
    unit[nonzero] = weighted[nonzero] / norms[nonzero, None]
    upstream = _pull_back(unit, gain_info)
    grad = policy.grad_batch(states, upstream)
    return loss, grad


def loss_gradient(
    trajs: Sequence[dyn.Trajectory],
    policy: MlpPolicy,
    target: Policy,
    system: dyn.DynamicsSystem,
    mode: str = "model_based",
) -> np.ndarray:
    """Parameter subgradient of the summed imitation objective over all states.

    Matches central finite differences away from kinks; trajectory states are
    treated as fixed data (the ERM subproblem optimizes the policy along
    rollouts of the data-generating policy, not through them).
    """
    states = _stack_states(trajs)
    targets = np.asarray(target(states), dtype=float)
    _, grad = _loss_and_grad(policy, system, states, targets, mode)
    return grad


def _penalty_and_grad(
    policy: MlpPolicy,
    system: dyn.DynamicsSystem,
    penalty: StabilityPenalty,
    states: np.ndarray,
    u_roll: np.ndarray,
    u_star: np.ndarray,
    alpha: float,
    w: float,
) -> Tuple[float, np.ndarray]:
    """Hinge on the certificate decrement of the candidate mixed closed loop.

    The mixed policy is ``[(1-alpha) pi_roll + alpha pi - w pi_star]/(1-w)``;
    its closed-loop map is pushed through the quadratic certificate against
    the origin (a fixed point of every admissible loop), with no input term.
    """
    cert = penalty.certificate
    if cert.matrix is None:
        raise PreconditionError(
            "stability penalty needs a quadratic certificate (matrix is None)"
        )
    x_mat = cert.matrix
    c_roll = (1.0 - alpha) / (1.0 - w)
    c_new = alpha / (1.0 - w)
    c_star = -w / (1.0 - w)
    u_mix = c_roll * u_roll + c_new * np.asarray(policy(states), dtype=float) + c_star * u_star
    x_next = dyn.batch_step(system, states, u_mix)
    v_next = np.einsum("bi,ij,bj->b", x_next, x_mat, x_next)
    v_here = np.einsum("bi,ij,bj->b", states, x_mat, states)
    dist = np.linalg.norm(states, axis=1)
    decay = cert.frak_a * np.minimum(dist**cert.a0, dist**cert.a1)
    residual = v_next - v_here + decay
    active = residual > 0
    if penalty.region_radius is not None:
        active &= dist <= penalty.region_radius
    value = float(np.sum(residual[active]))
    if not np.any(active):
        return 0.0, np.zeros(policy.num_params)
    upstream_state = 2.0 * (x_next[active] @ x_mat)
    if system.gain_constant is not None:
        upstream_u = upstream_state @ system.gain_constant
    elif system.gain_diag is not None:
        upstream_u = system.gain_diag(states[active]) * upstream_state
    else:
        upstream_u = np.stack(
            [
                system.input_gain(states[active][i]).T @ upstream_state[i]
                for i in range(upstream_state.shape[0])
            ]
        )
    grad = c_new * policy.grad_batch(states[active], upstream_u)
    return value, grad


# ---------------------------------------------------------------------------
# Constrained ERM (soft realization)


def cerm(
    trajs: Sequence[dyn.Trajectory],
    pi_roll: Policy,
    pi_star: Policy,
    c: float,
    w: float,
    train: TrainConfig,
    system: dyn.DynamicsSystem,
    alpha: float = 1.0,
    warm_start: Optional[MlpPolicy] = None,
    stream: Tuple[int, ...] = (),
) -> MlpPolicy:
    """Minimize the empirical imitation loss against the expert by Adam.

    The trust-region budget ``c`` is realized softly: optimization warm-starts
    at the previous epoch's parameters (fresh seeded init when there are
    none) and relies on the configured small learning rate; the caller logs
    and flags the achieved trust value.  When a stability penalty is set the
    candidate mixed policy's closed loop (mixing rate ``alpha``, de-mix weight
    ``w``) is additionally penalized through the certificate.
    """
    if not trajs:
        raise PreconditionError("cERM needs at least one trajectory")
    if not 0.0 <= w < 1.0:
        raise PreconditionError("w must lie in [0, 1)")
    del c  # recorded by the caller; not enforced here

    states = _stack_states(trajs)
    targets = np.asarray(pi_star(states), dtype=float)

    if warm_start is not None:
        policy = warm_start
    else:
        init_rng = _rng(train.seed, _STREAM_INIT, *stream)
        policy = random_mlp(
            system.state_dim,
            train.hidden,
            system.input_dim,
            train.activation,
            seed=int(init_rng.integers(2**32)),
        )

    penalty = train.stability_penalty
    use_penalty = penalty is not None and penalty.weight > 0.0
    if use_penalty:
        u_roll = np.asarray(pi_roll(states), dtype=float)
        u_star = targets

    holdout = None
    if train.early_stop_patience is not None and states.shape[0] >= 20:
        split_rng = _rng(train.seed, _STREAM_SPLIT, *stream)
        perm = split_rng.permutation(states.shape[0])
        n_hold = max(1, int(round(train.holdout_fraction * states.shape[0])))
        holdout = perm[:n_hold]
        keep = perm[n_hold:]
        hold_states, hold_targets = states[holdout], targets[holdout]
        states, targets = states[keep], targets[keep]
        if use_penalty:
            u_roll, u_star = u_roll[keep], u_star[keep]

    theta = policy.params()
    adam = AdamState.zeros(theta.size)
    shuffle_rng = _rng(train.seed, _STREAM_SHUFFLE, *stream)
    n = states.shape[0]
    best_risk = math.inf
    risk_increases = 0

    for epoch in range(train.epochs_optimizer):
        order = shuffle_rng.permutation(n)
        for b_idx, start in enumerate(range(0, n, train.batch_size)):
            batch = order[start : start + train.batch_size]
            candidate = policy.with_params(theta)
            loss, grad = _loss_and_grad(
                candidate, system, states[batch], targets[batch], train.loss_mode
            )
            if use_penalty:
                pen, pen_grad = _penalty_and_grad(
                    candidate,
                    system,
                    penalty,
                    states[batch],
                    u_roll[batch],
                    u_star[batch],
                    alpha,
                    w,
                )
                loss += penalty.weight * pen
                grad = grad + penalty.weight * pen_grad
            scale = 1.0 / batch.size
            loss *= scale
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingDivergenceError(epoch, b_idx)
            theta, adam = adam_step(theta, scale * grad, adam, train.learning_rate)
            if train.projection_radius is not None:
                norm = float(np.linalg.norm(theta))
                if norm > train.projection_radius:
                    theta *= train.projection_radius / norm
        if holdout is not None:
            candidate = policy.with_params(theta)
            risk, _ = _loss_and_grad(
                candidate, system, hold_states, hold_targets, train.loss_mode
            )
            if risk > best_risk:
                risk_increases += 1
                if risk_increases >= train.early_stop_patience:
                    break
            else:
                best_risk = risk

    return policy.with_params(theta)


# ---------------------------------------------------------------------------
# Algorithm configuration and records


@dataclass(frozen=True)
class CMILeConfig:
    """Shared configuration of the iterative imitation learners.

    ``epochs`` must divide ``total_trajectories``; ``trust_constants`` (the
    optional per-epoch budgets for epochs 1..E-2) are logged and flagged, not
    enforced.  ``psi``/``l_delta``, when supplied, trigger a soft check of the
    theory's schedule conditions on (alpha, E).
    """

    total_trajectories: int
    epochs: int
    alpha: float
    horizon: int
    expert: Policy
    system: dyn.DynamicsSystem
    ic_sampler: Callable[[np.random.Generator], np.ndarray]
    train: TrainConfig
    trust_constants: Optional[Sequence[float]] = None
    psi: Optional[IgsParams] = None
    l_delta: Optional[float] = None
    learner: Optional[Callable] = None
    on_epoch: Optional[Callable] = None
    #: By default a diverging collection rollout aborts the run (naming the
    #: epoch and trajectory).  Studies on unstable plants may instead keep the
    #: surviving prefix as training data, mirroring survival-time scoring.
    truncate_divergent_rollouts: bool = False
    #: Optional survival bound on collection rollouts (component magnitude);
    #: states beyond it terminate the rollout like any divergence.
    collection_state_limit: Optional[float] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise PreconditionError("epochs must be >= 1")
        if self.total_trajectories % self.epochs != 0:
            raise PreconditionError(
                f"epochs ({self.epochs}) must divide the trajectory budget "
                f"({self.total_trajectories})"
            )
        if not 0.0 < self.alpha <= 1.0:
            raise PreconditionError("alpha must lie in (0, 1]")
        if self.horizon < 1:
            raise PreconditionError("horizon must be >= 1")
        if self.trust_constants is not None and len(self.trust_constants) not in (
            0,
            max(0, self.epochs - 2),
        ):
            raise PreconditionError(
                "trust_constants must supply one budget per epoch 1..E-2"
            )
        self._theory_check()

    def _theory_check(self):
        if self.psi is None:
            return
        if not self.psi.satisfies_restricted_form():
            warnings.warn(
                "gain-stability parameters are outside the restricted form the "
                "learning guarantees assume (a == a0, b0 == b1, zeta, gamma >= 1, a >= b0)",
                stacklevel=3,
            )
        alpha = self.alpha
        if self.epochs < math.log(1.0 / alpha) / alpha:
            warnings.warn(
                f"epochs E = {self.epochs} is below (1/alpha) log(1/alpha) "
                f"= {math.log(1.0 / alpha) / alpha:.3g}; the mixing schedule "
                "is outside the analyzed regime",
                stacklevel=3,
            )
        if self.l_delta is not None:
            limit = min(
                0.5,
                1.0
                / (
                    self.l_delta
                    * self.psi.gamma ** (1.0 / self.psi.a)
                    * self.horizon ** (1.0 - 1.0 / self.psi.a1)
                ),
            )
            if alpha > limit:
                warnings.warn(
                    f"alpha = {alpha} exceeds the analyzed limit {limit:.3g}",
                    stacklevel=3,
                )

    @property
    def per_epoch(self) -> int:
        return self.total_trajectories // self.epochs


@dataclass(frozen=True)
class EpochRecord:
    """Audit-trail entry for one epoch of an iterative learner."""

    epoch: int
    policy_id: str
    trajectories: int
    train_loss: float
    trust_value: float
    c_k: float
    wallclock_ms: float
    trust_flagged: bool = False


def write_epoch_log(records: Sequence[EpochRecord], path) -> None:
    """Audit log: one CSV row per epoch."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "train_loss", "trust_value", "c_k", "wallclock_ms"])
        for r in records:
            writer.writerow(
                [r.epoch, repr(r.train_loss), repr(r.trust_value), repr(r.c_k), repr(r.wallclock_ms)]
            )


class RolloutCollectionError(DivergenceError):
    """A training rollout diverged; names the epoch and trajectory."""

    def __init__(self, epoch: int, trajectory: int, step: int):
        self.epoch = epoch
        self.trajectory = trajectory
        super().__init__(
            step,
            f"rollout diverged at epoch {epoch}, trajectory {trajectory}, step {step}",
        )


def _collect(cfg: CMILeConfig, policy: Policy, epoch: int) -> List[dyn.Trajectory]:
    rng = _rng(cfg.train.seed, _STREAM_IC, epoch)
    ics = [cfg.ic_sampler(rng) for _ in range(cfg.per_epoch)]
    trajs = []
    truncated = 0
    for i, xi in enumerate(ics):
        try:
            trajs.append(
                dyn.rollout_closed(
                    cfg.system, policy, xi, cfg.horizon, cfg.collection_state_limit
                )
            )
        except DivergenceError as exc:
            if not cfg.truncate_divergent_rollouts:
                raise RolloutCollectionError(epoch, i, exc.step) from exc
            truncated += 1
            survived = exc.step - 1
            if survived >= 1:
                trajs.append(
                    dyn.rollout_closed(
                        cfg.system, policy, xi, survived, cfg.collection_state_limit
                    )
                )
    if truncated:
        warnings.warn(
            f"epoch {epoch}: {truncated}/{len(ics)} collection rollouts diverged "
            "and were truncated to their surviving prefix",
            stacklevel=3,
        )
    if not trajs:
        raise RolloutCollectionError(epoch, 0, 1)
    return trajs


def _run_learner(cfg, trajs, pi_roll, c, w, warm_start, epoch):
    if cfg.learner is not None:
        return cfg.learner(trajs, pi_roll, c, w, warm_start, cfg, epoch)
    return cerm(
        trajs,
        pi_roll,
        cfg.expert,
        c,
        w,
        cfg.train,
        cfg.system,
        alpha=cfg.alpha,
        warm_start=warm_start,
        stream=(epoch,),
    )


def _alpha_fraction(alpha: float) -> Fraction:
    return Fraction(float(alpha))


def cmile(cfg: CMILeConfig, aggregate: bool = False) -> Tuple[Policy, List[EpochRecord]]:
    """Mixing iterative learner with trust-region ERM and final de-mixing.

    Starts from the expert as the data-generating policy and shifts weight
    ``alpha`` per epoch onto freshly learned policies; the last epoch trains
    with the residual expert weight announced, then removes it exactly.  With
    ``aggregate=True``, each epoch trains on the union of all data so far.
    """
    a = _alpha_fraction(cfg.alpha)
    records: List[EpochRecord] = []
    pi_k: Policy = cfg.expert
    pi_hat: Optional[MlpPolicy] = None
    c_k = 0.0
    pool: List[dyn.Trajectory] = []

    def trust_budget(k: int) -> Optional[float]:
        if k == 0:
            return None  # c_0 = 0 comes from the algorithm, not configuration
        if cfg.trust_constants and k - 1 < len(cfg.trust_constants):
            return float(cfg.trust_constants[k - 1])
        return None

    for k in range(cfg.epochs - 1):
        start = time.perf_counter()
        trajs = _collect(cfg, pi_k, k)
        pool.extend(trajs)
        training_set = pool if aggregate else trajs
        budget = trust_budget(k)
        c_k = 0.0 if k == 0 else (budget if budget is not None else math.nan)
        warm = pi_hat if isinstance(pi_hat, MlpPolicy) else None
        pi_hat = _run_learner(cfg, training_set, pi_k, c_k, 0.0, warm, k)
        trust = empirical_loss(trajs, cfg.system, pi_hat, pi_k, cfg.train.loss_mode)
        train_loss = empirical_loss(
            training_set, cfg.system, pi_hat, cfg.expert, cfg.train.loss_mode
        )
        flagged = budget is not None and trust > budget
        if flagged:
            warnings.warn(
                f"epoch {k}: trust value {trust:.4g} exceeds configured budget "
                f"{budget:.4g}",
                stacklevel=2,
            )
        records.append(
            EpochRecord(
                epoch=k,
                policy_id="expert" if k == 0 else f"mixture-{k}",
                trajectories=len(trajs),
                train_loss=train_loss,
                trust_value=trust,
                c_k=c_k,
                wallclock_ms=1000.0 * (time.perf_counter() - start),
                trust_flagged=flagged,
            )
        )
        if cfg.on_epoch is not None:
            cfg.on_epoch(k, pi_k, pi_hat)
        pi_k = mix(pi_k, pi_hat, cfg.alpha)

    # Final epoch: announce the residual expert weight, then de-mix it away.
    k = cfg.epochs - 1
    start = time.perf_counter()
    trajs = _collect(cfg, pi_k, k)
    pool.extend(trajs)
    training_set = pool if aggregate else trajs
    residual = (1 - a) ** cfg.epochs
    c_last = float(residual / a) * float(
        np.mean(
            [
                imitation_loss(cfg.system, t, pi_k, cfg.expert, cfg.train.loss_mode)
                for t in trajs
            ]
        )
    )
    warm = pi_hat if isinstance(pi_hat, MlpPolicy) else None
    pi_hat = _run_learner(cfg, training_set, pi_k, c_last, float(residual), warm, k)
    trust = empirical_loss(trajs, cfg.system, pi_hat, pi_k, cfg.train.loss_mode)
    train_loss = empirical_loss(
        training_set, cfg.system, pi_hat, cfg.expert, cfg.train.loss_mode
    )
    records.append(
        EpochRecord(
            epoch=k,
            policy_id="expert" if k == 0 else f"mixture-{k}",
            trajectories=len(trajs),
            train_loss=train_loss,
            trust_value=trust,
            c_k=c_last,
            wallclock_ms=1000.0 * (time.perf_counter() - start),
            trust_flagged=False,
        )
    )
    if cfg.on_epoch is not None:
        cfg.on_epoch(k, pi_k, pi_hat)
    pi_final = demix_final(pi_k, pi_hat, cfg.expert, cfg.alpha, cfg.epochs)
    return pi_final, records


def cmile_agg(cfg: CMILeConfig) -> Tuple[Policy, List[EpochRecord]]:
    """Mixing iterative learner training on all data collected so far."""
    return cmile(cfg, aggregate=True)


def behavior_cloning(cfg: CMILeConfig) -> Tuple[Policy, List[EpochRecord]]:
    """Single-epoch special case: train once on expert data, no mixing left."""
    if cfg.epochs != 1 or cfg.alpha != 1.0:
        raise PreconditionError("behavior cloning requires epochs = 1 and alpha = 1")
    return cmile(cfg)


def dagger(cfg: CMILeConfig) -> Tuple[Policy, List[EpochRecord]]:
    """DAgger with expert weight ``(1-alpha)^k`` at epoch k.

    Rolls the expert/learner mixture, labels every visited state with the
    expert, aggregates the dataset, and retrains from scratch each epoch;
    returns the policy with the best loss on a held-out 5% validation split.
    """
    records: List[EpochRecord] = []
    pool: List[dyn.Trajectory] = []
    pi_hat: Optional[MlpPolicy] = None
    best: Tuple[float, Optional[MlpPolicy]] = (math.inf, None)
    a = _alpha_fraction(cfg.alpha)

    for k in range(cfg.epochs):
        start = time.perf_counter()
        beta = float((1 - a) ** k)
        if pi_hat is None or beta == 1.0:
            roll_policy: Policy = cfg.expert
        elif beta == 0.0:
            roll_policy = pi_hat
        else:
            roll_policy = mix(pi_hat, cfg.expert, beta)
        trajs = _collect(cfg, roll_policy, k)
        pool.extend(trajs)

        split_rng = _rng(cfg.train.seed, _STREAM_SPLIT, k)
        order = split_rng.permutation(len(pool))
        n_val = max(1, int(round(0.05 * len(pool)))) if len(pool) >= 2 else 0
        val_idx = set(order[:n_val].tolist())
        train_set = [pool[i] for i in range(len(pool)) if i not in val_idx]
        val_set = [pool[i] for i in sorted(val_idx)] or train_set

        pi_hat = _run_learner(cfg, train_set, roll_policy, math.nan, 0.0, None, k)
        val_loss = empirical_loss(val_set, cfg.system, pi_hat, cfg.expert, cfg.train.loss_mode)
        train_loss = empirical_loss(
            train_set, cfg.system, pi_hat, cfg.expert, cfg.train.loss_mode
        )
        if val_loss < best[0]:
            best = (val_loss, pi_hat)
        records.append(
            EpochRecord(
                epoch=k,
                policy_id=f"expert-mix-{beta:.6g}",
                trajectories=len(trajs),
                train_loss=train_loss,
                trust_value=math.nan,
                c_k=math.nan,
                wallclock_ms=1000.0 * (time.perf_counter() - start),
            )
        )
        if cfg.on_epoch is not None:
            cfg.on_epoch(k, roll_policy, pi_hat)

    assert best[1] is not None
    return best[1], records
