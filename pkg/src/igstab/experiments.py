"""Desk-scale studies: the tunable p-family sweep, the LQ stability-constraint
study, and the discrepancy-bounds demo.

Every study cell (trial x parameter point) owns an independent seeded stream,
so cells are order-independent pure functions and may run in parallel; records
are merged in sorted-key order before writing, which makes repeated runs with
the same configuration byte-identical.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import dynamics as dyn
from . import linalg as la
from .errors import ConvergenceError, PreconditionError
from .learning import (
    CMILeConfig,
    StabilityPenalty,
    TrainConfig,
    behavior_cloning,
    cmile,
    cmile_agg,
    dagger,
)
from .policies import AffinePolicy, LinearPolicy, random_mlp
from .stability import (
    build_robust_lqr_certificate,
    disc_bound_inputs,
    gronwall_bound,
    p_system_igs_params,
)

log = logging.getLogger("igstab")

SEED_ENV_VAR = "IGSTAB_SEED"

_STREAM_EXPERT = 11
_STREAM_EVAL = 12
_STREAM_SYSTEM = 13
_STREAM_TRAIN = 14
_STREAM_CASES = 15


def _rng(*tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(t) for t in tags]))


@dataclass(frozen=True)
class ResultRecord:
    """One aggregated measurement: percentiles are over test rollouts (or
    sampled cases) within a single trial."""

    study: str
    seed: int
    algorithm: str
    param: str
    metric: str
    median: float
    p20: float
    p80: float

    def __post_init__(self):
        if not (self.p20 <= self.median <= self.p80) and not math.isnan(self.median):
            raise PreconditionError("percentiles must satisfy p20 <= median <= p80")


def _percentile_record(study, seed, algorithm, param, metric, values) -> ResultRecord:
    values = np.asarray(values, dtype=float)
    p20, med, p80 = np.percentile(values, [20.0, 50.0, 80.0])
    return ResultRecord(study, seed, algorithm, param, metric, float(med), float(p20), float(p80))


# ---------------------------------------------------------------------------
# Study configurations (desk scale by default)


@dataclass(frozen=True)
class PSweepConfig:
    """Desk-scale defaults for the tunable-stability sweep.

    Relative to the reference study (m=250, T=100, E=25, alpha=0.15, width-64
    learners, 300 optimizer epochs, 500 test rollouts, 50 trials), the desk
    scale shrinks the data (m=100, T=50), uses fewer/larger collection epochs
    (E=10, alpha=0.3, matching the residual expert weight (1-alpha)^E), trims
    the optimizer budget, and sharpens the expert network
    (``expert_weight_scale``) so the task stays in the underfit regime where
    covariate shift is visible despite the smaller corpus.
    """

    p_values: Tuple[float, ...] = (1.0, 3.0, 5.0)
    trials: int = 5
    m: int = 100
    horizon: int = 50
    epochs: int = 10
    alpha: float = 0.3
    dim: int = 10
    eta: float = 0.5
    expert_hidden: int = 32
    expert_weight_scale: float = 3.0
    hidden: int = 64
    activation: str = "tanh"
    train_epochs: int = 100
    learning_rate: float = 0.01
    batch_size: int = 512
    train_loss_mode: str = "model_free"
    test_rollouts: int = 200
    algorithms: Tuple[str, ...] = ("bc", "cmile", "cmile_agg", "dagger")
    seed: int = 0
    full_scale: bool = False


FULL_SCALE_P_SWEEP = dict(
    p_values=(1.0, 2.0, 3.0, 4.0, 5.0),
    trials=50,
    m=250,
    horizon=100,
    epochs=25,
    alpha=0.15,
    expert_hidden=32,
    expert_weight_scale=1.0,
    hidden=64,
    train_epochs=300,
    test_rollouts=500,
)


@dataclass(frozen=True)
class LqStabilityConfig:
    """Desk-scale defaults for the stability-constraint study.

    One random unstable (A, B) pair is drawn per seed (rescaled to the
    reference spectral radius / gain norm); each (nu, budget, variant) cell
    runs ``trials`` independent learning runs on it.  Mirroring the reference
    study, the penalized variant trains ``penalized_epochs_factor`` times
    longer than the unpenalized one (the constrained problem is harder to
    optimize).
    """

    nu_values: Tuple[float, ...] = (1e-4, 1e-2)
    budgets: Tuple[int, ...] = (20, 200)
    seeds: Tuple[int, ...] = (0, 1, 2)
    trials: int = 3
    n: int = 10
    d: int = 4
    horizon: int = 25
    epochs: int = 4
    alpha: float = 0.3
    hidden: int = 32
    activation: str = "relu"
    train_epochs: int = 400
    penalized_epochs_factor: float = 2.0
    learning_rate: float = 0.01
    batch_size: int = 512
    train_loss_mode: str = "model_free"
    penalty_weight: float = 0.1
    penalty_region_radius: float = 25.0
    certificate_eps: float = 1e-3
    collection_state_limit: float = 1e3
    rho_target: float = 3.638
    b_norm_target: float = 4.964
    ic_std: float = 2.0
    test_rollouts: int = 100


@dataclass(frozen=True)
class BoundsDemoConfig:
    p: float = 1.0
    eta: float = 0.5
    horizons: Tuple[int, ...] = (4, 16, 64, 256)
    magnitudes: Tuple[float, ...] = (0.1, 1.0)
    cases: int = 1000
    xi_std: float = 1.0
    seed: int = 0


# ---------------------------------------------------------------------------
# Shared evaluation helpers


def _gaussian_ic(dim: int, std: float) -> Callable[[np.random.Generator], np.ndarray]:
    return lambda rng: std * rng.standard_normal(dim)


def _flag_divergences(study: str, label: str, alive, horizon: int) -> None:
    n_bad = int(np.count_nonzero(alive < horizon))
    if n_bad:
        log.warning(
            "%s: %s: %d/%d test rollouts diverged; scoring last finite state",
            study,
            label,
            n_bad,
            len(alive),
        )


def _final_state_gap(expert_states, learner_states) -> np.ndarray:
    return np.linalg.norm(expert_states[:, -1, :] - learner_states[:, -1, :], axis=1)


def _avg_closed_loop_loss(system, states, alive, policy, expert, horizon) -> np.ndarray:
    """Per-rollout mean per-step loss of ``policy`` against ``expert`` along
    the policy's own states (states beyond a divergence are excluded)."""
    n_cases = states.shape[0]
    flat = states[:, :horizon, :].reshape(n_cases * horizon, -1)
    delta = np.asarray(policy(flat), dtype=float) - np.asarray(expert(flat), dtype=float)
    weighted = dyn.batch_gain_apply(system, flat, delta)
    norms = np.linalg.norm(weighted, axis=1).reshape(n_cases, horizon)
    steps = np.arange(horizon)[None, :]
    valid = steps < np.asarray(alive)[:, None]
    norms = np.where(valid, norms, 0.0)
    return norms.sum(axis=1) / horizon


_ALGORITHMS = {
    "bc": behavior_cloning,
    "cmile": cmile,
    "cmile_agg": cmile_agg,
    "dagger": dagger,
}


def run_p_sweep(cfg: PSweepConfig, learner: Optional[Callable] = None) -> List[ResultRecord]:
    """Sweep the nonlinearity degree p; report goal deviation and average
    closed-loop imitation loss per (p, trial, algorithm), paired on the same
    test initial conditions for expert and learner."""
    if cfg.full_scale:
        cfg = replace(cfg, **FULL_SCALE_P_SWEEP, full_scale=False)
    unknown = set(cfg.algorithms) - set(_ALGORITHMS)
    if unknown:
        raise PreconditionError(f"unknown algorithms: {sorted(unknown)}")
    records: List[ResultRecord] = []
    for p_idx, p in enumerate(cfg.p_values):
        for trial in range(cfg.trials):
            trial_seed = cfg.seed + trial
            expert_rng = _rng(trial_seed, _STREAM_EXPERT, p_idx)
            h = random_mlp(
                cfg.dim,
                cfg.expert_hidden,
                cfg.dim,
                "tanh",
                seed=int(expert_rng.integers(2**32)),
            )
            if cfg.expert_weight_scale != 1.0:
                # Sharper ridge features keep the regression hard at desk scale.
                from .policies import MlpPolicy

                h = MlpPolicy(cfg.expert_weight_scale * h.w1, h.w2, "tanh")
            system = dyn.make_p_system(
                dyn.PSystemSpec(p=p, eta=cfg.eta, variant="experiment", dim=cfg.dim, h=h)
            )
            expert = AffinePolicy([(-1, h)])
            eval_rng = _rng(trial_seed, _STREAM_EVAL, p_idx)
            test_ics = eval_rng.standard_normal((cfg.test_rollouts, cfg.dim))
            expert_states, expert_alive = dyn.batch_rollout_closed(
                system, expert, test_ics, cfg.horizon
            )
            param = f"p={p:g}"
            _flag_divergences("p_sweep", f"{param} expert trial {trial}", expert_alive, cfg.horizon)
            for algo_name in cfg.algorithms:
                bc_mode = algo_name == "bc"
                run_cfg = CMILeConfig(
                    total_trajectories=cfg.m,
                    epochs=1 if bc_mode else cfg.epochs,
                    alpha=1.0 if bc_mode else cfg.alpha,
                    horizon=cfg.horizon,
                    expert=expert,
                    system=system,
                    ic_sampler=_gaussian_ic(cfg.dim, 1.0),
                    train=TrainConfig(
                        epochs_optimizer=cfg.train_epochs,
                        learning_rate=cfg.learning_rate,
                        batch_size=cfg.batch_size,
                        seed=int(_rng(trial_seed, _STREAM_TRAIN, p_idx).integers(2**31)),
                        hidden=cfg.hidden,
                        activation=cfg.activation,
                        loss_mode=cfg.train_loss_mode,
                    ),
                    learner=learner,
                )
                policy, _ = _ALGORITHMS[algo_name](run_cfg)
                states, alive = dyn.batch_rollout_closed(
                    system, policy, test_ics, cfg.horizon
                )
                _flag_divergences("p_sweep", f"{param} {algo_name} trial {trial}", alive, cfg.horizon)
                deviations = _final_state_gap(expert_states, states)
                losses = _avg_closed_loop_loss(
                    system, states, alive, policy, expert, cfg.horizon
                )
                records.append(
                    _percentile_record(
                        "p_sweep", trial_seed, algo_name, param, "goal_deviation", deviations
                    )
                )
                records.append(
                    _percentile_record(
                        "p_sweep", trial_seed, algo_name, param, "avg_imitation_loss", losses
                    )
                )
    return sort_records(records)


def _draw_unstable_pair(cfg: LqStabilityConfig, seed: int):
    rng = _rng(seed, _STREAM_SYSTEM)
    a = rng.standard_normal((cfg.n, cfg.n))
    a *= cfg.rho_target / la.spectral_radius(a)
    b = rng.standard_normal((cfg.n, cfg.d))
    b *= cfg.b_norm_target / np.linalg.norm(b, 2)
    return a, b


def run_lq_stability(cfg: LqStabilityConfig, learner: Optional[Callable] = None) -> List[ResultRecord]:
    """Compare mixing iterative learning with and without the quadratic
    stability penalty on a randomly drawn unstable linear system, across
    expert fragility (nu) and trajectory budgets."""
    records: List[ResultRecord] = []
    for seed in cfg.seeds:
        a, b = _draw_unstable_pair(cfg, seed)
        system = dyn.make_lti(a, b)
        for nu in cfg.nu_values:
            try:
                p_star = la.solve_dare(a, b, nu * np.eye(cfg.n), np.eye(cfg.d))
            except ConvergenceError as exc:
                raise ConvergenceError(
                    f"DARE failed for the (A, B) pair drawn with seed {seed}: {exc}"
                ) from exc
            gain = -np.linalg.solve(
                np.eye(cfg.d) + b.T @ p_star @ b, b.T @ p_star @ a
            )
            expert = LinearPolicy(gain)
            a_cl = a + b @ gain
            rho_cl = la.spectral_radius(a_cl)
            gamma = math.sqrt((1.0 + rho_cl**2) / 2.0)
            cert = build_robust_lqr_certificate(a_cl, p_star, gamma, cfg.certificate_eps)
            eval_rng = _rng(seed, _STREAM_EVAL, int(1e6 * nu))
            test_ics = cfg.ic_std * eval_rng.standard_normal((cfg.test_rollouts, cfg.n))
            expert_states, _ = dyn.batch_rollout_closed(system, expert, test_ics, cfg.horizon)
            records.append(
                _percentile_record(
                    "lq_stability",
                    seed,
                    "expert",
                    f"nu={nu:g}",
                    "goal_error",
                    np.linalg.norm(expert_states[:, -1, :], axis=1),
                )
            )
            for budget in cfg.budgets:
                for penalized in (True, False):
                    algo = "cmile_penalized" if penalized else "cmile"
                    epochs_optimizer = int(
                        round(
                            cfg.train_epochs
                            * (cfg.penalized_epochs_factor if penalized else 1.0)
                        )
                    )
                    for trial in range(cfg.trials):
                        trial_seed = 1000 * seed + trial
                        train = TrainConfig(
                            epochs_optimizer=epochs_optimizer,
                            learning_rate=cfg.learning_rate,
                            batch_size=cfg.batch_size,
                            seed=int(
                                _rng(
                                    seed, _STREAM_TRAIN, int(1e6 * nu), budget, trial
                                ).integers(2**31)
                            ),
                            hidden=cfg.hidden,
                            activation=cfg.activation,
                            loss_mode=cfg.train_loss_mode,
                            stability_penalty=(
                                StabilityPenalty(
                                    cert, cfg.penalty_weight, cfg.penalty_region_radius
                                )
                                if penalized
                                else None
                            ),
                        )
                        run_cfg = CMILeConfig(
                            total_trajectories=budget,
                            epochs=cfg.epochs,
                            alpha=cfg.alpha,
                            horizon=cfg.horizon,
                            expert=expert,
                            system=system,
                            ic_sampler=_gaussian_ic(cfg.n, cfg.ic_std),
                            train=train,
                            learner=learner,
                            truncate_divergent_rollouts=True,
                            collection_state_limit=cfg.collection_state_limit,
                        )
                        policy, _ = cmile(run_cfg)
                        states, alive = dyn.batch_rollout_closed(
                            system, policy, test_ics, cfg.horizon
                        )
                        param = f"nu={nu:g}|m={budget}"
                        _flag_divergences(
                            "lq_stability",
                            f"{param} {algo} seed {seed} trial {trial}",
                            alive,
                            cfg.horizon,
                        )
                        goal = np.linalg.norm(states[:, -1, :], axis=1)
                        records.append(
                            _percentile_record(
                                "lq_stability", trial_seed, algo, param, "goal_error", goal
                            )
                        )
    return sort_records(records)


def run_bounds_demo(cfg: BoundsDemoConfig) -> List[ResultRecord]:
    """Measure input-perturbation discrepancies on the scalar p-family and
    compare them against the gain-stability and worst-case growth bounds."""
    system = dyn.make_p_system(dyn.PSystemSpec(p=cfg.p, eta=cfg.eta, variant="prop6"))
    psi = p_system_igs_params(cfg.p, cfg.eta)
    # Closed-loop Lipschitz rate: the saturating nonlinearity's slope is at
    # most 1 + (p+1)/4, so the autonomous map expands by at most this L.
    lipschitz = 1.0 + cfg.eta * (1.0 + (cfg.p + 1.0) / 4.0)
    records: List[ResultRecord] = []
    for horizon in cfg.horizons:
        for mag in cfg.magnitudes:
            rng = _rng(cfg.seed, _STREAM_CASES, horizon, int(1e6 * mag))
            xi = cfg.xi_std * rng.standard_normal((cfg.cases, 1))
            inputs = mag * rng.uniform(-1.0, 1.0, size=(cfg.cases, horizon, 1))
            driven, _ = dyn.batch_rollout_open(system, xi, inputs)
            autonomous, _ = dyn.batch_rollout_open(system, xi, None, horizon=horizon)
            measured = np.linalg.norm(driven - autonomous, axis=2).sum(axis=1)
            loss = np.abs(inputs[:, :, 0]).sum(axis=1)
            igs = np.array([disc_bound_inputs(psi, horizon, l) for l in loss])
            gron = np.array(
                [gronwall_bound(lipschitz, cfg.eta, horizon, cfg.eta * l) for l in loss]
            )
            param = f"T={horizon}|mag={mag:g}"
            for metric, values in (
                ("measured_disc", measured),
                ("igs_bound", igs),
                ("gronwall_bound", gron),
            ):
                records.append(
                    _percentile_record("bounds_demo", cfg.seed, "prop6", param, metric, values)
                )
    return sort_records(records)


def sort_records(records: Sequence[ResultRecord]) -> List[ResultRecord]:
    return sorted(
        records, key=lambda r: (r.study, r.param, r.algorithm, r.seed, r.metric)
    )


# ---------------------------------------------------------------------------
# Configuration file handling (INI; one flat section per study)

_STUDY_CONFIGS = {
    "p_sweep": PSweepConfig,
    "lq_stability": LqStabilityConfig,
    "bounds_demo": BoundsDemoConfig,
}

_STUDY_RUNNERS = {
    "p_sweep": run_p_sweep,
    "lq_stability": run_lq_stability,
    "bounds_demo": run_bounds_demo,
}


def _coerce(raw: str, target_type, name: str):
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise PreconditionError(f"cannot parse boolean {name}={raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is str:
        return raw
    # Tuples: comma-separated scalars; element type taken from the default.
    if isinstance(target_type, tuple):
        elem_type = target_type[1]
        items = [item for item in raw.split(",") if item.strip()]
        return tuple(elem_type(item.strip()) for item in items)
    raise PreconditionError(f"unsupported config field type for {name}")


def _field_types(config_cls):
    out = {}
    defaults = config_cls()
    for f in fields(config_cls):
        default = getattr(defaults, f.name)
        if isinstance(default, tuple):
            elem = type(default[0]) if default else float
            out[f.name] = ("tuple", elem)
        else:
            out[f.name] = type(default)
    return out


def build_study_config(study: str, options: dict):
    """Construct a study configuration from string-valued options."""
    if study not in _STUDY_CONFIGS:
        raise PreconditionError(
            f"unknown study {study!r}; expected one of {sorted(_STUDY_CONFIGS)}"
        )
    cls = _STUDY_CONFIGS[study]
    types = _field_types(cls)
    kwargs = {}
    for key, raw in options.items():
        if key not in types:
            raise PreconditionError(f"unknown option {key!r} for study {study!r}")
        kwargs[key] = _coerce(raw, types[key], key)
    return cls(**kwargs)


def load_study_config(study: str, config_path: Optional[str], overrides: dict):
    """Merge (in increasing precedence): defaults, the config file's study
    section, explicit overrides, and the seed environment variable."""
    import configparser

    options: dict = {}
    if config_path:
        parser = configparser.ConfigParser()
        read = parser.read(config_path)
        if not read:
            raise PreconditionError(f"config file not found: {config_path}")
        if parser.has_section(study):
            options.update(dict(parser.items(study)))
    options.update({k: str(v) for k, v in overrides.items()})
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        seed_field = "seeds" if study == "lq_stability" else "seed"
        options[seed_field] = env_seed
        log.info("seed overridden from %s=%s", SEED_ENV_VAR, env_seed)
    return build_study_config(study, options)


def run_study(study: str, cfg) -> List[ResultRecord]:
    return _STUDY_RUNNERS[study](cfg)
