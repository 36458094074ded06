"""Command-line interface.

Subcommands: ``simulate`` (roll a bundled system to a trajectory CSV),
``certify`` (sampled falsification of a certificate; nonzero exit on
violations), ``bounds`` (discrepancy-bound demo), ``train`` (one learner run
with audit log and checkpoints), and ``experiment`` (the configured studies).

Exit codes: 0 success, 2 precondition violations, 3 certification violations,
64 usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import linalg as la
from .errors import IgstabError
from .experiments import (
    SEED_ENV_VAR,
    build_study_config,
    load_study_config,
    run_study,
)
from .learning import CMILeConfig, TrainConfig, behavior_cloning, cmile, cmile_agg, dagger, write_epoch_log
from .policies import AffinePolicy, LinearPolicy, load_policy, random_mlp, save_policy
from .stability import (
    IgsParams,
    check_contraction_metric,
    check_igs_on_trajectories,
    check_lyapunov_decrement,
    observed_contraction_factor,
    p_system_certificate,
    p_system_igs_params,
    random_igs_cases,
    random_pointwise_cases,
)

log = logging.getLogger("igstab")

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_VIOLATIONS = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 64, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _parse_overrides(pairs):
    overrides = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise IgstabError(f"override must look like key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def _build_parser() -> _Parser:
    parser = _Parser(prog="igstab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="roll a system and write a trajectory CSV")
    sim.add_argument(
        "--system",
        choices=["prop6", "psystem", "lti", "log-system", "gradient-descent"],
        default="prop6",
    )
    sim.add_argument("--p", type=float, default=1.0)
    sim.add_argument("--eta", type=float, default=0.5)
    sim.add_argument("--dim", type=int, default=0)
    sim.add_argument("--a-matrix", help="CSV file with the A matrix (lti)")
    sim.add_argument("--b-matrix", help="CSV file with the B matrix (lti)")
    sim.add_argument("--policy", default="zero", help="zero | expert | path to a policy JSON")
    sim.add_argument("--expert-seed", type=int, default=0)
    sim.add_argument("--xi", help="comma-separated initial condition (default: seeded Gaussian)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--steps", type=int, default=50)
    sim.add_argument("--out", default="trajectory.csv")

    cert = sub.add_parser("certify", help="falsification-test a certificate")
    cert.add_argument(
        "--check",
        choices=["p-lyapunov", "p-igs", "contraction-log", "contraction-gd"],
        default="p-igs",
    )
    cert.add_argument("--p", type=float, default=1.0)
    cert.add_argument("--eta", type=float, default=0.5)
    cert.add_argument("--samples", type=int, default=10_000)
    cert.add_argument("--t-max", type=int, default=200)
    cert.add_argument("--seed", type=int, default=0)
    cert.add_argument("--zeta", type=float, help="override the certificate's zeta")
    cert.add_argument("--gamma", type=float, help="override the certificate's gamma")
    cert.add_argument("--out", help="also write the report JSON here")

    bounds = sub.add_parser("bounds", help="run the discrepancy-bounds demo")
    _add_study_io(bounds)

    train = sub.add_parser("train", help="train one imitation learner on the p-family task")
    train.add_argument("--algo", choices=["bc", "cmile", "cmile_agg", "dagger"], default="cmile")
    train.add_argument("--config", help="INI config; the p_sweep section supplies the task")
    train.add_argument("--set", action="append", metavar="KEY=VALUE", dest="overrides")
    train.add_argument("--p", type=float)
    train.add_argument("--trial-seed", type=int, default=0)
    train.add_argument("--out", default="train_out")

    exp = sub.add_parser("experiment", help="run a configured study")
    exp.add_argument("study", choices=["p_sweep", "lq_stability", "bounds_demo"])
    _add_study_io(exp)
    exp.add_argument("--trials", type=int)
    exp.add_argument("--m", type=int)
    exp.add_argument("--seed", type=int)

    return parser


def _add_study_io(parser):
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", dest="overrides")
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--no-figures", action="store_true")


def _simulate(args) -> int:
    if args.system == "lti":
        if not args.a_matrix or not args.b_matrix:
            raise IgstabError("lti simulation needs --a-matrix and --b-matrix CSV files")
        system = dyn.make_lti(la.load_matrix_csv(args.a_matrix), la.load_matrix_csv(args.b_matrix))
    elif args.system == "prop6":
        system = dyn.make_p_system(dyn.PSystemSpec(p=args.p, eta=args.eta, variant="prop6"))
    elif args.system == "psystem":
        dim = args.dim or 10
        h = random_mlp(dim, 32, dim, "tanh", seed=args.expert_seed)
        system = dyn.make_p_system(
            dyn.PSystemSpec(p=args.p, eta=args.eta, variant="experiment", dim=dim, h=h)
        )
    elif args.system == "log-system":
        system, _ = dyn.make_contracting_example("log_system")
    else:
        system, _ = dyn.make_contracting_example(
            "gradient-descent".replace("-", "_"), hessian=np.eye(args.dim or 2), eta=args.eta
        )

    if args.policy == "zero":
        policy = LinearPolicy(np.zeros((system.input_dim, system.state_dim)))
    elif args.policy == "expert":
        if args.system != "psystem":
            raise IgstabError("the bundled expert exists for --system psystem only")
        h = random_mlp(system.state_dim, 32, system.state_dim, "tanh", seed=args.expert_seed)
        policy = AffinePolicy([(-1, h)])
    else:
        policy = load_policy(args.policy)

    if args.xi:
        xi = np.array([float(v) for v in args.xi.split(",")])
    else:
        xi = np.random.default_rng(args.seed).standard_normal(system.state_dim)
    traj = dyn.rollout_closed(system, policy, xi, args.steps)
    dyn.write_trajectory_csv(traj, args.out)
    print(f"wrote {args.steps}-step trajectory to {args.out}")
    return EXIT_OK


def _certify(args) -> int:
    if args.check == "p-igs":
        system = dyn.make_p_system(dyn.PSystemSpec(p=args.p, eta=args.eta, variant="prop6"))
        psi = p_system_igs_params(args.p, args.eta)
        if args.zeta is not None or args.gamma is not None:
            psi = IgsParams(
                psi.a,
                psi.a0,
                psi.a1,
                psi.b0,
                psi.b1,
                psi.zeta if args.zeta is None else args.zeta,
                psi.gamma if args.gamma is None else args.gamma,
            )
        cases = random_igs_cases(system, args.samples, seed=args.seed, t_max=args.t_max)
        report = check_igs_on_trajectories(psi, system, cases)
    elif args.check == "p-lyapunov":
        system = dyn.make_p_system(dyn.PSystemSpec(p=args.p, eta=args.eta, variant="prop6"))
        cert = p_system_certificate(args.p, args.eta)
        cases = random_pointwise_cases(system, args.samples, seed=args.seed)
        report = check_lyapunov_decrement(cert, system, cases)
    elif args.check == "contraction-log":
        system, metric = dyn.make_contracting_example("log_system")
        grid = np.linspace(-10.0, 10.0, args.samples).reshape(-1, 1)
        rho = min(1.0 - 1e-12, observed_contraction_factor(system, metric, grid) + 1e-9)
        report = check_contraction_metric(system, metric, rho, grid)
    else:
        rng = np.random.default_rng(args.seed)
        q = rng.standard_normal((3, 3))
        hessian = q @ q.T + 0.5 * np.eye(3)
        eta = 1.0 / float(np.linalg.eigvalsh(hessian)[-1])
        system, metric = dyn.make_contracting_example("gradient_descent", hessian=hessian, eta=eta)
        rho = float(np.linalg.norm(np.eye(3) - eta * hessian, 2)) ** 2
        grid = rng.uniform(-10, 10, size=(args.samples, 3))
        report = check_contraction_metric(system, metric, rho, grid)

    payload = json.dumps(report.to_json_dict(), indent=2)
    print(payload)
    if args.out:
        Path(args.out).write_text(payload + "\n")
    return EXIT_VIOLATIONS if report.violations > 0 else EXIT_OK


def _study_command(study: str, args) -> int:
    overrides = _parse_overrides(args.overrides)
    for flag in ("trials", "m", "seed"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = str(value)
    cfg = load_study_config(study, args.config, overrides)
    records = run_study(study, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .reporting import render_figure, write_records_csv

    csv_path = out_dir / f"{study}.csv"
    write_records_csv(records, csv_path)
    print(f"wrote {len(records)} records to {csv_path}")
    if not args.no_figures:
        fig_path = render_figure(study, records, out_dir / f"{study}.png")
        print(f"wrote figure to {fig_path}")
    return EXIT_OK


def _train(args) -> int:
    from .experiments import PSweepConfig

    overrides = _parse_overrides(args.overrides)
    cfg = load_study_config("p_sweep", args.config, overrides)
    assert isinstance(cfg, PSweepConfig)
    p = args.p if args.p is not None else cfg.p_values[0]
    trial_seed = args.trial_seed + cfg.seed
    rng = np.random.default_rng(np.random.SeedSequence([trial_seed, 11, 0]))
    h = random_mlp(cfg.dim, cfg.expert_hidden, cfg.dim, "tanh", seed=int(rng.integers(2**32)))
    system = dyn.make_p_system(
        dyn.PSystemSpec(p=p, eta=cfg.eta, variant="experiment", dim=cfg.dim, h=h)
    )
    expert = AffinePolicy([(-1, h)])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def checkpoint(epoch, _pi_roll, pi_hat):
        save_policy(pi_hat, out_dir / f"policy_epoch_{epoch:03d}.json")

    algo = {"bc": behavior_cloning, "cmile": cmile, "cmile_agg": cmile_agg, "dagger": dagger}[
        args.algo
    ]
    bc_mode = args.algo == "bc"
    run_cfg = CMILeConfig(
        total_trajectories=cfg.m,
        epochs=1 if bc_mode else cfg.epochs,
        alpha=1.0 if bc_mode else cfg.alpha,
        horizon=cfg.horizon,
        expert=expert,
        system=system,
        ic_sampler=lambda r: r.standard_normal(cfg.dim),
        train=TrainConfig(
            epochs_optimizer=cfg.train_epochs,
            learning_rate=cfg.learning_rate,
            batch_size=cfg.batch_size,
            seed=trial_seed,
            hidden=cfg.hidden,
            activation=cfg.activation,
            loss_mode=cfg.train_loss_mode,
        ),
        on_epoch=checkpoint,
    )
    policy, records = algo(run_cfg)
    write_epoch_log(records, out_dir / "audit.csv")
    save_policy(policy, out_dir / "policy_final.json")
    print(f"trained {args.algo} (p={p:g}); audit log and checkpoints in {out_dir}")
    return EXIT_OK


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if os.environ.get(SEED_ENV_VAR):
        log.info("%s=%s is set and overrides configured seeds", SEED_ENV_VAR, os.environ[SEED_ENV_VAR])
    try:
        if args.command == "simulate":
            return _simulate(args)
        if args.command == "certify":
            return _certify(args)
        if args.command == "bounds":
            return _study_command("bounds_demo", args)
        if args.command == "train":
            return _train(args)
        if args.command == "experiment":
            return _study_command(args.study, args)
    except IgstabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    raise AssertionError("unreachable")


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
