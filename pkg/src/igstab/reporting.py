"""Result serialization and figure rendering.

The CSV files are the contract: rows are written in sorted-key order with
round-trippable float formatting, so identical configurations and seeds
produce byte-identical files.  Figures are rendered next to each CSV as a
convenience view of the same records.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .experiments import ResultRecord, sort_records

RESULTS_HEADER = ["study", "seed", "algorithm", "param", "metric", "median", "p20", "p80"]


def write_records_csv(records: Sequence[ResultRecord], path) -> None:
    records = sort_records(records)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for r in records:
            writer.writerow(
                [
                    r.study,
                    r.seed,
                    r.algorithm,
                    r.param,
                    r.metric,
                    repr(r.median),
                    repr(r.p20),
                    repr(r.p80),
                ]
            )


def read_records_csv(path) -> List[ResultRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                ResultRecord(
                    study=row["study"],
                    seed=int(row["seed"]),
                    algorithm=row["algorithm"],
                    param=row["param"],
                    metric=row["metric"],
                    median=float(row["median"]),
                    p20=float(row["p20"]),
                    p80=float(row["p80"]),
                )
            )
    return out


def _param_value(param: str, key: str) -> float:
    for piece in param.split("|"):
        k, _, v = piece.partition("=")
        if k == key:
            return float(v)
    raise KeyError(f"{key} not in param {param!r}")


def render_figure(study: str, records: Sequence[ResultRecord], path) -> Path:
    """Render the standard figure for a study's records; returns the path."""
    records = [r for r in records if r.study == study]
    if study == "p_sweep":
        fig = _render_p_sweep(records)
    elif study == "lq_stability":
        fig = _render_lq(records)
    elif study == "bounds_demo":
        fig = _render_bounds(records)
    else:
        raise ValueError(f"no figure defined for study {study!r}")
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _median_of_medians(records):
    by_key = defaultdict(list)
    for r in records:
        by_key[(r.algorithm, r.param, r.metric)].append(r.median)
    return by_key


def _render_p_sweep(records):
    metrics = ["goal_deviation", "avg_imitation_loss"]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), constrained_layout=True)
    by_key = _median_of_medians(records)
    algorithms = sorted({r.algorithm for r in records})
    for ax, metric in zip(axes, metrics):
        for algo in algorithms:
            points = sorted(
                (
                    (_param_value(param, "p"), vals)
                    for (a, param, m), vals in by_key.items()
                    if a == algo and m == metric
                ),
                key=lambda item: item[0],
            )
            if not points:
                continue
            xs = [p for p, _ in points]
            import numpy as np

            med = [float(np.median(v)) for _, v in points]
            lo = [float(np.min(v)) for _, v in points]
            hi = [float(np.max(v)) for _, v in points]
            ax.plot(xs, med, marker="o", label=algo)
            ax.fill_between(xs, lo, hi, alpha=0.15)
        ax.set_xlabel("p")
        ax.set_ylabel(metric.replace("_", " "))
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.suptitle("Stability degree vs. imitation quality")
    return fig


def _render_lq(records):
    import numpy as np

    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    by_key = _median_of_medians(records)
    curves = defaultdict(dict)
    for (algo, param, metric), vals in by_key.items():
        if metric != "goal_error" or algo == "expert":
            continue
        nu = _param_value(param, "nu")
        budget = _param_value(param, "m")
        curves[(algo, nu)][budget] = float(np.median(vals))
    for (algo, nu), by_budget in sorted(curves.items()):
        budgets = sorted(by_budget)
        style = "-" if "penalized" in algo else "--"
        ax.plot(
            budgets,
            [by_budget[b] for b in budgets],
            style,
            marker="o",
            label=f"{algo} (nu={nu:g})",
        )
    ax.set_xlabel("trajectory budget")
    ax.set_ylabel("median goal error")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.suptitle("Stability penalty vs. data budget")
    return fig


def _render_bounds(records):
    import numpy as np

    fig, axes_map = plt.subplots(1, 1, figsize=(6, 4), constrained_layout=True)
    ax = axes_map
    by_key = _median_of_medians(records)
    mags = sorted({_param_value(r.param, "mag") for r in records})
    colors = plt.cm.viridis(np.linspace(0.2, 0.8, len(mags)))
    styles = {"measured_disc": "-o", "igs_bound": "--s", "gronwall_bound": ":^"}
    for mag, color in zip(mags, colors):
        for metric, style in styles.items():
            points = sorted(
                (
                    (_param_value(param, "T"), float(np.median(vals)))
                    for (a, param, m), vals in by_key.items()
                    if m == metric and abs(_param_value(param, "mag") - mag) < 1e-12
                ),
                key=lambda item: item[0],
            )
            if not points:
                continue
            ax.plot(
                [t for t, _ in points],
                [v for _, v in points],
                style,
                color=color,
                label=f"{metric} (mag={mag:g})",
            )
    ax.set_xlabel("horizon T")
    ax.set_ylabel("discrepancy")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.suptitle("Measured discrepancy vs. closed-form bounds")
    return fig
