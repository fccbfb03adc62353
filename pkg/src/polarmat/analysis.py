"""Post-hoc analysis of optimized capture angles.

LP plans carry a global-rotation ambiguity (training rotates the samples), so
they are first aligned: the source polarizer of the capture with the smallest
generator-minus-analyzer angle becomes the zero reference and captures are
ordered by that relative angle. QWP plans are already referenced to the fixed
polarizers and are only ordered by analyzer wave-plate angle.

Statistics are grouped by rank after sorting rather than by a clustering
algorithm.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .mueller import canonical_angle
from .polarimeter import Condition, MeasurementPlan

ANGLE_CSV_HEADER = (
    "condition", "trial", "rank",
    "theta_lg_deg", "theta_la_deg", "theta_qg_deg", "theta_qa_deg", "relative_deg",
)
_STAT_KEYS = ("theta_lg", "theta_la", "theta_qg", "theta_qa")


def wrap_half_pi(x):
    """Wrap into (-π/2, π/2]."""
    y = np.pi / 2 - np.mod(np.pi / 2 - np.asarray(x, dtype=float), np.pi)
    return float(y) if np.ndim(y) == 0 else y


def axial_mean(values: Sequence[float]) -> tuple[float, float]:
    """Mean and spread of π-periodic angles.

    Values are unwrapped onto the half-period branch around their doubled-angle
    circular mean, then averaged arithmetically; the mean is returned in
    [0, π). Clusters that do not straddle the wrap point give the plain mean.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    centre = 0.5 * np.arctan2(np.sin(2 * v).sum(), np.cos(2 * v).sum())
    unwrapped = centre + wrap_half_pi(v - centre)
    return canonical_angle(unwrapped.mean()), _std(unwrapped)


def _std(v: np.ndarray) -> float:
    return float(np.std(v, ddof=1)) if v.size > 1 else 0.0


@dataclass
class AngleAnalysis:
    condition: Condition | None
    rows: list[dict] = field(default_factory=list)
    per_rank: list[dict] = field(default_factory=list)
    aligned_plans: list[MeasurementPlan] = field(default_factory=list)


def _rank_stats(rows: list[dict], K: int) -> list[dict]:
    stats = []
    for r in range(K):
        sel = [row for row in rows if row["rank"] == r]
        entry = {"rank": r, "n": len(sel)}
        for key in _STAT_KEYS:
            entry[f"{key}_mean"], entry[f"{key}_std"] = axial_mean([row[key] for row in sel])
        rel = np.array([row["relative"] for row in sel])
        entry["relative_mean"] = float(rel.mean())
        entry["relative_std"] = _std(rel)
        stats.append(entry)
    return stats


TIE_TOL = 1e-9  # radians; relative angles closer than this count as tied


def _tie_stable_order(values: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """Ascending order in which runs of values within ``tol`` of their sorted
    neighbour keep index order, so rounding noise cannot reorder ties."""
    order = np.argsort(values, kind="stable")
    out, run = [], [order[0]]
    for prev, i in zip(order[:-1], order[1:]):
        if values[i] - values[prev] <= tol:
            run.append(i)
        else:
            out += sorted(run)
            run = [i]
    out += sorted(run)
    return np.array(out, dtype=int)


def _check_same_K(plans: Sequence[MeasurementPlan], condition: Condition) -> int:
    for p in plans:
        if p.condition is not condition:
            raise ValueError(f"expected {condition.value} plans, got {p.condition.value}")
    ks = {p.K for p in plans}
    if len(ks) > 1:
        raise ValueError(f"plans must share K, got {sorted(ks)}")
    return ks.pop()


def align_lp_angles(plans: Sequence[MeasurementPlan]) -> AngleAnalysis:
    """Reference, reorder and aggregate a set of optimized LP plans."""
    if not plans:
        return AngleAnalysis(Condition.LP)
    K = _check_same_K(plans, Condition.LP)
    out = AngleAnalysis(Condition.LP)
    for trial, plan in enumerate(plans):
        g = np.array([c.theta_lg for c in plan.captures])
        a = np.array([c.theta_la for c in plan.captures])
        rel = wrap_half_pi(g - a)
        order = _tie_stable_order(rel)
        i_min = int(order[0])  # lowest capture index among tied minima
        g_al = canonical_angle(g - g[i_min])
        a_al = canonical_angle(a - g[i_min])
        aligned = np.stack([g_al[order], a_al[order]], axis=1)
        out.aligned_plans.append(
            MeasurementPlan.from_free_angles(Condition.LP, aligned, plan.source_intensity)
        )
        for rank, i in enumerate(order):
            out.rows.append(
                {
                    "trial": trial, "rank": rank,
                    "theta_lg": float(g_al[i]), "theta_la": float(a_al[i]),
                    "theta_qg": 0.0, "theta_qa": 0.0,
                    "relative": float(rel[i]),
                }
            )
    out.per_rank = _rank_stats(out.rows, K)
    return out


def qwp_angle_scatter(plans: Sequence[MeasurementPlan]) -> AngleAnalysis:
    """Wave-plate angle pairs per capture, ordered by the analyzer wave-plate angle."""
    if not plans:
        return AngleAnalysis(Condition.QWP)
    K = _check_same_K(plans, Condition.QWP)
    out = AngleAnalysis(Condition.QWP)
    for trial, plan in enumerate(plans):
        qg = np.array([c.theta_qg for c in plan.captures])
        qa = np.array([c.theta_qa for c in plan.captures])
        order = np.argsort(qa, kind="stable")
        out.aligned_plans.append(
            MeasurementPlan.from_free_angles(Condition.QWP, np.stack([qg[order], qa[order]], 1), plan.source_intensity)
        )
        for rank, i in enumerate(order):
            out.rows.append(
                {
                    "trial": trial, "rank": rank,
                    "theta_lg": 0.0, "theta_la": 0.0,
                    "theta_qg": float(qg[i]), "theta_qa": float(qa[i]),
                    "relative": wrap_half_pi(qg[i] - qa[i]),
                }
            )
    out.per_rank = _rank_stats(out.rows, K)
    return out


def analyze_plans(plans: Sequence[MeasurementPlan]) -> AngleAnalysis:
    if not plans:
        return AngleAnalysis(None)
    cond = plans[0].condition
    if cond is Condition.LP:
        return align_lp_angles(plans)
    if cond is Condition.QWP:
        return qwp_angle_scatter(plans)
    raise ValueError("angle analysis covers LP and QWP plans only")


def write_angles_csv(analysis: AngleAnalysis, path) -> Path:
    path = Path(path)
    cond = analysis.condition.value if analysis.condition else ""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANGLE_CSV_HEADER)
        for row in analysis.rows:
            w.writerow(
                [cond, row["trial"], row["rank"]]
                + [repr(float(np.degrees(row[k]))) for k in ("theta_lg", "theta_la", "theta_qg", "theta_qa", "relative")]
            )
    return path


def write_rank_summary_csv(analysis: AngleAnalysis, path) -> Path:
    path = Path(path)
    keys = [f"{k}_{s}" for k in (*_STAT_KEYS, "relative") for s in ("mean", "std")]
    cond = analysis.condition.value if analysis.condition else ""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["condition", "rank", "n"] + [k.replace("_mean", "_mean_deg").replace("_std", "_std_deg") for k in keys])
        for entry in analysis.per_rank:
            w.writerow([cond, entry["rank"], entry["n"]] + [repr(float(np.degrees(entry[k]))) for k in keys])
    return path
