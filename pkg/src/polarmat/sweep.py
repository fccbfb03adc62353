"""Multi-trial sweeps over condition x regime x K."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .learn import Regime, TrainConfig, evaluate, train, uniform_plan
from .materials import Dataset
from .polarimeter import Condition, MeasurementPlan, plan_diagnostics

log = logging.getLogger(__name__)

RESULTS_HEADER = ("condition", "regime", "K", "trial", "seed", "test_accuracy", "rank", "condition_number")
SUMMARY_HEADER = ("condition", "regime", "K", "mean_accuracy", "std_accuracy", "n_trials")


@dataclass
class SweepSpec:
    conditions: Sequence[Condition] = (Condition.LP, Condition.QWP, Condition.LP_QWP)
    regimes: Sequence[Regime] = (Regime.RANDOM, Regime.UNIFORM, Regime.OPTIMIZED)
    K_values: Sequence[int] = (2, 3, 4)
    trials: int = 10
    base_seed: int = 0
    hyper: TrainConfig = field(default_factory=TrainConfig)
    workers: int = 1

    def __post_init__(self):
        self.conditions = tuple(Condition.parse(c) for c in self.conditions)
        self.regimes = tuple(Regime.parse(r) for r in self.regimes)
        self.K_values = tuple(int(k) for k in self.K_values)
        if self.trials < 1:
            raise ValueError("trials must be at least 1")


@dataclass
class TrialResult:
    condition: Condition
    regime: Regime
    K: int
    trial: int
    seed: int
    test_accuracy: float
    rank: int
    condition_number: float
    plan: MeasurementPlan
    final_loss: float

    def csv_row(self) -> list:
        return [
            self.condition.value, self.regime.value, self.K, self.trial, self.seed,
            repr(self.test_accuracy), self.rank, repr(self.condition_number),
        ]


@dataclass
class SweepResult:
    trials: list[TrialResult]
    skipped: list[tuple[Condition, Regime, int, str]]

    def summary(self) -> list[dict]:
        groups: dict[tuple, list[float]] = {}
        for t in self.trials:
            groups.setdefault((t.condition, t.regime, t.K), []).append(t.test_accuracy)
        out = []
        for (c, r, k), accs in groups.items():
            a = np.array(accs)
            out.append(
                {
                    "condition": c, "regime": r, "K": k,
                    "mean_accuracy": float(a.mean()),
                    "std_accuracy": float(a.std(ddof=1)) if a.size > 1 else 0.0,
                    "n_trials": int(a.size),
                }
            )
        return out

    def mean_accuracy(self, condition, regime, K: int) -> float:
        c, r = Condition.parse(condition), Regime.parse(regime)
        accs = [t.test_accuracy for t in self.trials if (t.condition, t.regime, t.K) == (c, r, K)]
        if not accs:
            raise KeyError((c.value, r.value, K))
        return float(np.mean(accs))

    def plans(self, condition, regime, K: int) -> list[MeasurementPlan]:
        c, r = Condition.parse(condition), Regime.parse(regime)
        return [t.plan for t in self.trials if (t.condition, t.regime, t.K) == (c, r, K)]


def skip_reason(condition: Condition, regime: Regime, K: int) -> str | None:
    if regime is Regime.UNIFORM:
        if condition is Condition.LP_QWP:
            return "no uniform scheme for LP+QWP"
        if condition is Condition.LP and K > 16:
            return "LP uniform grid has only 16 configurations"
    if K < 1:
        return "K must be at least 1"
    return None


def _run_trial(job) -> TrialResult:
    dataset, condition, regime, K, trial, seed, hyper = job
    res = train(dataset, condition, regime, K, seed, hyper)
    m_test, y_test = dataset.split("test")
    acc = evaluate(res.classifier, res.plan, m_test, y_test).accuracy if len(y_test) else float("nan")
    diag = plan_diagnostics(res.plan)
    return TrialResult(
        condition, regime, K, trial, seed, acc, diag.rank, diag.condition_number,
        res.plan, res.history[-1]["loss"] if res.history else float("nan"),
    )


def run_sweep(spec: SweepSpec, dataset: Dataset) -> SweepResult:
    """Run every trial; results come back in (condition, regime, K, trial) order."""
    jobs, skipped = [], []
    for c in spec.conditions:
        for r in spec.regimes:
            for k in spec.K_values:
                reason = skip_reason(c, r, k)
                if reason:
                    log.info("skipping %s/%s K=%d: %s", c.value, r.value, k, reason)
                    skipped.append((c, r, k, reason))
                    continue
                for t in range(spec.trials):
                    jobs.append((dataset, c, r, k, t, spec.base_seed + t, spec.hyper))
    log.info("running %d trials", len(jobs))
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_trial(job))
            r = results[-1]
            log.info("%s/%s K=%d trial %d: acc %.4f", r.condition.value, r.regime.value, r.K, r.trial, r.test_accuracy)
    return SweepResult(results, skipped)


def write_results(result: SweepResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"results": out / "results.csv", "summary": out / "summary.csv", "plans": out / "plans.jsonl"}
    with open(paths["results"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for t in result.trials:
            w.writerow(t.csv_row())
    with open(paths["summary"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in result.summary():
            w.writerow([
                s["condition"].value, s["regime"].value, s["K"],
                repr(s["mean_accuracy"]), repr(s["std_accuracy"]), s["n_trials"],
            ])
    with open(paths["plans"], "w") as fh:
        for t in result.trials:
            rec = {
                "condition": t.condition.value, "regime": t.regime.value, "K": t.K,
                "trial": t.trial, "seed": t.seed, "plan": t.plan.to_dict(),
            }
            fh.write(json.dumps(rec) + "\n")
    return paths


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_plans(path, condition=None, regime=None, K: int | None = None) -> list[MeasurementPlan]:
    """Plans from a ``plans.jsonl`` written by :func:`write_results`, optionally filtered."""
    c = Condition.parse(condition) if condition is not None else None
    r = Regime.parse(regime) if regime is not None else None
    plans = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if c is not None and Condition.parse(rec["condition"]) is not c:
                continue
            if r is not None and Regime.parse(rec["regime"]) is not r:
                continue
            if K is not None and int(rec["K"]) != K:
                continue
            plans.append(MeasurementPlan.from_dict(rec["plan"]))
    return plans


def uniform_rank_profile(condition, K_values: Sequence[int]) -> dict[int, int]:
    """Design-matrix rank of the uniform plan at each K."""
    return {k: plan_diagnostics(uniform_plan(condition, k)).rank for k in K_values}


def rank_dips(ranks: dict[int, int]) -> list[int]:
    """K values whose rank is strictly below both neighbours' (K-1 and K+1)."""
    return [k for k in sorted(ranks) if k - 1 in ranks and k + 1 in ranks and ranks[k] < ranks[k - 1] and ranks[k] < ranks[k + 1]]
