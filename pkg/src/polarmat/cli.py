"""Command-line entry point.

Exit codes: 0 success, 2 usage or parse error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, svgplot
from .learn import Regime, TrainConfig, uniform_plan
from .materials import CATEGORIES, generate_dataset, read_dataset, synthesize_material, write_dataset
from .polarimeter import Condition, MeasurementPlan, estimate_mueller, plan_diagnostics, simulate
from .sweep import SweepSpec, run_sweep, write_results, read_plans

log = logging.getLogger("polarmat")

EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    """Bad input from the user: exit code 2."""


def _k_list(values: list[str]) -> list[int]:
    """Accept ``2 3 4``, ``2,3,4`` or ranges like ``2-24``."""
    out = []
    for v in values:
        for part in str(v).split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polarmat", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic material dataset")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--materials-per-category", type=int, default=17)
    g.add_argument("--samples-per-material", type=int, default=10)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--config", help="JSON file whose keys override these flags")

    s = sub.add_parser("sweep", help="train and evaluate over condition x regime x K")
    s.add_argument("--data", help="dataset directory or JSONL (default: generate the default synthetic set)")
    s.add_argument("--data-seed", type=int, default=1, help="seed for the generated default dataset")
    s.add_argument("--conditions", nargs="+", default=["LP", "QWP", "LP+QWP"])
    s.add_argument("--regimes", nargs="+", default=["Random", "Uniform", "Optimized"])
    s.add_argument("--K", dest="K_values", nargs="+", default=["2", "3", "4"])
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--base-seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=TrainConfig.steps)
    s.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    s.add_argument("--lr", type=float, default=TrainConfig.lr)
    s.add_argument("--angle-lr", type=float, default=TrainConfig.angle_lr)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--plot", action="store_true", help="also write accuracy_vs_K.svg")
    s.add_argument("--config", help="JSON file whose keys override these flags")

    e = sub.add_parser("estimate", help="simulate captures and recover the Mueller matrix by least squares")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--plan", help="plan JSON file")
    src.add_argument("--uniform", metavar="CONDITION", help="use the uniform plan of this condition")
    e.add_argument("--K", type=int, help="captures for --uniform")
    e.add_argument("--data", help="dataset to take the true Mueller matrix from")
    e.add_argument("--index", type=int, default=0, help="sample index within --data")
    e.add_argument("--m-seed", type=int, default=0, help="seed for a random material when --data is absent")
    e.add_argument("--json", action="store_true", help="print a JSON report")
    e.add_argument("--config", help="JSON file whose keys override these flags")

    a = sub.add_parser("analyze-angles", help="angle-distribution analysis of optimized plans")
    a.add_argument("--plans", required=True, help="plans.jsonl written by sweep")
    a.add_argument("--condition", default="LP")
    a.add_argument("--regime", default="Optimized")
    a.add_argument("--K", type=int)
    a.add_argument("--out", required=True)
    a.add_argument("--plot", action="store_true")
    a.add_argument("--config", help="JSON file whose keys override these flags")
    return p


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    if not getattr(args, "config", None):
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"{args.config}: expected a JSON object")
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest == "K":
            dest = "K_values" if hasattr(args, "K_values") else "K"
        if not hasattr(args, dest):
            raise UsageError(f"{args.config}: unknown option {key!r}")
        setattr(args, dest, value)
    return args


def cmd_generate(args) -> int:
    ds = generate_dataset(args.materials_per_category, args.samples_per_material, args.seed)
    jsonl, manifest = write_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {jsonl} (manifest {manifest.name})")
    return 0


def _load_dataset(args):
    if args.data:
        return read_dataset(args.data)
    return generate_dataset(seed=args.data_seed)


def cmd_sweep(args) -> int:
    try:
        conditions = [Condition.parse(c) for c in args.conditions]
        regimes = [Regime.parse(r) for r in args.regimes]
        ks = _k_list(args.K_values if isinstance(args.K_values, list) else [args.K_values])
        hyper = TrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr, angle_lr=args.angle_lr)
        spec = SweepSpec(conditions, regimes, ks, args.trials, args.base_seed, hyper, args.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    dataset = _load_dataset(args)
    result = run_sweep(spec, dataset)
    for c, r, k, why in result.skipped:
        print(f"skipped {c.value}/{r.value} K={k}: {why}")
    paths = write_results(result, args.out)
    if args.plot:
        paths["plot"] = svgplot.accuracy_curves(result.summary(), Path(args.out) / "accuracy_vs_K.svg")
    for s in result.summary():
        print(
            f"{s['condition'].value:7s} {s['regime'].value:9s} K={s['K']:<3d} "
            f"acc {s['mean_accuracy']:.4f} ± {s['std_accuracy']:.4f} (n={s['n_trials']})"
        )
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return 0


def _estimate_plan(args) -> MeasurementPlan:
    if args.plan:
        try:
            return MeasurementPlan.from_json(Path(args.plan).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.plan}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        except ValueError as exc:
            raise UsageError(f"{args.plan}: {exc}") from exc
    if args.K is None:
        raise UsageError("--uniform needs --K")
    try:
        return uniform_plan(args.uniform, args.K)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def estimate_report(plan: MeasurementPlan, m_true: np.ndarray) -> dict:
    f = simulate(plan, m_true)
    m_est, residual = estimate_mueller(plan, f)
    diag = plan_diagnostics(plan)
    block = np.s_[:3, :3]
    return {
        "K": plan.K,
        "condition": plan.condition.value,
        "rank": diag.rank,
        "condition_number": diag.condition_number,
        "full_rank": diag.rank == 16,
        "block_only": plan.condition is Condition.LP,
        "residual": residual,
        "frobenius_error": float(np.linalg.norm(m_est - m_true)),
        "block_error": float(np.linalg.norm(m_est[block] - m_true[block])),
        "true": m_true.tolist(),
        "estimate": m_est.tolist(),
    }


def cmd_estimate(args) -> int:
    plan = _estimate_plan(args)
    if args.data:
        ds = read_dataset(args.data)
        if not 0 <= args.index < len(ds):
            raise UsageError(f"--index {args.index} outside dataset of {len(ds)} samples")
        m_true = ds.samples[args.index].mueller
        origin = f"{args.data}[{args.index}]"
    else:
        rng = np.random.default_rng(args.m_seed)
        cat = int(rng.integers(len(CATEGORIES)))
        m_true = synthesize_material(cat, rng).mueller
        origin = f"random {CATEGORIES[cat]} (seed {args.m_seed})"
    rep = estimate_report(plan, m_true)
    if args.json:
        print(json.dumps(rep, indent=2))
        return 0
    np.set_printoptions(precision=5, suppress=True)
    print(f"plan: {plan.condition.value}, K={plan.K}; sample: {origin}")
    print("true M:\n" + str(np.array(rep["true"])))
    print("recovered M:\n" + str(np.array(rep["estimate"])))
    print(f"rank {rep['rank']} / 16, condition number {rep['condition_number']:.4g}, residual {rep['residual']:.3e}")
    print(f"Frobenius error {rep['frobenius_error']:.3e}")
    if not rep["full_rank"]:
        print("rank-deficient plan: minimum-norm estimate, unobserved components are zero")
    if rep["block_only"]:
        print(f"block-only recovery: upper-left 3x3 block error {rep['block_error']:.3e}")
    return 0


def cmd_analyze_angles(args) -> int:
    plans = read_plans(args.plans, args.condition, args.regime, args.K)
    if plans and len({p.K for p in plans}) > 1:
        raise UsageError("plans with several K values found; pass --K")
    result = analysis.analyze_plans(plans)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    analysis.write_angles_csv(result, out / "angles.csv")
    analysis.write_rank_summary_csv(result, out / "angles_summary.csv")
    if args.plot and result.rows:
        if result.condition is Condition.LP:
            pts = [(np.degrees(r["theta_lg"]), np.degrees(r["theta_la"]), r["rank"]) for r in result.rows]
            svgplot.angle_scatter(pts, out / "angles.svg", "source LP angle (deg)", "camera LP angle (deg)", "LP (aligned)")
        else:
            pts = [(np.degrees(r["theta_qg"]), np.degrees(r["theta_qa"]), r["rank"]) for r in result.rows]
            svgplot.angle_scatter(pts, out / "angles.svg", "source QWP angle (deg)", "camera QWP angle (deg)", "QWP")
    for e in result.per_rank:
        print(
            f"rank {e['rank']}: n={e['n']} relative {np.degrees(e['relative_mean']):.2f}±{np.degrees(e['relative_std']):.2f} deg"
        )
    print(f"wrote {len(result.rows)} rows to {out / 'angles.csv'}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "sweep": cmd_sweep,
    "estimate": cmd_estimate,
    "analyze-angles": cmd_analyze_angles,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = _apply_config(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"polarmat {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"polarmat {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"polarmat {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
