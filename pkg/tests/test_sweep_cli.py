import csv
import json

import numpy as np
import pytest

from polarmat.cli import main
from polarmat.learn import Regime, TrainConfig
from polarmat.polarimeter import Condition
from polarmat.sweep import (
    RESULTS_HEADER,
    SUMMARY_HEADER,
    SweepSpec,
    rank_dips,
    read_plans,
    read_results_csv,
    run_sweep,
    skip_reason,
    uniform_rank_profile,
    write_results,
)

TINY = TrainConfig(steps=15, batch_size=16)


@pytest.fixture(scope="module")
def qwp_sweep(small_dataset):
    spec = SweepSpec(["QWP"], ["Random", "Optimized"], [2, 3], trials=3, hyper=TINY)
    return run_sweep(spec, small_dataset)


def test_sweep_counts(qwp_sweep, tmp_path):
    assert len(qwp_sweep.trials) == 12
    assert len(qwp_sweep.summary()) == 4
    paths = write_results(qwp_sweep, tmp_path)
    rows = read_results_csv(paths["results"])
    assert len(rows) == 12 and tuple(rows[0]) == RESULTS_HEADER
    summary = list(csv.DictReader(paths["summary"].open()))
    assert len(summary) == 4 and tuple(summary[0]) == SUMMARY_HEADER
    assert [int(r["seed"]) for r in rows[:3]] == [0, 1, 2]


def test_summary_rederivable(qwp_sweep, tmp_path):
    paths = write_results(qwp_sweep, tmp_path)
    rows = read_results_csv(paths["results"])
    for s in csv.DictReader(paths["summary"].open()):
        accs = np.array([float(r["test_accuracy"]) for r in rows
                         if (r["condition"], r["regime"], r["K"]) == (s["condition"], s["regime"], s["K"])])
        assert abs(accs.mean() - float(s["mean_accuracy"])) < 1e-12
        assert abs(accs.std(ddof=1) - float(s["std_accuracy"])) < 1e-12
        assert int(s["n_trials"]) == len(accs)


def test_plans_roundtrip(qwp_sweep, tmp_path):
    paths = write_results(qwp_sweep, tmp_path)
    plans = read_plans(paths["plans"], "QWP", "Optimized", 3)
    assert len(plans) == 3
    for p, t in zip(plans, [t for t in qwp_sweep.trials if t.regime is Regime.OPTIMIZED and t.K == 3]):
        np.testing.assert_allclose(p.angle_array(), t.plan.angle_array(), atol=1e-12)
    assert qwp_sweep.mean_accuracy("QWP", "Random", 2) == pytest.approx(
        np.mean([t.test_accuracy for t in qwp_sweep.trials[:3]])
    )
    with pytest.raises(KeyError):
        qwp_sweep.mean_accuracy("LP", "Random", 2)


def test_skip_rules(small_dataset):
    assert skip_reason(Condition.LP_QWP, Regime.UNIFORM, 3)
    assert skip_reason(Condition.LP, Regime.UNIFORM, 17)
    assert skip_reason(Condition.LP, Regime.UNIFORM, 16) is None
    spec = SweepSpec(["LP+QWP"], ["Uniform"], [2], trials=2, hyper=TINY)
    res = run_sweep(spec, small_dataset)
    assert res.trials == [] and len(res.skipped) == 1


def test_single_trial_std_is_zero(small_dataset):
    res = run_sweep(SweepSpec(["LP"], ["Uniform"], [2], trials=1, hyper=TINY), small_dataset)
    assert res.summary()[0]["std_accuracy"] == 0.0
    with pytest.raises(ValueError):
        SweepSpec(trials=0)


def test_parallel_matches_serial(small_dataset):
    spec = dict(conditions=["LP"], regimes=["Optimized"], K_values=[2], trials=2, hyper=TINY)
    a = run_sweep(SweepSpec(**spec), small_dataset)
    b = run_sweep(SweepSpec(workers=2, **spec), small_dataset)
    assert [t.csv_row() for t in a.trials] == [t.csv_row() for t in b.trials]


def test_uniform_rank_profile():
    ranks = uniform_rank_profile("QWP", range(2, 25))
    assert ranks[24] == 15 and ranks[23] == 16
    assert rank_dips(ranks) == [10, 20]
    assert rank_dips({1: 3, 2: 1}) == []


# -- CLI ----------------------------------------------------------------------


def test_generate_cli(tmp_path, capsys):
    out = tmp_path / "data"
    args = ["generate", "--seed", "1", "--materials-per-category", "17", "--samples-per-material", "10", "--out", str(out)]
    assert main(args) == 0
    first = (out / "dataset.jsonl").read_bytes()
    assert len(first.splitlines()) == 850
    assert main(args) == 0
    assert (out / "dataset.jsonl").read_bytes() == first


def test_missing_out_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["generate"])
    assert exc.value.code == 2


def test_config_overrides_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"materials_per_category": 2, "samples-per-material": 1}))
    assert main(["generate", "--out", str(tmp_path / "d"), "--materials-per-category", "9", "--config", str(cfg)]) == 0
    assert len((tmp_path / "d" / "dataset.jsonl").read_text().splitlines()) == 10
    cfg.write_text(json.dumps({"colour": 1}))
    assert main(["generate", "--out", str(tmp_path / "d"), "--config", str(cfg)]) == 2
    cfg.write_text("{not json")
    assert main(["generate", "--out", str(tmp_path / "d"), "--config", str(cfg)]) == 2


def test_sweep_cli_and_reproducibility(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["generate", "--materials-per-category", "3", "--samples-per-material", "2", "--out", str(data)]) == 0
    base = ["sweep", "--data", str(data), "--conditions", "LP", "LP+QWP", "--regimes", "Uniform", "Optimized",
            "--K", "2,3", "--trials", "2", "--steps", "10", "--batch-size", "8"]
    assert main(base + ["--out", str(tmp_path / "a"), "--plot"]) == 0
    assert main(base + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    rows = read_results_csv(tmp_path / "a" / "results.csv")
    assert not any(r["condition"] == "LP+QWP" and r["regime"] == "Uniform" for r in rows)
    assert len(rows) == 2 * 2 + 2 * 2 + 2 * 2
    assert (tmp_path / "a" / "accuracy_vs_K.svg").read_text().startswith("<svg")
    assert "skipped LP+QWP/Uniform" in capsys.readouterr().out
    assert main(base[:-2] + ["--K", "2-3", "--regimes", "Greedy", "--out", str(tmp_path / "c")]) == 2


def test_estimate_cli(tmp_path, capsys):
    assert main(["estimate", "--uniform", "LP", "--K", "16", "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["rank"] == 9 and rep["block_only"] and not rep["full_rank"]
    assert rep["block_error"] < 1e-8

    assert main(["estimate", "--uniform", "QWP", "--K", "25", "--m-seed", "3"]) == 0
    out = capsys.readouterr().out
    err = float(out.split("Frobenius error")[1].split()[0])
    assert err < 1e-8 and "rank 16 / 16" in out

    plan = tmp_path / "plan.json"
    plan.write_text('{"condition": "QWP", "captures": [')
    assert main(["estimate", "--plan", str(plan)]) == 2
    assert "invalid JSON" in capsys.readouterr().err
    plan.write_text('{"condition": "QWP"}')
    assert main(["estimate", "--plan", str(plan)]) == 2
    assert main(["estimate", "--plan", str(tmp_path / "missing.json")]) == 3
    assert main(["estimate", "--uniform", "QWP"]) == 2


def test_estimate_from_dataset(tmp_path, capsys):
    data = tmp_path / "d"
    main(["generate", "--materials-per-category", "1", "--samples-per-material", "2", "--out", str(data)])
    plan = tmp_path / "p.json"
    rng = np.random.default_rng(0)
    from polarmat.polarimeter import MeasurementPlan

    plan.write_text(MeasurementPlan.from_free_angles("LP+QWP", rng.uniform(0, np.pi, (20, 4))).to_json())
    capsys.readouterr()
    assert main(["estimate", "--plan", str(plan), "--data", str(data), "--index", "3", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["frobenius_error"] < 1e-8
    assert main(["estimate", "--plan", str(plan), "--data", str(data), "--index", "99"]) == 2


def test_analyze_angles_cli(tmp_path, qwp_sweep, capsys):
    paths = write_results(qwp_sweep, tmp_path / "sweep")
    out = tmp_path / "angles"
    assert main(["analyze-angles", "--plans", str(paths["plans"]), "--condition", "QWP", "--K", "2",
                 "--out", str(out), "--plot"]) == 0
    rows = list(csv.DictReader((out / "angles.csv").open()))
    assert len(rows) == 3 * 2
    assert (out / "angles.svg").exists() and (out / "angles_summary.csv").exists()
    # several K values without --K
    assert main(["analyze-angles", "--plans", str(paths["plans"]), "--condition", "QWP", "--out", str(out)]) == 2
    # nothing matches: empty output, success
    assert main(["analyze-angles", "--plans", str(paths["plans"]), "--condition", "LP", "--out", str(tmp_path / "e")]) == 0
    assert len((tmp_path / "e" / "angles.csv").read_text().splitlines()) == 1
