import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import jones_lp, jones_qwp, oracle_intensity, random_physical_mueller
from polarmat.learn import uniform_plan
from polarmat.polarimeter import (
    CaptureConfig,
    Condition,
    MeasurementPlan,
    analyzer_matrix,
    build_design_matrix,
    estimate_mueller,
    generator_matrix,
    intensity,
    plan_diagnostics,
    simulate,
)
from polarmat.mueller import linear_polarizer, quarter_wave_plate, unpolarized

Q = np.pi / 4


def _random_plan(rng, condition, K, L=1.0):
    n = len(Condition.parse(condition).free_angles)
    return MeasurementPlan.from_free_angles(condition, rng.uniform(0, np.pi, (K, n)), L)


# -- conditions and plans ------------------------------------------------------------


def test_condition_parse_and_free_angles():
    assert Condition.parse("lp+qwp") is Condition.LP_QWP
    assert Condition.parse("LP_QWP") is Condition.LP_QWP
    assert Condition.QWP.free_angles == ("theta_qg", "theta_qa")
    with pytest.raises(ValueError):
        Condition.parse("HWP")


def test_capture_angles_are_canonical():
    c = CaptureConfig(theta_lg=-Q, theta_qa=np.pi + 0.1)
    assert c.theta_lg == pytest.approx(3 * Q)
    assert c.theta_qa == pytest.approx(0.1)


def test_plan_pins_fixed_angles_to_reference():
    plan = MeasurementPlan(Condition.QWP, (CaptureConfig(0.3, 0.4, 0.5, 0.6),))
    c = plan.captures[0]
    assert (c.theta_lg, c.theta_la) == (0.0, 0.0)
    assert (c.theta_qg, c.theta_qa) == (0.4, 0.5)


def test_plan_validation():
    with pytest.raises(ValueError):
        MeasurementPlan(Condition.LP, ())
    with pytest.raises(ValueError):
        MeasurementPlan(Condition.LP, (CaptureConfig(),), source_intensity=0.0)
    with pytest.raises(ValueError):
        MeasurementPlan.from_free_angles("LP", np.zeros((2, 3)))


def test_plan_json_roundtrip(rng):
    for cond in Condition:
        plan = _random_plan(rng, cond, 5, L=2.5)
        back = MeasurementPlan.from_json(plan.to_json())
        assert back.condition is plan.condition and back.source_intensity == 2.5
        np.testing.assert_allclose(back.angle_array(), plan.angle_array(), atol=1e-12)


@pytest.mark.parametrize("bad", [{"captures": []}, {"condition": "LP"}, {"condition": "LP", "captures": [{"theta_lg_deg": "x"}]}])
def test_plan_from_dict_rejects_malformed(bad):
    with pytest.raises(ValueError):
        MeasurementPlan.from_dict(bad)


# -- generator and analyzer ---------------------------------------------------------


def test_generator_examples():
    np.testing.assert_array_equal(generator_matrix(CaptureConfig(), Condition.LP), linear_polarizer(0.0))
    g = generator_matrix(CaptureConfig(theta_qg=Q), Condition.QWP)
    np.testing.assert_allclose(g @ unpolarized(), [0.5, 0, 0, 0.5], atol=1e-15)
    np.testing.assert_allclose(
        generator_matrix(CaptureConfig(), Condition.LP_QWP), quarter_wave_plate(0.0) @ linear_polarizer(0.0)
    )


def test_analyzer_examples():
    np.testing.assert_array_equal(analyzer_matrix(CaptureConfig(theta_la=np.pi / 2), Condition.LP), linear_polarizer(np.pi / 2))
    # with Q(θ) as given, L(0)Q(π/4) passes s3 < 0 and L(0)Q(3π/4) passes s3 > 0
    np.testing.assert_allclose(analyzer_matrix(CaptureConfig(theta_qa=Q), Condition.QWP)[0], [0.5, 0, 0, -0.5], atol=1e-15)
    np.testing.assert_allclose(analyzer_matrix(CaptureConfig(theta_qa=3 * Q), Condition.QWP)[0], [0.5, 0, 0, 0.5], atol=1e-15)


def test_circular_pair_is_matched():
    # a 45° generator emits s3 > 0, so the 135° analyzer transmits it fully
    p = generator_matrix(CaptureConfig(theta_qg=Q), Condition.QWP) @ unpolarized()
    assert (analyzer_matrix(CaptureConfig(theta_qa=3 * Q), Condition.QWP) @ p)[0] == pytest.approx(0.5)
    assert (analyzer_matrix(CaptureConfig(theta_qa=Q), Condition.QWP) @ p)[0] == pytest.approx(0.0, abs=1e-15)


# -- intensities ------------------------------------------------------------------


def test_intensity_examples():
    eye = np.eye(4)
    assert intensity(eye, CaptureConfig(), Condition.LP) == pytest.approx(0.5)
    assert intensity(eye, CaptureConfig(theta_la=np.pi / 2), Condition.LP) == pytest.approx(0.0, abs=1e-15)
    dep = np.diag([1.0, 0, 0, 0])
    for t in (0.1, 0.7, 2.0):
        assert intensity(dep, CaptureConfig(t, 0, 0, t + 0.4), Condition.LP) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        intensity(eye, CaptureConfig(), Condition.LP, L=0.0)


@given(st.integers(0, 2**31), st.sampled_from(list(Condition)), st.floats(0.1, 10))
def test_intensity_matches_jones_oracle(seed, cond, L):
    rng = np.random.default_rng(seed)
    m = random_physical_mueller(rng)
    lg, qg, qa, la = rng.uniform(0, np.pi, 4)
    c = CaptureConfig(lg, qg, qa, la)
    if cond is Condition.LP:
        gen, ana = [jones_lp(lg)], [jones_lp(la)]
    elif cond is Condition.QWP:
        gen, ana = [jones_lp(0.0), jones_qwp(qg)], [jones_qwp(qa), jones_lp(0.0)]
    else:
        gen, ana = [jones_lp(lg), jones_qwp(qg)], [jones_qwp(qa), jones_lp(la)]
    assert abs(intensity(m, c, cond, L) - oracle_intensity(m, gen, ana, L)) < 1e-12


def test_simulate_batch_and_design_matrix_agree(rng):
    for cond in Condition:
        plan = _random_plan(rng, cond, 7, L=1.7)
        ms = np.stack([random_physical_mueller(rng) for _ in range(5)])
        f = simulate(plan, ms)
        assert f.shape == (5, 7)
        loop = [[intensity(m, c, cond, 1.7) for c in plan.captures] for m in ms]
        np.testing.assert_allclose(f, loop, atol=1e-12)
        w = build_design_matrix(plan)
        np.testing.assert_allclose(ms.reshape(5, 16) @ w.T, f, atol=1e-12)
        np.testing.assert_allclose(simulate(plan, ms[0]), f[0])


def test_intensity_is_linear_in_source(rng):
    plan = _random_plan(rng, "LP+QWP", 4)
    m = random_physical_mueller(rng)
    scaled = MeasurementPlan(plan.condition, plan.captures, 3.0)
    np.testing.assert_allclose(simulate(scaled, m), 3.0 * simulate(plan, m), atol=1e-14)


# -- design matrix, rank and estimation --------------------------------------------


def test_lp_design_zero_columns(rng):
    touched = [i * 4 + j for i in range(4) for j in range(4) if i == 3 or j == 3]
    for K in (1, 4, 9, 30):
        w = build_design_matrix(_random_plan(rng, "LP", K))
        assert len(touched) == 7
        assert np.all(w[:, touched] == 0.0)
        assert plan_diagnostics(_random_plan(rng, "LP", K)).rank <= 9


def test_single_capture_rank_one(rng):
    for cond in Condition:
        assert plan_diagnostics(_random_plan(rng, cond, 1)).rank == 1


def test_random_sixteen_capture_plans_are_full_rank():
    ranks = [plan_diagnostics(_random_plan(np.random.default_rng(s), "LP+QWP", 16)).rank for s in range(100)]
    assert min(ranks) == 16


def test_azzam_rank_profile():
    # computed with the independent oracle below; frozen here
    expected = [1, 1, 3, 3, 4, 5, 7, 7, 9, 4, 11, 11, 13, 12, 12, 14, 15, 14, 14, 12, 14, 14, 16, 15, 16]
    got = [plan_diagnostics(uniform_plan("QWP", k)).rank for k in range(1, 26)]
    assert got == expected


def test_azzam_rank_oracle():
    # explicit Jones design matrix, ranked with numpy's default tolerance
    for K, want in ((10, 4), (20, 12), (23, 16), (24, 15), (25, 16), (36, 16)):
        rows = []
        for k in range(K):
            g = k * np.pi / K
            a = np.mod(5 * g, np.pi)
            ana = [jones_qwp(a), jones_lp(0.0)]
            gen = [jones_lp(0.0), jones_qwp(g)]
            rows.append([oracle_intensity(e.reshape(4, 4), gen, ana) for e in np.eye(16)])
        assert np.linalg.matrix_rank(np.array(rows)) == want


def test_full_rank_estimation_roundtrip(rng):
    for _ in range(20):
        plan = _random_plan(rng, "LP+QWP", 16)
        assert plan_diagnostics(plan).rank == 16
        m = random_physical_mueller(rng)
        est, res = estimate_mueller(plan, simulate(plan, m))
        assert np.linalg.norm(est - m) < 1e-8
        assert res < 1e-10


def test_lp_estimation_recovers_block_only(rng):
    for K in (9, 16, 40):
        plan = _random_plan(rng, "LP", K)
        m = random_physical_mueller(rng)
        est, _ = estimate_mueller(plan, simulate(plan, m))
        np.testing.assert_allclose(est[:3, :3], m[:3, :3], atol=1e-8)
        assert np.all(est[3, :] == pytest.approx(0.0, abs=1e-12))
        assert np.all(est[:, 3] == pytest.approx(0.0, abs=1e-12))


def test_rank_deficient_estimate_is_minimum_norm(rng):
    plan = _random_plan(rng, "LP+QWP", 6)
    w = build_design_matrix(plan)
    f = rng.normal(size=6)
    est, res = estimate_mueller(plan, f)
    np.testing.assert_allclose(est.ravel(), np.linalg.pinv(w) @ f, atol=1e-10)
    assert res < 1e-10


def test_estimate_shape_check(rng):
    with pytest.raises(ValueError):
        estimate_mueller(_random_plan(rng, "LP", 3), np.zeros(4))


def test_diagnostics_fields(rng):
    d = plan_diagnostics(_random_plan(rng, "LP+QWP", 20))
    assert d.singular_values.shape == (16,)
    assert d.condition_number == pytest.approx(d.singular_values[0] / d.singular_values[15])
    small = plan_diagnostics(_random_plan(rng, "QWP", 3))
    assert small.singular_values.shape == (16,) and np.all(small.singular_values[3:] == 0)
    assert json.dumps({"rank": small.rank})
