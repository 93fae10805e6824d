import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulsefocus import (
    FitError,
    GridState,
    ProblemParams,
    RegimeError,
    ValidityError,
    eval_free,
    initialize,
    make_bump,
    reduce,
    run,
)
from pulsefocus.diagnostics import (
    CharIntegralMonitor,
    ErrorRow,
    ErrorTable,
    LightConeLqMonitor,
    Region,
    WeightedEstimateMonitor,
    absorption_sups,
    absorption_verdict,
    char_integral_bound,
    energy_monotonicity_report,
    error_vs_reference,
    fit_rate,
    lq_total,
    sup_norm_region,
    weighted_estimate_check,
)
from pulsefocus.harness.report import _revive, canonical_json
from pulsefocus.regimes import absorption_time


def velocity_data(amp=1.0, z0=1.0):
    b = make_bump(amp, z0)
    return reduce(b.scaled(0), b)


def state(t, r, vm, vp):
    r = np.asarray(r, dtype=float)
    return GridState(t, r, np.asarray(vm, dtype=float), np.asarray(vp, dtype=float), float(r[1] - r[0]))


# ---------------------------------------------------------------- norms


def test_sup_norm_region():
    r = (np.arange(10) + 0.5) * 0.1
    zero = state(0.3, r, np.zeros(10), np.zeros(10))
    assert sup_norm_region(zero) == 0.0
    vm = np.linspace(-1, 2, 10)
    vp = -np.linspace(0, 3, 10)
    s = state(0.02, r, vm, vp)
    assert sup_norm_region(s) == 3.0
    # t below the first cell centre: empty light cone is 0 by convention
    assert sup_norm_region(s, Region.LIGHT_CONE) == 0.0
    s = state(0.36, r, vm, vp)
    inside = r <= 0.36
    assert sup_norm_region(s, "LightConeInterior") == max(np.abs(vm[inside]).max(), np.abs(vp[inside]).max())


def test_lq_total_direct_homogeneity_and_limit():
    params = ProblemParams(p=3, alpha=1, eps=0.3, z0=1)
    _, s = initialize(velocity_data(1.7), params, 64, 0.0)
    for q in (1, 2, 3.5):
        direct = (np.sum(np.abs(s.v_minus) ** q + np.abs(s.v_plus) ** q) * s.dr) ** (1 / q)
        assert lq_total(s, q) == pytest.approx(direct, rel=1e-12)
    scaled = dataclasses.replace(s, v_minus=-2.5 * s.v_minus, v_plus=-2.5 * s.v_plus)
    assert lq_total(scaled, 4) == pytest.approx(2.5 * lq_total(s, 4), rel=1e-13)
    assert abs(lq_total(s, 64) / sup_norm_region(s) - 1) < 0.05
    zero = dataclasses.replace(s, v_minus=0 * s.v_minus, v_plus=0 * s.v_plus)
    assert lq_total(zero, 2) == 0.0
    with pytest.raises(ValueError):
        lq_total(s, 0.5)


# ---------------------------------------------------------------- error tables and fits


def test_error_table_invariants():
    t = ErrorTable()
    t.add(ErrorRow(0.1, 32, 0.5, 1e-3))
    with pytest.raises(ValueError):
        t.add(ErrorRow(0.1, 32, 0.5, 2e-3))
    with pytest.raises(ValueError):
        t.add(ErrorRow(0.1, 64, 0.5, -1e-3))
    with pytest.raises(ValueError):
        t.add(ErrorRow(0.1, 64, 0.5, math.nan))
    t.add(ErrorRow(0.05, 32, 0.5, 1e-4))
    assert ErrorTable.from_records(t.to_records()).rows == t.rows
    assert [r.eps for r in t.sorted().rows] == [0.1, 0.05]


def power_law_table(eps_list, c, beta, times=(0.5,), resolutions=(32, 64), coarse_factor=1.0):
    table = ErrorTable()
    for eps in eps_list:
        for res in resolutions:
            for k, t in enumerate(times):
                e = c * eps**beta / (k + 1)  # the first time carries the max
                if res == min(resolutions):
                    e *= coarse_factor
                table.add(ErrorRow(eps, res, t, e))
    return table


EPS = [0.1, 0.0707, 0.05, 0.0354, 0.025]


def test_fit_exact_power_laws():
    fit = fit_rate(power_law_table(EPS, 1.0, 1.0))
    assert abs(fit.slope - 1) < 1e-12 and fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.points_used == 5
    fit = fit_rate(power_law_table(EPS, 3.0, 0.5, times=(0.5, 2.0)))
    assert abs(fit.slope - 0.5) < 1e-12
    assert abs(fit.intercept - math.log(3)) < 1e-12
    assert all(c["relative_change"] == 0 for c in fit.richardson)


def test_fit_richardson_gate():
    # coarse grid 15% off the fine one: grid error is not subdominant
    with pytest.raises(FitError, match="Richardson"):
        fit_rate(power_law_table(EPS, 1.0, 1.0, coarse_factor=1.15))
    fit = fit_rate(power_law_table(EPS, 1.0, 1.0, coarse_factor=1.05))
    assert abs(fit.slope - 1) < 1e-12
    single = power_law_table(EPS, 1.0, 1.0, resolutions=(64,))
    with pytest.raises(FitError):
        fit_rate(single)
    assert abs(fit_rate(single, gate=False).slope - 1) < 1e-12


def test_fit_needs_three_eps_and_positive_errors():
    with pytest.raises(FitError, match="at least 3"):
        fit_rate(power_law_table(EPS[:2], 1.0, 1.0))
    with pytest.raises(FitError):
        fit_rate(power_law_table(EPS, 0.0, 1.0), gate=False)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(1e-3, 1e3))
def test_fit_recovers_exponent_property(beta, c):
    assert abs(fit_rate(power_law_table(EPS, c, beta)).slope - beta) < 1e-12


def test_fit_r_squared_in_unit_interval():
    rng = np.random.default_rng(7)
    table = ErrorTable()
    for i, eps in enumerate(EPS):
        table.add(ErrorRow(eps, 64, 0.5, float(np.exp(rng.normal()))))
    fit = fit_rate(table, gate=False)
    assert 0.0 <= fit.r_squared <= 1.0


def test_error_vs_reference_free_and_symmetry():
    params = ProblemParams(p=3, alpha=1.5, a=1, eps=0.1, z0=1)
    data = velocity_data()
    g, s = initialize(data, params, 16, 1.0)
    traj = run(g, s, params, [0.5, 1.0])
    table = error_vs_reference(traj, data, "Free")
    assert [r.time for r in table.rows] == traj.times
    assert table.rows[0].sup_error == 0.0 and table.rows[-1].sup_error > 0
    # the reference sampled on the grid as a trajectory: zero error, and
    # the distance to it equals the error of the original trajectory
    ref_snaps = []
    for snap in traj.snapshots:
        f = eval_free(data, params, snap.t, snap.r)
        ref_snaps.append(dataclasses.replace(snap, v_minus=f.v_minus, v_plus=f.v_plus))
    ref = dataclasses.replace(traj, snapshots=ref_snaps)
    assert all(r.sup_error == 0.0 for r in error_vs_reference(ref, data, "Free").rows)
    for row, a, b in zip(table.rows, traj.snapshots, ref_snaps):
        d = max(np.abs(b.v_minus - a.v_minus).max(), np.abs(b.v_plus - a.v_plus).max())
        assert row.sup_error == d


def test_error_vs_app_validity():
    params = ProblemParams(p=4, alpha=1, a=1, eps=0.1, z0=0.05)
    data = velocity_data(1.0, 0.05)
    g, s = initialize(data, params, 16, 1.0)
    traj = run(g, s, params, [0.5, 1.0])
    with pytest.raises(ValidityError):
        error_vs_reference(traj, data, "App")
    early = dataclasses.replace(traj, snapshots=traj.snapshots[:2])
    assert len(error_vs_reference(early, data, "App").rows) == 2
    with pytest.raises(ValueError):
        error_vs_reference(traj, data, "Exact")


# ---------------------------------------------------------------- energies


@pytest.mark.parametrize("a,expect,t_final", [(1.0, "non-increasing", 1.5), (-0.5, "non-decreasing", 0.6),
                                              (0.0, "conserved", 2.0)])
def test_energy_report_signs(a, expect, t_final):
    params = ProblemParams(p=3, alpha=0.5, a=a, eps=0.05)
    g, s = initialize(velocity_data(2.0), params, 16, t_final)
    traj = run(g, s, params, [t_final], q_list=[2, 4, 8])
    rep = energy_monotonicity_report(traj)
    assert rep["expectation"] == expect and rep["pass"]
    assert set(rep["per_q"]) == {"2", "4", "8"}
    assert all(v["source"] == "per-step" for v in rep["per_q"].values())
    first, last = rep["per_q"]["2"]["totals_first"], rep["per_q"]["2"]["totals_last"]
    if a > 0:
        assert last < first
    elif a < 0:
        assert last > first
    else:
        assert last == pytest.approx(first, rel=1e-12)


def test_energy_report_detects_wrong_sign_and_snapshot_fallback():
    params = ProblemParams(p=3, alpha=0.5, a=1, eps=0.05)
    g, s = initialize(velocity_data(2.0), params, 16, 1.0)
    traj = run(g, s, params, np.linspace(0, 1, 5), q_list=[2])
    bad = dataclasses.replace(traj, energy={2: list(traj.energy[2])})
    bad.energy[2][10] *= 1 + 1e-3
    rep = energy_monotonicity_report(bad, [2])
    assert not rep["pass"] and rep["per_q"]["2"]["max_wrong_relative_increment"] > 1e-4
    fallback = energy_monotonicity_report(dataclasses.replace(traj, energy={}), [2, 4])
    assert fallback["pass"] and fallback["per_q"]["4"]["source"] == "snapshots"


# ---------------------------------------------------------------- characteristic integrals


def monitored_run(params, data, resolution, t_final):
    g, s = initialize(data, params, resolution, t_final)
    mon = CharIntegralMonitor(params, s, g.dt)
    traj = run(g, s, params, [t_final], monitors=[mon])
    return traj, mon.report()


def test_char_integrals_without_coupling():
    params = ProblemParams(p=4, alpha=1, a=0, eps=0.05, z0=0.05)
    _, rep = monitored_run(params, velocity_data(4.0, 0.05), 16, 0.9)
    assert rep["C1"] == 0.0 and rep["C2"] == 0.0
    # the bound reduces to the maximum principle, with equality for transport
    assert rep["lemma_max_ratio"] == pytest.approx(1.0, abs=1e-12)
    assert rep["pass"]


def test_char_integrals_supercritical_and_majorant_constant():
    params = ProblemParams(p=4, alpha=1, a=1, eps=0.05, z0=0.05)
    t_final = 0.9
    _, rep = monitored_run(params, velocity_data(4.0, 0.05), 16, t_final)
    assert rep["lemma_pass"] and rep["lemma_max_ratio"] <= 1.05
    assert rep["majorant_pass"] and rep["C1"] > 0 and rep["C1_monotone"]
    # C_p = 2 int_0^t (delta-s)^(1-p) ds / (delta-t)^(2-p), closed form for p = 4
    d = params.delta
    t = rep["t_final"]
    assert rep["C_p"] == pytest.approx(1 - ((d - t) / d) ** 2, rel=1e-10)
    c1 = rep["C1"]
    assert rep["C2"] == pytest.approx(max(c1 * math.exp(2 * c1), c1 * c1 * math.exp(3 * c1)))


def test_char_integrals_subcritical_majorant_and_monotone_in_t_final():
    params = ProblemParams(p=3, alpha=1.5, a=1, eps=0.1, z0=1)
    data = velocity_data()
    _, short = monitored_run(params, data, 16, 0.4)
    _, long = monitored_run(params, data, 16, 0.8)
    assert short["pass"] and long["pass"]
    assert short["C1"] <= long["C1"]
    assert short["C1"] <= 1.2 * short["majorant"]


def test_char_integrals_log_branch():
    params = ProblemParams(p=2, alpha=0.5, a=1, eps=0.05, z0=1)
    _, rep = monitored_run(params, velocity_data(), 16, 0.5)
    shape = abs(math.log(params.delta - rep["t_final"]))
    quad = math.log(params.delta / (params.delta - rep["t_final"]))
    assert rep["C_p"] == pytest.approx(2 * quad / shape, rel=1e-10)
    assert rep["pass"]


def test_char_integral_bound_snapshot_path_and_precondition():
    params = ProblemParams(p=4, alpha=1, a=1, eps=0.05, z0=0.05)
    data = velocity_data(4.0, 0.05)
    g, s = initialize(data, params, 16, 0.5)
    times = [k * g.dt for k in range(g.step_index(g.t_final) + 1)]
    traj = run(g, s, params, times)
    _, direct = monitored_run(params, data, 16, 0.5)
    rep = char_integral_bound(traj)
    assert rep["C1"] == pytest.approx(direct["C1"], rel=1e-12)
    assert rep["lemma_max_ratio"] == pytest.approx(direct["lemma_max_ratio"], rel=1e-12)
    g, s = initialize(data, params, 16, 1.0)
    with pytest.raises(ValidityError):
        char_integral_bound(run(g, s, params, [0.5, 1.0]))
    mon = CharIntegralMonitor(params, s, g.dt)
    late = dataclasses.replace(s, t=params.delta)
    with pytest.raises(ValidityError):
        mon(s, late)


# ---------------------------------------------------------------- weighted estimate


def test_weighted_estimate_on_subcritical_run():
    params = ProblemParams(p=3, alpha=1.5, a=1, eps=0.1)
    g, s = initialize(velocity_data(), params, 16, 2.0)
    mon = WeightedEstimateMonitor(params)
    run(g, s, params, [2.0], monitors=[mon])
    rep = mon.report()
    assert rep["pass"] and rep["pairs"] == g.step_index(2.0)
    assert 0 < rep["max_ratio"] <= 1.1


def test_weighted_estimate_detects_violation():
    params = ProblemParams(p=3, alpha=1.5, a=1, eps=0.1)
    r = np.array([0.001, 0.002, 0.5, 1.0])
    a = state(0.3, r, np.ones(4), np.ones(4))
    b = dataclasses.replace(a, t=0.301)
    mon = WeightedEstimateMonitor(params)
    mon(a, b)
    # 4r/(r+eps) is tiny near the centre, so the inequality fails there
    assert mon.report()["max_ratio"] > 10 and not mon.report()["pass"]
    with pytest.raises(ValueError):
        WeightedEstimateMonitor(params).report()


def test_weighted_estimate_check_uses_one_step_pairs():
    params = ProblemParams(p=3, alpha=1.5, a=1, eps=0.1)
    g, s = initialize(velocity_data(), params, 16, 0.5)
    times = [0.1, 0.1 + g.dt, 0.3, 0.3 + g.dt, 0.5]
    rep = weighted_estimate_check(run(g, s, params, times))
    assert rep["pairs"] == 2 and rep["pass"]


# ---------------------------------------------------------------- absorption


def absorption_run(a, eps, lambdas=(0.4, 0.2)):
    params = ProblemParams(p=4, alpha=1, a=a, eps=eps, z0=0.05)
    g, s = initialize(velocity_data(4.0, 0.05), params, 16, params.r0)
    times = [g.floor_index(t) * g.dt for t in [absorption_time(lam, params) for lam in lambdas] + [params.r0]]
    return params, s, run(g, s, params, times)


def test_absorption_control_without_coupling():
    params, s0, traj = absorption_run(0.0, 0.1)
    sups = absorption_sups(traj, [0.4, 0.2])
    # no absorption: the pulse reaches the focus at its initial amplitude
    assert sups["r0"] == pytest.approx(s0.sup(), rel=0.05)
    with pytest.raises(RegimeError, match="dissipative"):
        absorption_verdict(params, [0.4, 0.2], {0.1: traj})
    _, _, damped = absorption_run(1.0, 0.1)
    assert absorption_sups(damped, [0.4, 0.2])["r0"] < 0.5 * sups["r0"]


def test_absorption_verdict_synthetic():
    params = ProblemParams(p=4, alpha=1, a=1, eps=0.025, z0=0.05)
    lams = [0.4, 0.2, 0.1]

    def sups(eps, scale):
        return {"r0": eps, "T": {lam: scale * lam ** (2 / 3) for lam in lams}}

    rep = absorption_verdict(params, lams, {0.1: sups(0.1, 2.0), 0.05: sups(0.05, 1.0)})
    assert rep["pass"] and rep["decreasing"] and rep["eps"] == [0.1, 0.05]
    for row in rep["ratios"]:
        assert row["predicted"] == pytest.approx(2 ** (-2 / 3))
        assert row["normalized"] == pytest.approx(1.0)
    flat = {0.1: sups(0.1, 1.0), 0.05: {"r0": 0.2, "T": {lam: 1.0 for lam in lams}}}
    rep = absorption_verdict(params, lams, flat)
    assert not rep["decreasing"] and not rep["pass"]
    assert all(not r["pass"] for r in rep["ratios"])  # 1 vs 2^(-2/3) is outside 25%
    with pytest.raises(RegimeError):
        absorption_verdict(ProblemParams(p=4, alpha=1, a=-1, eps=0.025), lams, {})


def test_absorption_verdict_on_runs_decreases_in_eps():
    lams = [0.4, 0.2]
    runs = {}
    for eps in (0.1, 0.05):
        params, _, runs[eps] = absorption_run(1.0, eps, lams)
    rep = absorption_verdict(params, lams, runs)
    assert rep["decreasing"]
    assert rep["sup_at_r0"][1] < rep["sup_at_r0"][0]


def test_light_cone_lq_comparison():
    params = ProblemParams(p=4, alpha=1, a=1, eps=0.1, z0=0.05)
    g, s = initialize(velocity_data(4.0, 0.05), params, 16, params.r0)
    mon = LightConeLqMonitor(params, s, [2, 8])
    run(g, s, params, [params.r0], monitors=[mon])
    starts = [absorption_time(lam, params) for lam in (0.4, 0.1)]
    rep = mon.report(starts)
    assert rep["pass"] and len(rep["rows"]) == 4
    assert all(r["max_ratio"] <= 1.0 + 1e-12 for r in rep["rows"])
    with pytest.raises(ValueError):
        mon.report([params.r0])


# ---------------------------------------------------------------- serialization


def test_reports_round_trip():
    params = ProblemParams(p=4, alpha=1, a=1, eps=0.05, z0=0.05)
    traj, rep = monitored_run(params, velocity_data(4.0, 0.05), 16, 0.5)
    rep["C2"] = math.inf
    energy = energy_monotonicity_report(traj, [2])
    for original in (rep, energy):
        text = canonical_json(original)
        assert _revive(json.loads(text)) == original
        assert canonical_json(_revive(json.loads(text))) == text
