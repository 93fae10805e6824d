"""Experiment pipelines: one solver run per sweep member, then aggregation into verdicts."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from pulsefocus import __version__
from pulsefocus.closedform import predicted_blowup_time
from pulsefocus.diagnostics import (
    CharIntegralMonitor,
    ErrorRow,
    ErrorTable,
    LightConeLqMonitor,
    WeightedEstimateMonitor,
    absorption_sups,
    absorption_verdict,
    energy_monotonicity_report,
    error_vs_reference,
    fit_rate,
)
from pulsefocus.errors import FitError, PulseFocusError
from pulsefocus.harness.config import ExperimentConfig, Kind
from pulsefocus.profiles import ReducedData, make_bump, reduce
from pulsefocus.regimes import absorption_time, subcritical_rate
from pulsefocus.solver import initialize, run

REPORT_SCHEMA = "pulsefocus-report/1"
ENERGY_TRACE_POINTS = 64


@dataclass
class ExperimentReport:
    data: dict  # canonical, deterministic content
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.data.get("pass", False))


def build_data(cfg: ExperimentConfig) -> ReducedData:
    """Initial profiles from the [profile] block.

    velocity: U0 = 0, U1 = bump; position: U0 = bump, U1 = 0;
    incoming: U0 = bump, U1 = dz U0, so that P_+ = 0.
    """
    bump = make_bump(cfg.amplitude, cfg.params.z0, cfg.profile_kind, cfg.envelope)
    zero = bump.scaled(0.0)
    if cfg.data == "velocity":
        return reduce(zero, bump)
    if cfg.data == "position":
        return reduce(bump, zero)
    return reduce(bump, bump.dz_profile())


def _lattice(grid, t: float) -> float:
    return grid.floor_index(t) * grid.dt


def _even_times(grid, t_end: float, n: int) -> list[float]:
    k_end = grid.floor_index(t_end)
    ks = sorted({int(round(i * k_end / (n - 1))) for i in range(n)})
    return [k * grid.dt for k in ks]


def _plan(cfg: ExperimentConfig, eps: float) -> dict:
    """t_final and the requested snapshot times (before lattice alignment)."""
    P = cfg.member_params(eps)
    kind = cfg.kind
    if kind is Kind.FREE_CHECK:
        t_final = cfg.t_final or 2.0 * P.r0
        times = list(cfg.snapshot_times or [t_final])
    elif kind is Kind.SUBCRITICAL_RATE:
        times = list(cfg.snapshot_times or [0.5 * P.r0, 2.0 * P.r0])
        t_final = cfg.t_final or max(times)
    elif kind is Kind.APP_ACCURACY:
        t_final = max(absorption_time(lam, P) for lam in cfg.lambda_list)
        times = []
    elif kind is Kind.ABSORPTION:
        t_final = P.r0
        times = [absorption_time(lam, P) for lam in cfg.lambda_list] + [P.r0]
    elif kind is Kind.BLOWUP:
        t_final = cfg.t_final or P.delta
        times = list(cfg.snapshot_times or [])
    else:  # EnergyAudit
        if cfg.t_final is not None:
            t_final = cfg.t_final
        elif cfg.lambda_list:
            t_final = absorption_time(min(cfg.lambda_list), P)
        else:
            t_final = max(cfg.snapshot_times)
        times = list(cfg.snapshot_times or [])
    return {"t_final": t_final, "times": times}


def _energy_trace(traj, q_list) -> list[dict]:
    rows = []
    n = len(traj.energy_times)
    stride = max(1, int(math.ceil(n / ENERGY_TRACE_POINTS)))
    idx = sorted(set(range(0, n, stride)) | {n - 1})
    for q in q_list:
        vals = traj.energy[q]
        for i in idx:
            rows.append({"eps": traj.params.eps, "resolution": _res(traj), "q": float(q),
                         "time": float(traj.energy_times[i]), "total": float(vals[i])})
    return rows


def _res(traj) -> int:
    return int(round(2.0 * traj.params.z0 * traj.params.eps / traj.grid.dr))


def run_member(cfg: ExperimentConfig, eps: float, resolution: int) -> dict:
    """Run one sweep member and reduce it to plain, picklable results."""
    t_start = time.perf_counter()
    P = cfg.member_params(eps)
    data = build_data(cfg)
    plan = _plan(cfg, eps)
    grid, state0 = initialize(data, P, resolution, plan["t_final"])
    kind = cfg.kind
    times = [_lattice(grid, t) for t in plan["times"]]
    if kind is Kind.APP_ACCURACY:
        for lam in cfg.lambda_list:
            times += _even_times(grid, absorption_time(lam, P), cfg.n_snapshots)
    elif kind in (Kind.BLOWUP, Kind.ENERGY_AUDIT, Kind.FREE_CHECK) and not cfg.snapshot_times:
        times += _even_times(grid, grid.t_final, cfg.n_snapshots)
    times.append(_lattice(grid, grid.t_final))
    times = sorted(set(times))

    monitors = {}
    if kind in (Kind.SUBCRITICAL_RATE, Kind.ENERGY_AUDIT):
        monitors["weighted_estimate"] = WeightedEstimateMonitor(P)
    if kind is Kind.ENERGY_AUDIT and grid.t_final < P.delta:
        monitors["char_integrals"] = CharIntegralMonitor(P, state0, grid.dt)
    if kind is Kind.ABSORPTION:
        monitors["lq_comparison"] = LightConeLqMonitor(P, state0, cfg.q_list)
    traj = run(grid, state0, P, times, q_list=cfg.q_list, monitors=list(monitors.values()))

    member = {
        "eps": eps,
        "resolution": resolution,
        "n_cells": grid.n_cells,
        "dr": grid.dr,
        "t_final": grid.t_final,
        "steps": traj.stats["steps"],
        "substeps": traj.stats["substeps"],
        "rejected": traj.stats["rejected"],
        "blown_up": traj.blown_up,
        "bracket": None if traj.bracket is None else [float(b) for b in traj.bracket],
        "status": "blown_up" if traj.blown_up else "ok",
    }
    out = {"member": member, "errors": [], "energy_trace": _energy_trace(traj, cfg.q_list), "reports": {}}
    out["reports"]["energy"] = energy_monotonicity_report(traj, cfg.q_list, cfg.tolerances["energy_slack"])
    for name, mon in monitors.items():
        try:
            if name == "lq_comparison":
                out["reports"][name] = mon.report([absorption_time(lam, P) for lam in cfg.lambda_list])
            else:
                out["reports"][name] = mon.report()
        except (ValueError, PulseFocusError) as exc:
            out["reports"][name] = {"rule": name, "pass": False, "error": str(exc)}

    requested = set(times) if kind is not Kind.SUBCRITICAL_RATE else {_lattice(grid, t) for t in plan["times"]}
    if kind in (Kind.FREE_CHECK, Kind.SUBCRITICAL_RATE):
        table = error_vs_reference(traj, data, "Free")
        out["errors"] = [dict(r, **{"lambda": None}) for r in table.to_records() if r["time"] in requested]
    elif kind is Kind.APP_ACCURACY:
        table = error_vs_reference(traj, data, "App")
        for lam in cfg.lambda_list:
            T = absorption_time(lam, P)
            for r in table.to_records():
                if r["time"] <= T:
                    out["errors"].append(dict(r, **{"lambda": lam}))
    elif kind is Kind.ABSORPTION and not traj.blown_up:
        sups = absorption_sups(traj, cfg.lambda_list)
        out["absorption"] = sups
    elif kind is Kind.BLOWUP:
        pred = predicted_blowup_time(data, P)
        sup0 = state0.sup()
        lv = traj.last_valid
        member.update({
            "predicted_time": pred.t_max,
            "predicted_reason": pred.reason.value,
            "initial_sup": sup0,
            "last_valid_time": None if lv is None else float(lv.t),
            "last_valid_sup": None if lv is None else lv.sup(),
            "dt": grid.dt,
        })
    member["wall_seconds"] = time.perf_counter() - t_start
    return out


def _members(cfg: ExperimentConfig) -> list[tuple[float, int]]:
    res = [cfg.resolution, 2 * cfg.resolution] if cfg.richardson else [cfg.resolution]
    return sorted(((eps, r) for eps in cfg.eps_list for r in res), key=lambda k: (-k[0], k[1]))


def _task(args):
    cfg, eps, res = args
    return run_member(cfg, eps, res)


def _verdict(rule: str, passed: bool, **detail) -> dict:
    return {"rule": rule, "pass": bool(passed), **detail}


def _fit_verdict(rows, predicted: float, cfg: ExperimentConfig, label: str) -> tuple[dict | None, dict]:
    table = ErrorTable()
    for r in rows:
        table.add(_row(r))
    tol = cfg.tolerances["slope_tol"]
    min_r2 = cfg.tolerances["min_r_squared"]
    rule = f"{label}: fitted slope within {predicted:g} +/- {tol:g} with r^2 >= {min_r2:g} after Richardson gating"
    try:
        fit = fit_rate(table, gate=cfg.richardson)
    except FitError as exc:
        return None, _verdict(rule, False, error=str(exc), predicted=predicted)
    ok = abs(fit.slope - predicted) <= tol and fit.r_squared >= min_r2
    return fit.to_dict(), _verdict(rule, ok, slope=fit.slope, r_squared=fit.r_squared, predicted=predicted)


def _row(r: dict) -> ErrorRow:
    return ErrorRow(r["eps"], r["resolution"], r["time"], r["sup_error"], r["region"])


def _aggregate(cfg: ExperimentConfig, results: list[dict]) -> dict:
    kind = cfg.kind
    P = cfg.params
    members = [r["member"] for r in results]
    verdicts = []
    fits = []
    tables = {"errors": [], "energy": [], "absorption": [], "blowup": []}
    for r in results:
        tables["errors"].extend(r["errors"])
        tables["energy"].extend(r["energy_trace"])

    energy_ok = all(r["reports"]["energy"]["pass"] for r in results)
    worst = {}
    for r in results:
        for q, v in r["reports"]["energy"]["per_q"].items():
            worst[q] = max(worst.get(q, 0.0), v["max_wrong_relative_increment"])
    expect = results[0]["reports"]["energy"]["expectation"] if results else ""
    verdicts.append(_verdict(
        f"energy monotonicity: totals {expect} with <= {cfg.tolerances['energy_slack']:g} relative violation per step",
        energy_ok, worst_by_q=worst,
    ))

    if kind is not Kind.BLOWUP:
        blown = [[m["eps"], m["resolution"]] for m in members if m["blown_up"]]
        verdicts.append(_verdict("sweep members complete without blow-up", not blown, blown_up=blown))

    if kind is Kind.FREE_CHECK:
        err = max((row["sup_error"] for row in tables["errors"]), default=math.inf)
        tol = cfg.tolerances["free_tol"]
        verdicts.append(_verdict(f"free transport exactness: sup error vs free solution <= {tol:g}", err <= tol,
                                 max_error=err))
    elif kind is Kind.SUBCRITICAL_RATE:
        pred = subcritical_rate(cfg.params)
        fit, v = _fit_verdict(tables["errors"], pred.order, cfg, "sub-critical rate vs free solution")
        v["log_factor"] = pred.log_factor
        verdicts.append(v)
        if fit is not None:
            fits.append(dict(fit, **{"lambda": None, "reference": "Free"}))
    elif kind is Kind.APP_ACCURACY:
        predicted = 1.0 - P.alpha / (P.p - 2.0)
        for lam in sorted(cfg.lambda_list, reverse=True):
            rows = [row for row in tables["errors"] if row["lambda"] == lam]
            fit, v = _fit_verdict(rows, predicted, cfg, f"app accuracy on [0, T(lambda={lam:g}, eps)]")
            v["lambda"] = lam
            verdicts.append(v)
            if fit is not None:
                fits.append(dict(fit, **{"lambda": lam, "reference": "App"}))
    elif kind is Kind.ABSORPTION:
        runs = {r["member"]["eps"]: r["absorption"] for r in results if "absorption" in r}
        for eps, sups in sorted(runs.items(), key=lambda kv: -kv[0]):
            tables["absorption"].append({"eps": eps, "lambda": None, "time": P.r0, "sup": sups["r0"]})
            for lam, v in sorted(sups["T"].items(), key=lambda kv: -kv[0]):
                T = absorption_time(lam, P.with_eps(eps))
                tables["absorption"].append({"eps": eps, "lambda": lam, "time": T, "sup": v})
        if len(runs) == len(cfg.eps_list):
            verdicts.append(absorption_verdict(P, cfg.lambda_list, runs, cfg.tolerances["ratio_tol"]))
        else:
            verdicts.append(_verdict("absorption verdict needs every sweep member", False))
    elif kind is Kind.BLOWUP:
        growth = cfg.tolerances["blowup_growth"]
        k = cfg.tolerances["bracket_dt_factor"]
        for m in members:
            tol = k * m["dt"] + P.z0 * m["eps"]
            pred = m["predicted_time"]
            br = m["bracket"]
            contains = br is not None and br[0] - tol <= pred <= br[1] + tol
            tables["blowup"].append({
                "eps": m["eps"], "resolution": m["resolution"], "predicted_time": pred,
                "bracket_lo": None if br is None else br[0], "bracket_hi": None if br is None else br[1],
                "tolerance": tol, "growth": None if br is None else m["last_valid_sup"] / m["initial_sup"],
            })
            verdicts.append(_verdict(
                f"blow-up bracket contains the predicted time +/- ({k:g} dt + z0 eps) (eps={m['eps']:g})",
                contains, predicted=pred, bracket=br, tolerance=tol,
            ))
            g = None if br is None else m["last_valid_sup"] / m["initial_sup"]
            verdicts.append(_verdict(
                f"sup at last valid state exceeds {growth:g} x initial (eps={m['eps']:g})",
                g is not None and g > growth, growth=g,
            ))

    for name, rule in (("weighted_estimate", "weighted estimate holds with factor 1.1 on all cells"),
                       ("char_integrals", "characteristic-integral audit (Lemma 5% slack, C1 <= 1.2 x majorant)"),
                       ("lq_comparison", "light-cone L^q comparison after T(lambda, eps) with 5% slack")):
        reps = [r["reports"][name] for r in results if name in r["reports"]]
        if reps:
            detail = {"members": [dict({"eps": r["member"]["eps"], "resolution": r["member"]["resolution"]},
                                       **{k: v for k, v in r["reports"][name].items() if k not in ("rule", "C1_trace")})
                                  for r in results if name in r["reports"]]}
            verdicts.append(_verdict(rule, all(x["pass"] for x in reps), **detail))

    tables["errors"].sort(key=lambda r: (-r["eps"], -(r["lambda"] or 0.0), r["resolution"], r["time"]))
    tables["energy"].sort(key=lambda r: (-r["eps"], r["resolution"], r["q"], r["time"]))
    members.sort(key=lambda m: (-m["eps"], m["resolution"]))
    return {"members": members, "tables": tables, "fits": fits, "verdicts": verdicts,
            "energy_reports": [dict({"eps": r["member"]["eps"], "resolution": r["member"]["resolution"]},
                                    **r["reports"]["energy"]) for r in
                               sorted(results, key=lambda r: (-r["member"]["eps"], r["member"]["resolution"]))]}


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentReport:
    """Run every sweep member (concurrently when workers > 1) and aggregate.

    Members are reassembled in sorted (eps, resolution) order, so the report
    does not depend on scheduling.
    """
    workers = cfg.workers if workers is None else workers
    t0 = time.perf_counter()
    tasks = [(cfg, eps, res) for eps, res in _members(cfg)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    timings = {"members": [], "total_seconds": 0.0}
    for r in results:
        m = r["member"]
        timings["members"].append({"eps": m["eps"], "resolution": m["resolution"], "seconds": m.pop("wall_seconds")})
    agg = _aggregate(cfg, results)
    data = {
        "schema": REPORT_SCHEMA,
        "version": __version__,
        "kind": cfg.kind.value,
        "name": cfg.name,
        "config": cfg.hashed_dict(),
        "config_hash": cfg.config_hash,
        **agg,
    }
    data["pass"] = bool(data["verdicts"]) and all(v["pass"] for v in data["verdicts"])
    timings["total_seconds"] = time.perf_counter() - t0
    timings["config_hash"] = cfg.config_hash
    return ExperimentReport(data, timings)


__all__ = ["ExperimentReport", "build_data", "run_experiment", "run_member"]
