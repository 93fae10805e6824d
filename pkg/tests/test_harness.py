import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from pulsefocus import ConfigError
from pulsefocus.harness import Kind, canonical_json, emit_report, load_config, load_report, loads_config, run_experiment
from pulsefocus.harness.cli import main
from pulsefocus.harness.report import TABLE_COLUMNS, ReportIOError, empty_report

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL_FREE = """
kind = "FreeCheck"
[params]
p = 3
alpha = 1.5
a = 0
[sweep]
eps = [0.05]
"""

SMALL_SUB = """
kind = "SubcriticalRate"
name = "small"
[params]
p = 3
alpha = 1.5
[sweep]
eps = {eps}
[numerics]
resolution = 16
richardson = false
snapshot_times = [0.5]
q_list = [2]
[tolerances]
slope_tol = {tol}
"""


def small_sub(eps=(0.1, 0.0707, 0.05, 0.0354), tol=0.5):
    return loads_config(SMALL_SUB.format(eps=list(eps), tol=tol))


# ---------------------------------------------------------------- configs


def test_minimal_config_defaults():
    cfg = loads_config(MINIMAL_FREE)
    assert cfg.kind is Kind.FREE_CHECK
    assert cfg.resolution == 64 and cfg.q_list == (2, 4, 8)
    assert cfg.params.r0 == 1 and cfg.params.z0 == 1 and cfg.workers == 1
    assert cfg.tolerances["free_tol"] == 1e-10 and cfg.deterministic


def test_shipped_configs_load():
    for path in sorted(CONFIGS.glob("*.toml")):
        cfg = load_config(path)
        assert cfg.config_hash == load_config(path).config_hash


@pytest.mark.parametrize("extra,match", [
    ("\n[numerics]\nresolutoin = 32\n", "unknown key"),
    ("\n[plots]\ncolor = 1\n", "unknown section"),
    ("\nseed = 3\n", "unknown key"),
])
def test_unknown_keys_rejected(extra, match):
    with pytest.raises(ConfigError, match=match):
        loads_config(MINIMAL_FREE + extra)


def test_parse_error_reports_location(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text('kind = "FreeCheck"\n[params\np = 3\n')
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert "bad.toml" in str(exc.value) and "line 2" in str(exc.value)
    with pytest.raises(ConfigError, match="expected a number"):
        loads_config(MINIMAL_FREE.replace("alpha = 1.5", 'alpha = "x"'))
    with pytest.raises(ConfigError, match="missing required"):
        loads_config(MINIMAL_FREE.replace("p = 3\n", ""))


def test_absorption_accretive_rejected():
    text = (CONFIGS / "absorption.toml").read_text().replace("\na = 1\n", "\na = -1\n")
    with pytest.raises(ConfigError, match="dissipative hypothesis a > 0 of the absorption theorem"):
        loads_config(text)


@pytest.mark.parametrize("old,new,match", [
    ("eps = [0.05]", "eps = [0.05, 0.05]", "duplicate"),
    ("eps = [0.05]", "eps = [0.025, 0.05]", "strictly decreasing"),
    ("eps = [0.05]", "eps = []", "at least one"),
    ("eps = [0.05]", "eps = [1.5]", "r0/z0"),
])
def test_eps_list_validation(old, new, match):
    with pytest.raises(ConfigError, match=match):
        loads_config(MINIMAL_FREE.replace(old, new))


@pytest.mark.parametrize("res", [8, 48, 0])
def test_resolution_validation(res):
    with pytest.raises(ConfigError, match="power of two"):
        loads_config(MINIMAL_FREE + f"\n[numerics]\nresolution = {res}\n")


@pytest.mark.parametrize("old,new,match", [
    ("a = 0", "a = 1", "needs a = 0"),
    ('kind = "FreeCheck"', 'kind = "Blowup"', "accretive"),
    ('kind = "FreeCheck"', 'kind = "Magic"', "unknown kind"),
])
def test_regime_gating(old, new, match):
    with pytest.raises(ConfigError, match=match):
        loads_config(MINIMAL_FREE.replace(old, new))


def test_subcritical_gate_rejects_critical_pair():
    text = MINIMAL_FREE.replace('kind = "FreeCheck"', 'kind = "SubcriticalRate"').replace("alpha = 1.5", "alpha = 1")
    with pytest.raises(ConfigError, match="alpha > max"):
        loads_config(text)


def test_blowup_needs_incoming_data():
    text = (CONFIGS / "blowup.toml").read_text().replace('data = "incoming"', 'data = "velocity"')
    with pytest.raises(ConfigError, match="incoming"):
        loads_config(text)


def test_hash_stable_under_key_reordering():
    reordered = """
[sweep]
eps = [0.05]
[params]
a = 0
alpha = 1.5
p = 3.0
[numerics]
workers = 4
"""
    a = loads_config(MINIMAL_FREE)
    b = loads_config('kind = "FreeCheck"\n' + reordered)
    assert a.config_hash == b.config_hash
    # scientific content changes the hash, the output path does not
    assert a.config_hash != loads_config(MINIMAL_FREE.replace("1.5", "1.25")).config_hash
    assert a.config_hash == a.with_overrides(output="/elsewhere").config_hash
    assert a.config_hash != a.with_overrides(resolution=32).config_hash


# ---------------------------------------------------------------- reports


def test_empty_report_is_valid_json(tmp_path):
    emit_report(empty_report("abc"), tmp_path)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["tables"] == {name: [] for name in TABLE_COLUMNS} and data["config_hash"] == "abc"
    for name in TABLE_COLUMNS:
        rows = list(csv.reader((tmp_path / "tables" / f"{name}.csv").open()))
        assert rows == [TABLE_COLUMNS[name] + ["config_hash"]]
    assert not (tmp_path / "figures").exists()


@pytest.fixture(scope="module")
def free_report(tmp_path_factory):
    cfg = loads_config(MINIMAL_FREE + "\n[numerics]\nresolution = 16\nt_final = 2.0\n")
    report = run_experiment(cfg)
    out = tmp_path_factory.mktemp("free")
    emit_report(report, out)
    return cfg, report, out


def test_report_files_and_round_trip(free_report):
    cfg, report, out = free_report
    assert report.passed
    text = (out / "report.json").read_text()
    assert text == canonical_json(report.data)
    assert canonical_json(load_report(out)) == text
    assert load_report(out) == json.loads(text)
    h = cfg.config_hash
    assert report.data["config_hash"] == h
    assert f"# config_hash: {h}" in (out / "plots.script").read_text()
    assert "total_seconds" in json.loads((out / "timings.json").read_text())
    assert "seconds" not in text
    total = 0
    for name, rows in report.data["tables"].items():
        lines = list(csv.DictReader((out / "tables" / f"{name}.csv").open()))
        assert len(lines) == len(rows)
        assert all(line["config_hash"] == h for line in lines)
        total += len(lines)
    assert total == sum(len(v) for v in report.data["tables"].values()) > 0
    assert (out / "figures" / "errors.png").exists() and (out / "figures" / "energy.png").exists()
    assert all("rule" in v for v in report.data["verdicts"])


def test_csv_number_format(free_report):
    _, _, out = free_report
    row = next(csv.DictReader((out / "tables" / "energy.csv").open()))
    mantissa = row["total"].split("e")[0].lstrip("-")
    assert len(mantissa.replace(".", "")) == 17


def test_plot_script_is_self_contained(free_report, tmp_path):
    _, _, out = free_report
    target = tmp_path / "copy"
    (target / "tables").mkdir(parents=True)
    for f in (out / "tables").glob("*.csv"):
        (target / "tables" / f.name).write_text(f.read_text())
    script = tmp_path / "plots.script"
    script.write_text((out / "plots.script").read_text())
    res = subprocess.run([sys.executable, str(script), str(target)], capture_output=True, text=True, cwd=tmp_path)
    assert res.returncode == 0, res.stderr
    assert (target / "figures" / "errors.png").exists()


def test_emit_report_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ReportIOError, match="file"):
        emit_report(empty_report(), blocker / "sub")


# ---------------------------------------------------------------- runs


@pytest.fixture(scope="module")
def sub_report():
    return run_experiment(small_sub())


def test_workers_do_not_change_report(sub_report):
    parallel = run_experiment(small_sub(), workers=2)
    assert canonical_json(parallel.data) == canonical_json(sub_report.data)


def test_rerun_is_byte_identical(sub_report):
    assert canonical_json(run_experiment(small_sub()).data) == canonical_json(sub_report.data)


def test_sweep_isolation(sub_report):
    reduced = run_experiment(small_sub(eps=(0.1, 0.0707, 0.0354)))
    full, part = sub_report.data, reduced.data

    def rows(tables, eps):
        return {name: [r for r in t if r.get("eps") != eps] for name, t in tables.items()}

    assert rows(full["tables"], 0.05) == part["tables"]
    assert [m for m in full["members"] if m["eps"] != 0.05] == part["members"]
    assert full["fits"] != part["fits"]


def test_failed_fit_is_a_verdict_not_a_crash():
    report = run_experiment(small_sub(tol=1e-9))
    assert not report.passed
    fit = [v for v in report.data["verdicts"] if "slope" in v["rule"]]
    assert len(fit) == 1 and not fit[0]["pass"]


# ---------------------------------------------------------------- CLI


def test_cli_run_exit_codes(tmp_path, capsys):
    good = tmp_path / "free.toml"
    good.write_text(MINIMAL_FREE + "\n[numerics]\nresolution = 16\nt_final = 2.0\n")
    assert main(["run", str(good), "--out", str(tmp_path / "a")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("PASS\t") and f"report\t{tmp_path / 'a' / 'report.json'}" in out
    assert (tmp_path / "a" / "report.json").exists()

    failing = tmp_path / "sub.toml"
    failing.write_text(SMALL_SUB.format(eps=[0.1, 0.0707, 0.05], tol=1e-9))
    assert main(["run", str(failing), "--out", str(tmp_path / "b")]) == 1
    assert "FAIL\t" in capsys.readouterr().out

    bad = tmp_path / "bad.toml"
    bad.write_text(MINIMAL_FREE.replace("eps = [0.05]", "eps = [0.05, 0.05]"))
    assert main(["run", str(bad)]) == 2
    assert "duplicate" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.toml")]) == 2

    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["run", str(good), "--out", str(blocker / "x")]) == 3
    assert "runtime error" in capsys.readouterr().err


def test_cli_resolution_override(tmp_path):
    cfg_path = tmp_path / "free.toml"
    cfg_path.write_text(MINIMAL_FREE + "\n[numerics]\nt_final = 0.5\n")
    assert main(["run", str(cfg_path), "--out", str(tmp_path / "o"), "--resolution", "16", "--workers", "1"]) == 0
    members = load_report(tmp_path / "o")["members"]
    assert [m["resolution"] for m in members] == [16]
    assert main(["run", str(cfg_path), "--resolution", "24"]) == 2


def test_cli_classify(capsys):
    assert main(["classify", "--p", "3", "--alpha", "1"]) == 0
    lines = dict(line.split("\t", 1) for line in capsys.readouterr().out.strip().splitlines())
    assert lines["rate"] == "none" and "no rate prediction" in lines["note"]
    assert main(["classify", "--p", "3", "--alpha", "1.5"]) == 0
    lines = dict(line.split("\t", 1) for line in capsys.readouterr().out.strip().splitlines())
    assert lines["rate"] == "0.5" and lines["caustic"] == "Linear"
    assert main(["classify", "--p", "0.5", "--alpha", "1"]) == 2


def test_cli_predict_blowup(capsys):
    assert main(["predict-blowup", str(CONFIGS / "blowup.toml")]) == 0
    header, row = capsys.readouterr().out.strip().splitlines()
    assert header.split("\t") == ["eps", "t_blowup", "reason", "ray"]
    eps, t, *_ = row.split("\t")
    assert float(eps) == 0.05 and 0 < float(t) < 1
    assert main(["predict-blowup", str(CONFIGS / "free_check.toml")]) == 2
