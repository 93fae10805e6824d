"""Report emission: canonical JSON, flat CSV tables, plot script and figures."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from pulsefocus.errors import PulseFocusError
from pulsefocus.harness import plotting
from pulsefocus.harness.runner import ExperimentReport

FORMATS = ("json", "csv", "script", "png")

TABLE_COLUMNS = {
    "errors": ["eps", "lambda", "resolution", "time", "sup_error", "region"],
    "energy": ["eps", "resolution", "q", "time", "total"],
    "absorption": ["eps", "lambda", "time", "sup"],
    "blowup": ["eps", "resolution", "predicted_time", "bracket_lo", "bracket_hi", "tolerance", "growth"],
}

# non-finite floats are stored as these strings so the JSON stays strict
_NONFINITE = {math.inf: "Infinity", -math.inf: "-Infinity"}


class ReportIOError(PulseFocusError, OSError):
    pass


def sanitize(obj):
    """Plain JSON types only; inf -> "Infinity", nan -> "NaN"; tuples -> lists."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()  # numpy scalars
    if isinstance(obj, float):
        if math.isnan(obj):
            return "NaN"
        if math.isinf(obj):
            return _NONFINITE[obj]
    return obj


def canonical_json(data: dict) -> str:
    return json.dumps(sanitize(data), sort_keys=True, indent=2, allow_nan=False, ensure_ascii=True) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            return "NaN" if math.isnan(v) else ("Infinity" if v > 0 else "-Infinity")
        return "%.16e" % v  # 17 significant digits
    return str(v)


def table_csv(name: str, rows: list[dict], config_hash: str) -> str:
    cols = TABLE_COLUMNS.get(name) or sorted({k for r in rows for k in r})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols + ["config_hash"])
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols] + [config_hash])
    return buf.getvalue()


def plot_script(config_hash: str) -> str:
    src = Path(plotting.__file__).read_text()
    header = (
        "#!/usr/bin/env python3\n"
        f"# config_hash: {config_hash}\n"
        "# Re-plots the tables of this report directory (needs numpy and matplotlib):\n"
        "#     python3 plots.script [REPORT_DIR]\n"
    )
    return header + src


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}") from exc


def emit_report(report: ExperimentReport | dict, out_dir, formats=FORMATS) -> list[Path]:
    """Write report.json, tables/*.csv, plots.script, figures/*.png and timings.json."""
    if isinstance(report, dict):
        report = ExperimentReport(report)
    out = Path(out_dir)
    data = report.data
    h = data.get("config_hash", "")
    tables = data.get("tables", {})
    written = []
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise ValueError(f"unknown report formats {sorted(unknown)}")
    if "json" in formats:
        _write(out / "report.json", canonical_json(data))
        written.append(out / "report.json")
    if "csv" in formats:
        for name in sorted(tables):
            p = out / "tables" / f"{name}.csv"
            _write(p, table_csv(name, tables[name], h))
            written.append(p)
    if "script" in formats:
        _write(out / "plots.script", plot_script(h))
        written.append(out / "plots.script")
    if report.timings:
        _write(out / "timings.json", canonical_json(report.timings))
        written.append(out / "timings.json")
    if "png" in formats and "csv" in formats:
        try:
            written.extend(plotting.render(out))
        except OSError as exc:
            raise ReportIOError(f"cannot render figures into {out}: {exc}") from exc
    return written


def _revive(obj):
    if isinstance(obj, dict):
        return {k: _revive(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_revive(v) for v in obj]
    if obj == "Infinity":
        return math.inf
    if obj == "-Infinity":
        return -math.inf
    if obj == "NaN":
        return math.nan
    return obj


def load_report(path) -> dict:
    """Read report.json back; non-finite markers become floats again."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    try:
        return _revive(json.loads(path.read_text()))
    except OSError as exc:
        raise ReportIOError(f"cannot read {path}: {exc}") from exc


def empty_report(config_hash: str = "") -> dict:
    return {"config_hash": config_hash, "tables": {name: [] for name in TABLE_COLUMNS}, "verdicts": [], "pass": False}
