"""Strict experiment configuration (TOML) with regime gating at load time."""

from __future__ import annotations

import copy
import enum
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

from pulsefocus.errors import ConfigError, InvalidParameterError, RegimeError
from pulsefocus.profiles import ENVELOPES, KINDS
from pulsefocus.regimes import ProblemParams, _check_supercritical, absorption_time, subcritical_rate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class Kind(str, enum.Enum):
    FREE_CHECK = "FreeCheck"
    SUBCRITICAL_RATE = "SubcriticalRate"
    APP_ACCURACY = "AppAccuracy"
    ABSORPTION = "Absorption"
    BLOWUP = "Blowup"
    ENERGY_AUDIT = "EnergyAudit"


DATA_KINDS = ("velocity", "position", "incoming")

DEFAULT_RESOLUTION = 64
DEFAULT_Q_LIST = (2, 4, 8)

# schema: section -> {key: (type(s), default)}; REQUIRED marks mandatory keys
REQUIRED = object()
_NUM = (int, float)
SCHEMA = {
    "": {"kind": (str, REQUIRED), "name": (str, "")},
    "params": {
        "p": (_NUM, REQUIRED),
        "alpha": (_NUM, REQUIRED),
        "a": (_NUM, 1.0),
        "r0": (_NUM, 1.0),
        "z0": (_NUM, 1.0),
    },
    "sweep": {"eps": (list, REQUIRED), "lambda": (list, [])},
    "numerics": {
        "resolution": (int, DEFAULT_RESOLUTION),
        "richardson": (bool, None),
        "t_final": (_NUM, None),
        "snapshot_times": (list, None),
        "n_snapshots": (int, 16),
        "q_list": (list, list(DEFAULT_Q_LIST)),
        "workers": (int, 1),
    },
    "profile": {
        "kind": (str, "SmoothBump"),
        "amplitude": (_NUM, 1.0),
        "envelope": (str, "constant"),
        "data": (str, "velocity"),
    },
    "tolerances": {
        "slope_tol": (_NUM, None),
        "min_r_squared": (_NUM, 0.0),
        "free_tol": (_NUM, 1e-10),
        "ratio_tol": (_NUM, 0.25),
        "energy_slack": (_NUM, 1e-8),
        "bracket_dt_factor": (_NUM, 5.0),
        "blowup_growth": (_NUM, 1e3),
    },
    "output": {"path": (str, "out")},
}

# keys that do not change the scientific content and are left out of the hash
_UNHASHED = {("numerics", "workers"), ("output", "path")}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: Kind
    params: ProblemParams  # eps is a placeholder; members use eps_list
    eps_list: tuple[float, ...]
    lambda_list: tuple[float, ...] = ()
    resolution: int = DEFAULT_RESOLUTION
    richardson: bool = False
    t_final: float | None = None
    snapshot_times: tuple[float, ...] | None = None
    n_snapshots: int = 16
    q_list: tuple[float, ...] = DEFAULT_Q_LIST
    workers: int = 1
    profile_kind: str = "SmoothBump"
    amplitude: float = 1.0
    envelope: str = "constant"
    data: str = "velocity"
    name: str = ""
    tolerances: dict = field(default_factory=dict)
    output: str = "out"
    deterministic: bool = True  # always on: there is no randomness anywhere

    def member_params(self, eps: float) -> ProblemParams:
        return self.params.with_eps(eps)

    def to_dict(self) -> dict:
        """Normalized nested mapping (defaults filled), the inverse of ``from_mapping``."""
        return {
            "kind": self.kind.value,
            "name": self.name,
            "params": {k: v for k, v in self.params.to_dict().items() if k != "eps"},
            "sweep": {"eps": list(self.eps_list), "lambda": list(self.lambda_list)},
            "numerics": {
                "resolution": self.resolution,
                "richardson": self.richardson,
                "t_final": self.t_final,
                "snapshot_times": None if self.snapshot_times is None else list(self.snapshot_times),
                "n_snapshots": self.n_snapshots,
                "q_list": list(self.q_list),
                "workers": self.workers,
            },
            "profile": {"kind": self.profile_kind, "amplitude": self.amplitude, "envelope": self.envelope,
                        "data": self.data},
            "tolerances": dict(sorted(self.tolerances.items())),
            "output": {"path": self.output},
        }

    def hashed_dict(self) -> dict:
        d = copy.deepcopy(self.to_dict())
        for section, key in _UNHASHED:
            d[section].pop(key, None)
        return d

    @property
    def config_hash(self) -> str:
        # hashed from the normalized mapping, so key order in the file is irrelevant
        blob = json.dumps(self.hashed_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, *, resolution=None, workers=None, output=None) -> "ExperimentConfig":
        d = self.to_dict()
        if resolution is not None:
            d["numerics"]["resolution"] = resolution
        if workers is not None:
            d["numerics"]["workers"] = workers
        if output is not None:
            d["output"]["path"] = str(output)
        return from_mapping(d)


def _typed(section: str, key: str, value, types):
    where = f"[{section}] {key}" if section else key
    if value is None:
        return None
    if types is _NUM:
        if isinstance(value, bool) or not isinstance(value, _NUM):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{where}: must be finite")
        return value
    if types is int and isinstance(value, bool):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if not isinstance(value, types):
        raise ConfigError(f"{where}: expected {types.__name__}, got {type(value).__name__} {value!r}")
    return value


def _numbers(where: str, values) -> tuple[float, ...]:
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, _NUM) or not math.isfinite(v):
            raise ConfigError(f"{where}: entries must be finite numbers, got {v!r}")
        out.append(float(v))
    return tuple(out)


def _read_sections(raw: dict) -> dict:
    out = {}
    for section, keys in SCHEMA.items():
        if section == "":
            src = {k: v for k, v in raw.items() if not isinstance(v, dict)}
        else:
            src = raw.get(section, {})
            if not isinstance(src, dict):
                raise ConfigError(f"[{section}] must be a table")
        unknown = sorted(set(src) - set(keys))
        if unknown:
            label = f"[{section}]" if section else "top level"
            raise ConfigError(f"unknown key(s) {unknown} in {label}; allowed: {sorted(keys)}")
        vals = {}
        for key, (types, default) in keys.items():
            if key in src:
                vals[key] = _typed(section, key, src[key], types)
            elif default is REQUIRED:
                label = f"[{section}] {key}" if section else key
                raise ConfigError(f"missing required field {label}")
            else:
                vals[key] = copy.deepcopy(default)
        out[section] = vals
    unknown_sections = sorted(k for k, v in raw.items() if isinstance(v, dict) and k not in SCHEMA)
    if unknown_sections:
        raise ConfigError(f"unknown section(s) {unknown_sections}; allowed: {sorted(s for s in SCHEMA if s)}")
    return out


def _gate(kind: Kind, params: ProblemParams, cfg: dict):
    """Reject experiments whose theorem hypotheses do not hold."""
    p, alpha, a = params.p, params.alpha, params.a
    try:
        if kind is Kind.FREE_CHECK and a != 0:
            raise ConfigError(f"FreeCheck compares with the free solution and needs a = 0, got a = {a}")
        if kind is Kind.SUBCRITICAL_RATE:
            subcritical_rate(params)
        if kind in (Kind.APP_ACCURACY, Kind.ABSORPTION):
            if a <= 0:
                raise ConfigError(
                    f"{kind.value} needs the dissipative hypothesis a > 0 of the absorption theorem; got a = {a}"
                    " (accretive couplings blow up instead: use kind = \"Blowup\")"
                )
            _check_supercritical(params)
            if kind is Kind.APP_ACCURACY and p <= 2:
                raise ConfigError("AppAccuracy predicts the order 1 - alpha/(p-2) and needs p > 2")
        if kind is Kind.BLOWUP:
            if a >= 0:
                raise ConfigError(f"Blowup needs the accretive hypothesis a < 0 of the blow-up theorem; got a = {a}")
            _check_supercritical(params)
            if cfg["profile"]["data"] != "incoming":
                raise ConfigError('Blowup needs purely incoming data (P_+ = 0): set [profile] data = "incoming"')
    except RegimeError as exc:
        raise ConfigError(f"{kind.value} is not applicable for p={p}, alpha={alpha}: {exc}") from exc


def from_mapping(raw: dict) -> ExperimentConfig:
    cfg = _read_sections(raw)
    top, num, prof, tol = cfg[""], cfg["numerics"], cfg["profile"], cfg["tolerances"]
    try:
        kind = Kind(top["kind"])
    except ValueError:
        raise ConfigError(f"kind: unknown kind {top['kind']!r}; choose from {[k.value for k in Kind]}") from None

    eps_list = _numbers("[sweep] eps", cfg["sweep"]["eps"])
    if not eps_list:
        raise ConfigError("[sweep] eps: need at least one value")
    if len(set(eps_list)) != len(eps_list):
        raise ConfigError(f"[sweep] eps: duplicate entries in {list(eps_list)}")
    if any(b >= a for a, b in zip(eps_list[:-1], eps_list[1:])):
        raise ConfigError(f"[sweep] eps: must be strictly decreasing, got {list(eps_list)}")
    lambda_list = _numbers("[sweep] lambda", cfg["sweep"]["lambda"])
    if len(set(lambda_list)) != len(lambda_list):
        raise ConfigError(f"[sweep] lambda: duplicate entries in {list(lambda_list)}")
    if any(lam <= 0 for lam in lambda_list):
        raise ConfigError("[sweep] lambda: entries must be positive")

    try:
        params = ProblemParams(eps=eps_list[0], **{k: float(v) for k, v in cfg["params"].items()})
        for eps in eps_list:
            if eps <= 0 or params.r0 - params.z0 * eps <= 0:
                raise ConfigError(f"[sweep] eps: need 0 < eps < r0/z0, got {eps}")
    except InvalidParameterError as exc:
        raise ConfigError(f"[params]: {exc}") from exc

    res = num["resolution"]
    if res < 16 or res & (res - 1):
        raise ConfigError(f"[numerics] resolution: must be a power of two >= 16, got {res}")
    if num["workers"] < 1:
        raise ConfigError("[numerics] workers: must be >= 1")
    if num["n_snapshots"] < 2:
        raise ConfigError("[numerics] n_snapshots: must be >= 2")
    q_list = _numbers("[numerics] q_list", num["q_list"])
    if any(q < 1 for q in q_list):
        raise ConfigError("[numerics] q_list: entries must be >= 1")
    snaps = None if num["snapshot_times"] is None else _numbers("[numerics] snapshot_times", num["snapshot_times"])
    if snaps is not None and any(t < 0 for t in snaps):
        raise ConfigError("[numerics] snapshot_times: entries must be >= 0")
    t_final = None if num["t_final"] is None else float(num["t_final"])
    if t_final is not None and t_final <= 0:
        raise ConfigError("[numerics] t_final: must be positive")

    if prof["kind"] not in KINDS:
        raise ConfigError(f"[profile] kind: unknown {prof['kind']!r}; choose from {list(KINDS)}")
    if prof["envelope"] not in ENVELOPES:
        raise ConfigError(f"[profile] envelope: unknown {prof['envelope']!r}; choose from {list(ENVELOPES)}")
    if prof["data"] not in DATA_KINDS:
        raise ConfigError(f"[profile] data: unknown {prof['data']!r}; choose from {list(DATA_KINDS)}")

    _gate(kind, params, cfg)

    if kind in (Kind.APP_ACCURACY, Kind.ABSORPTION) and not lambda_list:
        raise ConfigError(f"{kind.value} needs [sweep] lambda")
    if kind is Kind.ABSORPTION and len(lambda_list) < 2:
        raise ConfigError("Absorption needs at least two lambda values for the ratio test")
    if kind in (Kind.SUBCRITICAL_RATE, Kind.APP_ACCURACY) and len(eps_list) < 3:
        raise ConfigError(f"{kind.value} fits a rate and needs at least 3 eps values")
    if kind is Kind.ABSORPTION and len(eps_list) < 2:
        raise ConfigError("Absorption needs at least 2 eps values")
    for eps in eps_list:
        p_eps = params.with_eps(eps)
        for lam in lambda_list:
            T = absorption_time(lam, p_eps)
            if T <= 0:
                raise ConfigError(f"[sweep] lambda={lam}: T(lambda, eps={eps}) = {T} is not positive")
    if kind is Kind.ENERGY_AUDIT and t_final is None and not lambda_list and snaps is None:
        raise ConfigError("EnergyAudit needs [numerics] t_final, snapshot_times or [sweep] lambda")

    richardson = num["richardson"]
    if richardson is None:
        richardson = kind in (Kind.SUBCRITICAL_RATE, Kind.APP_ACCURACY)

    defaults = {
        Kind.SUBCRITICAL_RATE: 0.15,
        Kind.APP_ACCURACY: 0.2,
    }
    tolerances = {k: float(v) for k, v in tol.items() if v is not None}
    if tol["slope_tol"] is None and kind in defaults:
        tolerances["slope_tol"] = defaults[kind]
    if not 0.0 <= tolerances["min_r_squared"] <= 1.0:
        raise ConfigError("[tolerances] min_r_squared: must lie in [0, 1]")

    return ExperimentConfig(
        kind=kind,
        params=params,
        eps_list=eps_list,
        lambda_list=lambda_list,
        resolution=res,
        richardson=bool(richardson),
        t_final=t_final,
        snapshot_times=snaps,
        n_snapshots=num["n_snapshots"],
        q_list=q_list,
        workers=num["workers"],
        profile_kind=prof["kind"],
        amplitude=float(prof["amplitude"]),
        envelope=prof["envelope"],
        data=prof["data"],
        name=top["name"],
        tolerances=tolerances,
        output=cfg["output"]["path"],
    )


def loads_config(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    return from_mapping(raw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return loads_config(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


__all__ = ["ExperimentConfig", "Kind", "load_config", "loads_config", "from_mapping", "SCHEMA"]
