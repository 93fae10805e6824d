"""Unit-CFL characteristic solver for the reduced radial system.

Cells are centred at r_j = (j + 1/2) dr and dt = dr, so transport along
r +- t = const is an exact index shift. The source is applied by Strang
splitting; during a source substep v_- - v_+ is frozen and y = v_- + v_+
solves the scalar ODE y' = -c(r) |y|^(p-1) y, integrated by explicit midpoint
steps with step-doubling control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from pulsefocus.errors import ConfigError, InvalidParameterError
from pulsefocus.profiles import ReducedData, initial_data
from pulsefocus.regimes import ProblemParams, gamma_exponent

MIN_RESOLUTION = 16
SOURCE_RTOL = 1e-10
MAX_HALVINGS = 2**20
BLOWUP_FACTOR = 1e6
# absolute floor of the source error test, relative to the initial sup norm
SOURCE_ATOL_REL = 1e-14
NEGLIGIBLE = 2.0**-60


@dataclass(frozen=True)
class Grid:
    dr: float
    n_cells: int
    t_final: float

    @property
    def dt(self) -> float:
        return self.dr

    @cached_property
    def r(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.dr

    @property
    def r_max(self) -> float:
        return self.n_cells * self.dr

    def step_index(self, t: float) -> int:
        return int(round(t / self.dt))

    def floor_index(self, t: float) -> int:
        """Last step at or before t (with a rounding guard of 1e-9 steps)."""
        return int(math.floor(t / self.dt + 1e-9))


@dataclass
class GridState:
    t: float
    r: np.ndarray
    v_minus: np.ndarray
    v_plus: np.ndarray
    dr: float
    blown_up: bool = False
    bracket: tuple[float, float] | None = None

    def sup(self) -> float:
        if self.v_minus.size == 0:
            return 0.0
        return float(max(np.max(np.abs(self.v_minus)), np.max(np.abs(self.v_plus))))

    def copy(self) -> "GridState":
        return replace(self, v_minus=self.v_minus.copy(), v_plus=self.v_plus.copy())


@dataclass
class Trajectory:
    snapshots: list[GridState]
    params: ProblemParams
    grid: Grid
    stats: dict = field(default_factory=dict)
    blown_up: bool = False
    bracket: tuple[float, float] | None = None
    last_valid: GridState | None = None
    energy_times: np.ndarray | None = None
    energy: dict = field(default_factory=dict)

    @property
    def times(self) -> list[float]:
        return [s.t for s in self.snapshots]


def initialize(data: ReducedData, params: ProblemParams, resolution: int, t_final: float, r_max: float | None = None):
    """Build the grid and sample the initial data at cell centres.

    ``resolution`` is the number of cells across the initial pulse width
    2 z0 eps.
    """
    if resolution < MIN_RESOLUTION:
        raise ConfigError(f"resolution must be >= {MIN_RESOLUTION}, got {resolution}")
    if t_final < 0:
        raise ConfigError("t_final must be non-negative")
    if params.delta <= 0:
        raise InvalidParameterError("r0 - z0*eps must be positive")
    dr = 2.0 * params.z0 * params.eps / resolution
    needed = params.r0 + t_final + params.z0 * params.eps
    if r_max is None:
        r_max = needed + 2 * dr
    if r_max < needed:
        raise ConfigError(f"radial domain [0, {r_max}] too small: waves need r up to {needed}")
    grid = Grid(dr=dr, n_cells=int(math.ceil(r_max / dr)), t_final=float(t_final))
    vm, vp = initial_data(data, params, grid.r)
    return grid, GridState(0.0, grid.r, np.array(vm, dtype=float), np.array(vp, dtype=float), dr)


def source_coefficient(grid_r: np.ndarray, params: ProblemParams) -> np.ndarray:
    """c(r) in y' = -c |y|^(p-1) y, i.e. 2 a 2^-p eps^alpha r^(1-p)."""
    p = params.p
    return 2.0 * params.a * 2.0 ** (-p) * params.eps**params.alpha * grid_r ** (1.0 - p)


class _SourceBlowUp(Exception):
    def __init__(self, y, s):
        self.y = y
        self.s = s


def _abs_pow(y, e):
    n = int(round(e))
    if n == e and 1 <= n <= 4:
        a = np.abs(y)
        out = a
        for _ in range(n - 1):
            out = out * a
        return out
    return np.abs(y) ** e


def _rhs(y, c, p):
    return -c * _abs_pow(y, p - 1.0) * y


def _midpoint(y, c, p, h):
    return y + h * _rhs(y + 0.5 * h * _rhs(y, c, p), c, p)


def integrate_source(y, c, p, h, *, rtol=SOURCE_RTOL, atol=0.0, threshold=np.inf, stats=None):
    """Advance y' = -c |y|^(p-1) y over a time h (arrays of active cells).

    A common substep is used for all cells; it is halved until the two-half
    and one-full midpoint results agree to ``rtol`` and doubled again after
    easy steps. Raises _SourceBlowUp with the last accepted values and their
    time when an accepted value would exceed ``threshold`` or when 2**20
    halvings have not produced a convergent substep.
    """
    s = 0.0
    dh = h
    min_dh = h * 2.0**-60
    n_acc = n_rej = 0
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            while s < h:
                dh = min(dh, h - s)
                full = _midpoint(y, c, p, dh)
                half = _midpoint(_midpoint(y, c, p, 0.5 * dh), c, p, 0.5 * dh)
                err = np.abs(full - half)
                tol = rtol * np.maximum(np.abs(y), np.abs(half)) + atol
                if not (np.all(np.isfinite(half)) and np.all(err <= tol)):
                    n_rej += 1
                    dh *= 0.5
                    if n_rej > MAX_HALVINGS or dh < min_dh:
                        raise _SourceBlowUp(y, s)
                    continue
                if np.max(np.abs(half), initial=0.0) > threshold:
                    raise _SourceBlowUp(y, s)
                y = half
                s += dh
                n_acc += 1
                if np.all(err <= 0.125 * tol):
                    dh *= 2.0
    finally:
        if stats is not None:
            stats["substeps"] = stats.get("substeps", 0) + n_acc
            stats["rejected"] = stats.get("rejected", 0) + n_rej
    return y


def negligible_floor(c, p, h):
    """|y| below which h c |y|^(p-1) < 2^-60: the midpoint update of y is then
    exactly y in double precision, so such cells can be skipped."""
    with np.errstate(divide="ignore"):
        return (NEGLIGIBLE / (np.abs(c) * h)) ** (1.0 / (p - 1.0))


def _source_substep(vm, vp, c, p, h, threshold, atol, stats, floor=None):
    y = vm + vp
    if floor is None:
        floor = negligible_floor(c, p, h)
    active = np.flatnonzero(np.abs(y) > floor)
    if active.size == 0:
        return vm, vp
    y0 = y[active]
    try:
        y1 = integrate_source(y0, c[active], p, h, atol=atol, threshold=threshold, stats=stats)
    except _SourceBlowUp as exc:
        half = 0.5 * (exc.y - y0)
        vm = vm.copy()
        vp = vp.copy()
        vm[active] += half
        vp[active] += half
        raise _SourceBlowUp((vm, vp), exc.s) from None
    half = 0.5 * (y1 - y0)
    vm = vm.copy()
    vp = vp.copy()
    vm[active] += half
    vp[active] += half
    return vm, vp


def _transport(vm, vp):
    new_m = np.empty_like(vm)
    new_p = np.empty_like(vp)
    new_m[:-1] = vm[1:]
    new_m[-1] = 0.0
    new_p[1:] = vp[:-1]
    # the value leaving cell 0 through r = 0 re-enters as its negative
    new_p[0] = -vm[0]
    return new_m, new_p


def step(grid: Grid, state: GridState, params: ProblemParams, *, threshold=np.inf, atol=0.0, coef=None, floor=None,
         stats=None):
    """Advance one time step dt = dr (half source, exact shift, half source).

    On blow-up the returned state carries ``blown_up=True``, the bracket
    [t, t + dt] and the last accepted (finite) substep values, time-stamped
    inside the bracket.
    """
    if state.blown_up:
        raise InvalidParameterError("cannot step a blown-up state")
    dt = grid.dt
    t = state.t
    vm, vp = state.v_minus, state.v_plus
    if params.a == 0:
        vm, vp = _transport(vm, vp)
        return GridState(t + dt, state.r, vm, vp, state.dr)
    if coef is None:
        coef = source_coefficient(state.r, params)
    p = params.p
    if floor is None:
        floor = negligible_floor(coef, p, 0.5 * dt)
    bracket = (t, t + dt)
    try:
        vm, vp = _source_substep(vm, vp, coef, p, 0.5 * dt, threshold, atol, stats, floor)
    except _SourceBlowUp as exc:
        vm, vp = exc.y
        return GridState(t + exc.s, state.r, vm, vp, state.dr, blown_up=True, bracket=bracket)
    vm, vp = _transport(vm, vp)
    try:
        vm, vp = _source_substep(vm, vp, coef, p, 0.5 * dt, threshold, atol, stats, floor)
    except _SourceBlowUp as exc:
        vm, vp = exc.y
        return GridState(t + 0.5 * dt + exc.s, state.r, vm, vp, state.dr, blown_up=True, bracket=bracket)
    new = GridState(t + dt, state.r, vm, vp, state.dr)
    s = new.sup()
    if not math.isfinite(s) or s > threshold:
        return GridState(t, state.r, state.v_minus, state.v_plus, state.dr, blown_up=True, bracket=bracket)
    return new


def _int_pow(a, q):
    """a**q for an array a >= 0; small integer q by repeated multiplication (much faster than pow)."""
    n = int(q)
    if n != q or not 1 <= n <= 16:
        return a**q
    out = None
    base = a
    while n:
        if n & 1:
            out = base if out is None else out * base
        n >>= 1
        if n:
            base = base * base
    return out


def energy_totals(state: GridState, q_list) -> list[float]:
    am, ap = np.abs(state.v_minus), np.abs(state.v_plus)
    return [float(np.sum(_int_pow(am, q) + _int_pow(ap, q)) * state.dr) for q in q_list]


def energy_total(state: GridState, q: float) -> float:
    """sum_j (|v_-|^q + |v_+|^q) dr."""
    return energy_totals(state, [q])[0]


def run(grid: Grid, state0: GridState, params: ProblemParams, snapshot_times, *, q_list=None,
        monitors=()) -> Trajectory:
    """Step from state0 and keep the states at the requested (dt-aligned) times.

    The initial state is always the first snapshot. When ``q_list`` is given,
    the totals sum(|v_-|^q + |v_+|^q) dr are recorded after every step. Each
    monitor is called as ``monitor(previous, current)`` after every accepted
    step.
    """
    times = sorted(float(t) for t in snapshot_times)
    if times and (times[0] < 0 or times[-1] > grid.t_final + 0.5 * grid.dt):
        raise ConfigError(f"snapshot times must lie in [0, {grid.t_final}]")
    targets = sorted({grid.step_index(t) for t in times} | {0})
    n_steps = targets[-1]
    sup0 = state0.sup()
    threshold = BLOWUP_FACTOR * sup0 if sup0 > 0 else np.inf
    atol = SOURCE_ATOL_REL * sup0
    coef = source_coefficient(state0.r, params)
    floor = negligible_floor(coef, params.p, 0.5 * grid.dt)
    stats = {"substeps": 0, "rejected": 0, "steps": 0}
    q_list = list(q_list or [])
    energy = {q: [e] for q, e in zip(q_list, energy_totals(state0, q_list))}
    traj = Trajectory([state0], params, grid, stats)
    wanted = set(targets[1:])
    state = state0
    for n in range(1, n_steps + 1):
        new = step(grid, state, params, threshold=threshold, atol=atol, coef=coef, floor=floor, stats=stats)
        if new.blown_up:
            traj.blown_up = True
            traj.bracket = new.bracket
            traj.last_valid = replace(new, blown_up=False, bracket=None)
            break
        # pin the clock to the lattice so snapshot times are exact multiples of dt
        new.t = n * grid.dt
        for monitor in monitors:
            monitor(state, new)
        state = new
        stats["steps"] = n
        if q_list:
            for q, e in zip(q_list, energy_totals(state, q_list)):
                energy[q].append(e)
        if n in wanted:
            traj.snapshots.append(state)
    traj.energy_times = np.arange(stats["steps"] + 1) * grid.dt
    traj.energy = {q: np.array(v) for q, v in energy.items()}
    return traj


def to_scaled(state: GridState, params: ProblemParams) -> GridState:
    """Self-similar variables: psi(tau, rho) = eps^-gamma v(eps tau, eps rho)."""
    eps = params.eps
    f = eps ** (-gamma_exponent(params))
    return GridState(state.t / eps, state.r / eps, state.v_minus * f, state.v_plus * f, state.dr / eps,
                     state.blown_up, None if state.bracket is None else tuple(b / eps for b in state.bracket))


def from_scaled(state: GridState, params: ProblemParams) -> GridState:
    eps = params.eps
    f = eps ** gamma_exponent(params)
    return GridState(state.t * eps, state.r * eps, state.v_minus * f, state.v_plus * f, state.dr * eps,
                     state.blown_up, None if state.bracket is None else tuple(b * eps for b in state.bracket))
