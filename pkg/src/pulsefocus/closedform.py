"""Explicit solutions: the free wave, the geometric-optics approximation and
the quantities derived from them (blow-up time, sup bound at absorption time).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from pulsefocus.errors import BlowUpError, DomainError, RegimeError, ValidityError
from pulsefocus.profiles import ReducedData
from pulsefocus.regimes import CRITICAL_TOL, ProblemParams, _check_supercritical

N_BLOWUP_RAYS = 64
BISECTION_RTOL = 1e-10


@dataclass(frozen=True)
class FieldSample:
    t: np.ndarray | float
    r: np.ndarray | float
    v_minus: np.ndarray | float
    v_plus: np.ndarray | float


class ValidityReason(str, enum.Enum):
    PRE_FOCUS_ONLY = "PreFocusOnly"
    DENOMINATOR_VANISHES = "DenominatorVanishes"


@dataclass(frozen=True)
class AppValidity:
    t_max: float
    reason: ValidityReason
    ray: float | None = None  # value of r + t on the earliest blowing ray
    r_star: float | None = None


def F_p(x, y, p: float):
    """Primitive of s^(1-p) between x and y (vectorized, 0 < x <= y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0):
        raise DomainError("F_p needs x > 0 (singular endpoint)")
    if abs(p - 2.0) <= CRITICAL_TOL:
        out = np.log(y / x)
    else:
        out = (x ** (2.0 - p) - y ** (2.0 - p)) / (p - 2.0)
    return float(out) if out.ndim == 0 else out


def _pulse(field, rho, params: ProblemParams):
    """Evaluate P(rho, (rho - r0)/eps), zero for rho <= 0 or outside the support."""
    rho = np.asarray(rho, dtype=float)
    z = (rho - params.r0) / params.eps
    inside = (rho > 0) & (np.abs(z) < params.z0)
    rho_safe = np.where(inside, rho, params.r0)
    z_safe = np.where(inside, z, 0.0)
    return np.where(inside, field(rho_safe, z_safe), 0.0), inside


def _out(t, r, vm, vp):
    if np.ndim(vm) == 0:
        return FieldSample(float(t), float(r), float(vm), float(vp))
    return FieldSample(t, r, vm, vp)


def eval_free(data: ReducedData, params: ProblemParams, t, r) -> FieldSample:
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    vm, _ = _pulse(data.p_minus, r + t, params)
    outgoing, _ = _pulse(data.p_plus, r - t, params)
    reflected, _ = _pulse(data.p_minus, t - r, params)
    return _out(t, r, vm, outgoing - reflected)


def _app_wave(field, rho, lo, hi, params: ProblemParams, t, r):
    P, inside = _pulse(field, rho, params)
    p = params.p
    # F_p only where the wave lives; lo > 0 there because t < r0 - z0 eps
    lo_s = np.where(inside, lo, 1.0)
    hi_s = np.where(inside, hi, 1.0)
    if np.any(inside & (lo <= 0)):
        raise ValidityError("geometric-optics wave reached r = 0")
    F = F_p(lo_s, hi_s, p)
    denom = 1.0 + params.a * 2.0 ** (-p) * (p - 1.0) * params.eps**params.alpha * F * np.abs(P) ** (p - 1.0)
    bad = inside & (denom <= 0)
    if np.any(bad):
        idx = np.argwhere(np.broadcast_to(bad, np.broadcast(t, r).shape))[0]
        tt = float(np.broadcast_to(t, bad.shape)[tuple(idx)])
        rr = float(np.broadcast_to(r, bad.shape)[tuple(idx)])
        raise BlowUpError(f"geometric-optics denominator vanished at t={tt:.6g}, r={rr:.6g}", where=(tt, rr))
    denom = np.where(inside, denom, 1.0)
    return np.where(inside, P / denom ** (1.0 / (p - 1.0)), 0.0)


def eval_app(data: ReducedData, params: ProblemParams, t, r) -> FieldSample:
    """Geometric-optics approximation: exact ODE solutions along each ray."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(t < 0) or np.any(t >= params.delta):
        raise ValidityError(f"eval_app is valid only for 0 <= t < r0 - z0*eps = {params.delta}")
    if np.any(r <= 0):
        raise DomainError("eval_app needs r > 0")
    t, r = np.broadcast_arrays(t, r)
    vm = _app_wave(data.p_minus, r + t, r, r + t, params, t, r)
    vp = _app_wave(data.p_plus, r - t, r - t, r, params, t, r)
    return _out(t, r, vm, vp)


def _ray_root(c: float, amp: float, params: ProblemParams) -> float | None:
    """Largest r in (0, c) where the incoming denominator on ray r + t = c vanishes."""
    p = params.p
    k = abs(params.a) * 2.0 ** (-p) * (p - 1.0) * params.eps**params.alpha * amp ** (p - 1.0)
    if k == 0:
        return None
    target = 1.0 / k

    def F(r):
        return F_p(r, c, p)

    hi_lim = c
    # bracket: F decreases in r, F(c) = 0 < target; walk down geometrically
    r = c / 2.0
    while F(r) < target:
        hi_lim = r
        r /= 2.0
        if r < 1e-300:
            return None  # p < 2: F bounded, no root
    lo, hi = r, hi_lim
    while hi - lo > BISECTION_RTOL * hi:
        mid = 0.5 * (lo + hi)
        if F(mid) >= target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def predicted_blowup_time(data: ReducedData, params: ProblemParams, n_rays: int = N_BLOWUP_RAYS) -> AppValidity:
    """Earliest vanishing of the incoming geometric-optics denominator.

    Scans ``n_rays`` rays r + t = c spread over the open support of P_- and
    bisects for the root on each; assumes P_+ = 0.
    """
    if params.a >= 0:
        raise DomainError("blow-up prediction needs an accretive coupling a < 0")
    delta = params.delta
    width = params.z0 * params.eps
    # cell-centred ray sample, strictly inside the support
    cs = params.r0 - width + (np.arange(n_rays) + 0.5) * (2.0 * width / n_rays)
    amps, _ = _pulse(data.p_minus, cs, params)
    best = AppValidity(delta, ValidityReason.PRE_FOCUS_ONLY)
    for c, amp in zip(cs, np.abs(amps)):
        r_star = _ray_root(float(c), float(amp), params)
        if r_star is None:
            continue
        t_star = float(c) - r_star
        if t_star < best.t_max:
            best = AppValidity(t_star, ValidityReason.DENOMINATOR_VANISHES, ray=float(c), r_star=r_star)
    return best


def app_sup_bound(lam: float, params: ProblemParams) -> float:
    """lambda-dependent factor bounding the incoming app wave at T(lambda, eps)."""
    if params.a <= 0:
        raise RegimeError("absorption bound needs a dissipative coupling a > 0")
    if lam <= 0:
        raise DomainError("lambda must be positive")
    if _check_supercritical(params):
        return 1.0 / abs(math.log(lam))
    p = params.p
    return lam ** ((p - 2.0) / (p - 1.0))


def reconstruct_dtu(sample: FieldSample):
    """Time derivative of u from the characteristic fields."""
    r = np.asarray(sample.r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("d_t u is not reconstructed at r = 0 (v_- + v_+ vanishes there)")
    out = (np.asarray(sample.v_minus) + np.asarray(sample.v_plus)) / (2.0 * r)
    return float(out) if out.ndim == 0 else out
