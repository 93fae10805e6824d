"""Compactly supported pulse profiles and the reduction to characteristic data."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from pulsefocus.errors import InvalidParameterError
from pulsefocus.regimes import ProblemParams

KINDS = ("SmoothBump", "Polynomial", "Gaussian-truncated")
ENVELOPES = ("constant", "linear")

# Polynomial bump (1 - s^2)^POLY_POWER; C^3 across the support boundary
POLY_POWER = 4
# Gaussian-truncated bump (exp(-GAUSS_K s^2) - exp(-GAUSS_K)) / (1 - exp(-GAUSS_K))
GAUSS_K = 4.0

MAX_SHAPE_ORDER = 3


def _smooth_bump(s, order):
    inside = np.abs(s) < 1.0
    s_in = np.where(inside, s, 0.0)
    w = 1.0 - s_in * s_in
    b = np.exp(-1.0 / w)
    if order == 0:
        out = b
    else:
        # phi = -1/(1 - s^2); b^(n) via phi', phi'', phi'''
        d1 = -2.0 * s_in / w**2
        if order == 1:
            out = d1 * b
        else:
            d2 = -2.0 * (1.0 + 3.0 * s_in**2) / w**3
            if order == 2:
                out = (d2 + d1 * d1) * b
            else:
                d3 = -24.0 * s_in * (1.0 + s_in**2) / w**4
                out = (d3 + 3.0 * d1 * d2 + d1**3) * b
    return np.where(inside, out, 0.0)


def _polynomial(s, order):
    inside = np.abs(s) < 1.0
    s_in = np.where(inside, s, 0.0)
    w = 1.0 - s_in * s_in
    n = POLY_POWER
    if order == 0:
        out = w**n
    elif order == 1:
        out = -2.0 * n * s_in * w ** (n - 1)
    elif order == 2:
        out = -2.0 * n * w ** (n - 1) + 4.0 * n * (n - 1) * s_in**2 * w ** (n - 2)
    else:
        out = 12.0 * n * (n - 1) * s_in * w ** (n - 2) - 8.0 * n * (n - 1) * (n - 2) * s_in**3 * w ** (n - 3)
    return np.where(inside, out, 0.0)


def _gaussian_truncated(s, order):
    inside = np.abs(s) < 1.0
    s_in = np.where(inside, s, 0.0)
    k = GAUSS_K
    norm = 1.0 - np.exp(-k)
    e = np.exp(-k * s_in**2)
    if order == 0:
        out = (e - np.exp(-k)) / norm
    elif order == 1:
        out = -2.0 * k * s_in * e / norm
    elif order == 2:
        out = (4.0 * k * k * s_in**2 - 2.0 * k) * e / norm
    else:
        out = (12.0 * k * k * s_in - 8.0 * k**3 * s_in**3) * e / norm
    return np.where(inside, out, 0.0)


_SHAPES = {"SmoothBump": _smooth_bump, "Polynomial": _polynomial, "Gaussian-truncated": _gaussian_truncated}


@dataclass(frozen=True)
class PulseProfile:
    """Separable profile U(r, z) = amplitude * envelope(r) * shape_order-th z-derivative of a bump.

    Every derivative is analytic; ``shape_order`` lets ``dz_profile`` return
    the z-derivative as a profile in its own right.
    """

    amplitude: float
    z0: float
    kind: str = "SmoothBump"
    envelope: str = "constant"
    shape_order: int = 0

    def __post_init__(self):
        if not self.z0 > 0:
            raise InvalidParameterError(f"z0 must be positive, got {self.z0}")
        if self.kind not in _SHAPES:
            raise InvalidParameterError(f"unknown profile kind {self.kind!r}; choose from {KINDS}")
        if self.envelope not in ENVELOPES:
            raise InvalidParameterError(f"unknown envelope {self.envelope!r}; choose from {ENVELOPES}")
        if not 0 <= self.shape_order < MAX_SHAPE_ORDER:
            raise InvalidParameterError("shape_order out of range")

    def shape(self, z, order=0):
        s = np.asarray(z, dtype=float) / self.z0
        return _SHAPES[self.kind](s, self.shape_order + order) / self.z0 ** (self.shape_order + order)

    def env(self, r):
        r = np.asarray(r, dtype=float)
        return r if self.envelope == "linear" else np.ones_like(r)

    def env_dr(self, r):
        r = np.asarray(r, dtype=float)
        return np.ones_like(r) if self.envelope == "linear" else np.zeros_like(r)

    def __call__(self, r, z):
        return self.amplitude * self.env(r) * self.shape(z)

    def dz(self, r, z):
        return self.amplitude * self.env(r) * self.shape(z, 1)

    def dr(self, r, z):
        return self.amplitude * self.env_dr(r) * self.shape(z)

    def dz_profile(self) -> "PulseProfile":
        return replace(self, shape_order=self.shape_order + 1)

    def scaled(self, c: float) -> "PulseProfile":
        return replace(self, amplitude=c * self.amplitude)


def make_bump(amplitude: float, z0: float, kind: str = "SmoothBump", envelope: str = "constant") -> PulseProfile:
    return PulseProfile(float(amplitude), float(z0), kind, envelope)


Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ReducedData:
    """Characteristic data P_-, P_+, P_1 as functions of (r, z)."""

    p_minus: Field
    p_plus: Field
    p_one: Field
    z0: float


def reduce(U0: PulseProfile, U1: PulseProfile) -> ReducedData:
    if U0.z0 != U1.z0:
        raise InvalidParameterError(f"profiles must share z0 ({U0.z0} != {U1.z0})")

    def p_minus(r, z):
        r = np.asarray(r, dtype=float)
        return r * (U1(r, z) + U0.dz(r, z))

    def p_plus(r, z):
        r = np.asarray(r, dtype=float)
        return r * (U1(r, z) - U0.dz(r, z))

    def p_one(r, z):
        r = np.asarray(r, dtype=float)
        return U0(r, z) + r * U0.dr(r, z)

    return ReducedData(p_minus, p_plus, p_one, U0.z0)


def initial_data(data: ReducedData, params: ProblemParams, r):
    """Initial values (v_-, v_+) at radius r (scalar or array)."""
    if params.r0 - params.z0 * params.eps <= 0:
        raise InvalidParameterError("r0 - z0*eps must be positive so the data stay away from r = 0")
    r = np.asarray(r, dtype=float)
    z = (r - params.r0) / params.eps
    inside = np.abs(z) < params.z0
    corr = params.eps * data.p_one(r, z)
    vm = np.where(inside, data.p_minus(r, z) + corr, 0.0)
    vp = np.where(inside, data.p_plus(r, z) - corr, 0.0)
    if vm.ndim == 0:
        return float(vm), float(vp)
    return vm, vp
