"""Problem parameters, regime classification and closed-form exponents."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from pulsefocus.errors import DomainError, InvalidParameterError, RegimeError

#: absolute tolerance used whenever alpha + 2 is compared with p (or p with 2)
CRITICAL_TOL = 1e-12


class Caustic(str, enum.Enum):
    LINEAR = "Linear"
    NONLINEAR = "Nonlinear"
    SUPERCRITICAL = "Supercritical"


class Propagation(str, enum.Enum):
    LINEAR = "Linear"
    NONLINEAR = "Nonlinear"


@dataclass(frozen=True)
class ProblemParams:
    """Parameters of the reduced system.

    ``p`` is the nonlinearity exponent, ``alpha`` the amplitude exponent,
    ``a`` the (real) coupling, ``r0`` the initial pulse radius, ``z0`` the
    support radius of the profiles in the fast variable and ``eps`` the pulse
    width.
    """

    p: float
    alpha: float
    a: float = 1.0
    r0: float = 1.0
    z0: float = 1.0
    eps: float = 0.05

    def __post_init__(self):
        for name in ("p", "alpha", "a", "r0", "z0", "eps"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise InvalidParameterError(f"{name} must be a finite real, got {value!r}")
        if self.p <= 1:
            raise InvalidParameterError(f"p must exceed 1, got {self.p}")
        if self.alpha < 0:
            raise InvalidParameterError(f"alpha must be non-negative, got {self.alpha}")
        if self.r0 <= 0 or self.z0 <= 0 or self.eps <= 0:
            raise InvalidParameterError("r0, z0 and eps must be positive")

    @property
    def J(self) -> float:
        return self.alpha / (self.p - 1)

    @property
    def delta(self) -> float:
        """First time at which the incoming pulse can touch r = 0."""
        return self.r0 - self.z0 * self.eps

    def with_eps(self, eps: float) -> "ProblemParams":
        return replace(self, eps=eps)

    def to_dict(self) -> dict:
        return {"p": self.p, "alpha": self.alpha, "a": self.a, "r0": self.r0, "z0": self.z0, "eps": self.eps}


@dataclass(frozen=True)
class RegimeClass:
    caustic: Caustic
    propagation: Propagation
    note: str = ""

    @property
    def critical(self) -> bool:
        return self.caustic is Caustic.NONLINEAR


@dataclass(frozen=True)
class RatePrediction:
    order: float
    log_factor: bool = False


def _is(x: float, y: float) -> bool:
    return abs(x - y) <= CRITICAL_TOL


def classify(params: ProblemParams) -> RegimeClass:
    p, alpha = params.p, params.alpha
    if alpha < 0:
        raise InvalidParameterError("alpha < 0 is not classified")
    gap = alpha + 2 - p
    if abs(gap) <= CRITICAL_TOL:
        caustic = Caustic.NONLINEAR
    elif gap > 0:
        caustic = Caustic.LINEAR
    else:
        caustic = Caustic.SUPERCRITICAL
    propagation = Propagation.NONLINEAR if alpha <= CRITICAL_TOL else Propagation.LINEAR
    note = ""
    if caustic is Caustic.NONLINEAR and alpha > CRITICAL_TOL:
        note = "critical cell, outside both the sub-critical and the super-critical analysis: no rate prediction"
    elif caustic is Caustic.NONLINEAR and p < 2:
        # unreachable while alpha >= 0 is enforced; kept for literal table use
        note = "untheorized cell"
    return RegimeClass(caustic, propagation, note)


def gamma_exponent(params: ProblemParams) -> float:
    """Exponent of the self-similar rescaling psi = eps^-gamma v(eps tau, eps rho)."""
    return 1.0 - params.alpha / (params.p - 1.0)


def subcritical_rate(params: ProblemParams) -> RatePrediction:
    """Predicted order of v - v_free in the linear-caustic regimes."""
    p, alpha = params.p, params.alpha
    if not alpha > max(0.0, p - 2.0) + CRITICAL_TOL:
        raise RegimeError(
            f"sub-critical theorem needs alpha > max(0, p-2); got alpha={alpha}, p={p}"
            " (supercritical/critical cases: use the absorption / blow-up theorem)"
        )
    if _is(p, 2.0):
        return RatePrediction(min(1.0, alpha), log_factor=alpha <= 1.0 + CRITICAL_TOL)
    if p > 2:
        return RatePrediction(min(1.0, alpha + 2.0 - p))
    return RatePrediction(min(1.0, alpha))


def _check_supercritical(params: ProblemParams) -> bool:
    """Return True for the doubly critical branch alpha = 0 = p - 2."""
    p, alpha = params.p, params.alpha
    if _is(alpha, 0.0) and _is(p, 2.0):
        return True
    if 0 <= alpha < p - 2 - CRITICAL_TOL:
        return False
    raise RegimeError(
        f"super-critical theorem needs 0 <= alpha < p-2 or alpha = 0 = p-2; got alpha={alpha}, p={p}"
    )


def absorption_time(lam: float, params: ProblemParams) -> float:
    """Time up to which the geometric-optics approximation is controlled."""
    if lam <= 0:
        raise InvalidParameterError("lambda must be positive")
    doubly_critical = _check_supercritical(params)
    base = params.r0 - params.z0 * params.eps
    if doubly_critical:
        return base - lam
    return base - lam * params.eps ** (params.alpha / (params.p - 2.0))


def h_p(eps: float, T: float, params: ProblemParams) -> float:
    p, alpha = params.p, params.alpha
    if T < 0:
        raise DomainError("T must be non-negative")
    if _is(p, 2.0):
        return eps**alpha * math.log1p(T / eps)
    if p > 2:
        raise DomainError("h_p is only defined for 1 < p <= 2")
    return eps**alpha * T ** (2.0 - p)
