"""Numerical laboratory for focusing spherical nonlinear pulses.

The reduced radial system

    (d/dt +- d/dr) v_pm = eps^alpha r^(1-p) g(v_- + v_+),   g(y) = -a 2^-p |y|^(p-1) y,
    (v_- + v_+)(t, 0) = 0,

is integrated on a staggered grid and compared with its explicit linear and
geometric-optics approximations.
"""

from pulsefocus.errors import (
    BlowUpError,
    ConfigError,
    DomainError,
    FitError,
    InvalidParameterError,
    PulseFocusError,
    RegimeError,
    ValidityError,
)
from pulsefocus.regimes import (
    Caustic,
    ProblemParams,
    Propagation,
    RatePrediction,
    RegimeClass,
    absorption_time,
    classify,
    gamma_exponent,
    h_p,
    subcritical_rate,
)
from pulsefocus.profiles import PulseProfile, ReducedData, initial_data, make_bump, reduce
from pulsefocus.closedform import (
    AppValidity,
    FieldSample,
    F_p,
    app_sup_bound,
    eval_app,
    eval_free,
    predicted_blowup_time,
    reconstruct_dtu,
)
from pulsefocus.solver import Grid, GridState, Trajectory, from_scaled, initialize, run, step, to_scaled

__version__ = "0.1.0"

__all__ = [
    "AppValidity",
    "BlowUpError",
    "Caustic",
    "ConfigError",
    "DomainError",
    "FieldSample",
    "FitError",
    "F_p",
    "Grid",
    "GridState",
    "InvalidParameterError",
    "ProblemParams",
    "Propagation",
    "PulseFocusError",
    "PulseProfile",
    "RatePrediction",
    "ReducedData",
    "RegimeClass",
    "RegimeError",
    "Trajectory",
    "ValidityError",
    "absorption_time",
    "app_sup_bound",
    "classify",
    "eval_app",
    "eval_free",
    "from_scaled",
    "gamma_exponent",
    "h_p",
    "initial_data",
    "initialize",
    "make_bump",
    "predicted_blowup_time",
    "reconstruct_dtu",
    "reduce",
    "run",
    "step",
    "subcritical_rate",
    "to_scaled",
]
