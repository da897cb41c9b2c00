"""Bayesian calibration and ranking of stiffness-degrading oscillator models.

State and time-varying stiffness are estimated with an extended Kalman
filter over an augmented state; static parameters with transitional MCMC;
candidate models are ranked by their Bayesian evidence.
"""

__version__ = "0.1.0"

from .backend import active_backend, have_compiled
from .models import CandidateModel, ParamVector, PriorSpec, get_model
from .filtering import ObservationSeries, run_filter

__all__ = [
    "__version__",
    "active_backend",
    "have_compiled",
    "CandidateModel",
    "ParamVector",
    "PriorSpec",
    "get_model",
    "ObservationSeries",
    "run_filter",
]
