"""Short-rate term-structure model with jumps at known dates.

Components: a target-rate step model driven by FOMC dates, an end-of-month
spike model and a Vasicek residual, plus futures pricing, calibration and
empirical diagnostics.
"""

from .calendar import BusinessCalendar, DateGrid, FixingSeries, JumpSchedule, PiecewiseFlatCurve
from .composite import CompositeModel, simulate_paths
from .residual import VasicekParams
from .spike_model import SpikeModelParams
from .step_model import StepModelParams

__version__ = "0.1.0"

__all__ = [
    "BusinessCalendar",
    "CompositeModel",
    "DateGrid",
    "FixingSeries",
    "JumpSchedule",
    "PiecewiseFlatCurve",
    "SpikeModelParams",
    "StepModelParams",
    "VasicekParams",
    "simulate_paths",
]
