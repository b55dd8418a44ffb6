"""Distillation and purification of phase-diffused squeezed states.

Two copies of a squeezed state pick up independent random phase shifts,
interfere on a balanced beam splitter, and one output is kept whenever a
homodyne measurement on the other falls inside ``|q1| < Q``. This package
evaluates the resulting output variance and success probability by
quadrature, simulates the protocol by Monte Carlo, and postprocesses
recorded two-detector time series.

Units: shot-noise units throughout (vacuum quadrature variance = 1).
"""

from .gaussian_core import (
    ConditionalMoments,
    SqueezedModeParams,
    apply_detection_efficiency,
    beamsplitter_transform,
    closed_form_moments,
    conditional_moments,
    rotate_covariance,
)
from .phase_noise import PhaseDistribution, PhaseProcessConfig
from .analytics import (
    AnalyticResult,
    NumericalConvergenceError,
    ProtocolParams,
    povm_coefficients,
    v_in,
    v_out,
    v_out_general,
    v_out_qcp,
)
from .montecarlo import DistillationEstimate, SimulationConfig, run_protocol, run_qcp
from .timeseries_io import QuadratureSeries, SeriesMetadata, load_series, save_series

__version__ = "0.1.0"

__all__ = [
    "AnalyticResult",
    "ConditionalMoments",
    "DistillationEstimate",
    "NumericalConvergenceError",
    "PhaseDistribution",
    "PhaseProcessConfig",
    "ProtocolParams",
    "QuadratureSeries",
    "SeriesMetadata",
    "SimulationConfig",
    "SqueezedModeParams",
    "apply_detection_efficiency",
    "beamsplitter_transform",
    "closed_form_moments",
    "conditional_moments",
    "load_series",
    "povm_coefficients",
    "rotate_covariance",
    "run_protocol",
    "run_qcp",
    "save_series",
    "v_in",
    "v_out",
    "v_out_general",
    "v_out_qcp",
]
