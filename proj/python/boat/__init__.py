"""Python access to the BOAT sensor pipeline."""

from ._core import (
    CalibrationModel,
    StateLibrary,
    ValidationError,
    __version__,
    calibration_metrics,
    compensate,
    critical_angle,
    fit_calibration,
    fit_cubic,
    fresnel,
    load_states,
    ndr_vs_state,
    p_metric,
    replay,
    run_sweep,
    synthesize_states,
    trace_state,
    trace_straight,
)

__all__ = [
    "CalibrationModel",
    "StateLibrary",
    "ValidationError",
    "__version__",
    "calibration_metrics",
    "compensate",
    "critical_angle",
    "fit_calibration",
    "fit_cubic",
    "fresnel",
    "load_states",
    "ndr_vs_state",
    "p_metric",
    "replay",
    "run_sweep",
    "synthesize_states",
    "trace_state",
    "trace_straight",
]
