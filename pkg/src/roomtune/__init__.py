"""Safe contextual Bayesian tuning of room-heating PI gains on a
simulated thermal plant."""

from .costs import (
    CostNormalization,
    EpisodeTrace,
    NormalizedCosts,
    RawCosts,
    calibrate_normalization,
    compute_raw_costs,
)
from .gp import GPModel, KernelSpec, PosteriorEstimate, fit_hyperparameters
from .harness import (
    Calibration,
    DailyResult,
    SeasonConfig,
    SeasonReport,
    compare_report,
    run_calibration,
    run_season,
)
from .optimizer import (
    ContextScaler,
    GainDomain,
    OptimizerState,
    acquire,
    gain_schedule,
    propose,
    safe_set,
    state_at_day,
    state_from_json,
    state_to_json,
    update,
)
from .pid import ControllerState, PIGains, control_step, reset
from .plant import (
    DaySchedule,
    PlantParams,
    RoomState,
    WeatherCompensation,
    WeatherDay,
    simulate_day,
    synth_weather,
)

__all__ = [
    "Calibration",
    "ContextScaler",
    "ControllerState",
    "CostNormalization",
    "DailyResult",
    "DaySchedule",
    "EpisodeTrace",
    "GPModel",
    "GainDomain",
    "KernelSpec",
    "NormalizedCosts",
    "OptimizerState",
    "PIGains",
    "PlantParams",
    "PosteriorEstimate",
    "RawCosts",
    "RoomState",
    "SeasonConfig",
    "SeasonReport",
    "WeatherCompensation",
    "WeatherDay",
    "acquire",
    "calibrate_normalization",
    "compare_report",
    "compute_raw_costs",
    "control_step",
    "fit_hyperparameters",
    "gain_schedule",
    "propose",
    "reset",
    "run_calibration",
    "run_season",
    "safe_set",
    "simulate_day",
    "state_at_day",
    "state_from_json",
    "state_to_json",
    "synth_weather",
    "update",
]
