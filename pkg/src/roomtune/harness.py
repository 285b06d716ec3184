"""Experiment driver: calibration, seeded season runs, persistence.

One seed owns one synthetic weather season. The calibration pass replays
that season under randomly perturbed anchor gains to produce the cost
normalization, the safety thresholds, the context scaling, and the
maximum-likelihood kernel hyperparameters; the evaluation pass then runs
a method day by day against the same weather. Plant noise is keyed by
(seed, day) only, never by method, so every method faces identical
disturbance realizations.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .costs import (
    DEFAULT_WEIGHTS,
    CostNormalization,
    RawCosts,
    calibrate_normalization,
    compute_raw_costs,
)
from .gp import GPModel, fit_hyperparameters
from .optimizer import (
    ALL_METHODS,
    DEFAULT_ANCHOR,
    DEFAULT_BETA,
    DEFAULT_EPSILON,
    DEFAULT_GRID_SIZE,
    DEFAULT_KI_BOUNDS,
    DEFAULT_KP_BOUNDS,
    GP_METHODS,
    METHOD_ADA,
    METHOD_FIXED,
    AdaptiveZnTuner,
    ContextScaler,
    GainDomain,
    OptimizerState,
    _model_from_dict,
    _model_to_dict,
    contextual_kernel_template,
    drop_context,
    propose,
    state_to_json,
    update,
)
from .pid import PIGains
from .plant import (
    DEFAULT_COMPENSATION,
    DaySchedule,
    PlantParams,
    RoomState,
    WeatherCompensation,
    WeatherConfig,
    WeatherDay,
    load_weather_csv,
    simulate_day,
    synth_weather,
)

# Independent random streams, combined as SeedSequence([master, seed, stream, ...]).
STREAM_WEATHER = 0
STREAM_CAL_NOISE = 1
STREAM_CAL_GAINS = 2
STREAM_PLANT = 3
STREAM_FIT = 4

RESULTS_HEADER = (
    "seed,day,oat_c,kp,ki,j1_raw,j2_raw,j3_raw,j4_raw,j1,j2,j3,j4,j_total,safe_set_size,violation"
)

# Raw-cost passthrough for calibration-free fixed-PI runs: unit scales,
# thresholds that never flag.
IDENTITY_NORMALIZATION = CostNormalization(
    (1.0, 1.0, 1.0, 1.0), (math.inf, math.inf, math.inf), DEFAULT_WEIGHTS
)


@dataclass(frozen=True)
class SeasonConfig:
    plant: PlantParams = PlantParams()
    compensation: WeatherCompensation = DEFAULT_COMPENSATION
    schedule: DaySchedule = DaySchedule()
    weights: tuple[float, float, float, float] = DEFAULT_WEIGHTS
    calibration_days: int = 145
    perturbation: float = 0.25
    beta: float = DEFAULT_BETA
    epsilon: float = DEFAULT_EPSILON
    kp_bounds: tuple[float, float] = DEFAULT_KP_BOUNDS
    ki_bounds: tuple[float, float] = DEFAULT_KI_BOUNDS
    grid_size: int = DEFAULT_GRID_SIZE
    initial_gains: tuple[float, float] = DEFAULT_ANCHOR
    days: int = 145
    seeds: int = 5
    master_seed: int = 20161021
    output_dir: str = "results"
    weather_source: str = "synthetic"
    weather_params: dict = field(default_factory=dict)
    weather_csv: str | None = None

    def __post_init__(self):
        if self.days < 1 or self.calibration_days < 1:
            raise ValueError("day counts must be >= 1")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if not 0.0 < self.perturbation < 1.0:
            raise ValueError("perturbation must lie in (0, 1)")
        if self.weather_source not in ("synthetic", "csv"):
            raise ValueError("weather_source must be 'synthetic' or 'csv'")
        if self.weather_source == "csv" and not self.weather_csv:
            raise ValueError("csv weather source needs a path")

    @property
    def anchor_gains(self) -> PIGains:
        return PIGains(*self.initial_gains)

    def build_domain(self) -> GainDomain:
        return GainDomain.build(self.kp_bounds, self.ki_bounds, self.grid_size, self.initial_gains)


def _check_keys(doc: dict, allowed, where: str) -> None:
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ValueError(f"unknown {where} config keys: {unknown}")


def config_from_dict(doc: dict) -> SeasonConfig:
    """Assemble a config from the sectioned JSON layout; missing keys
    fall back to defaults, unknown keys are rejected."""
    _check_keys(doc, ("plant", "compensation", "schedule", "costs", "optimizer", "season"), "top-level")
    plant = PlantParams(**doc.get("plant", {}))
    comp_doc = doc.get("compensation", {})
    _check_keys(comp_doc, ("breakpoints",), "compensation")
    compensation = (
        WeatherCompensation(tuple(tuple(p) for p in comp_doc["breakpoints"]))
        if "breakpoints" in comp_doc
        else DEFAULT_COMPENSATION
    )
    schedule = DaySchedule(**doc.get("schedule", {}))
    costs_doc = doc.get("costs", {})
    _check_keys(costs_doc, ("weights", "calibration_days", "perturbation"), "costs")
    opt_doc = doc.get("optimizer", {})
    _check_keys(
        opt_doc, ("beta", "epsilon", "kp_bounds", "ki_bounds", "grid_size", "initial_gains"), "optimizer"
    )
    season_doc = doc.get("season", {})
    _check_keys(season_doc, ("days", "seeds", "master_seed", "output_dir", "weather"), "season")
    weather_doc = dict(season_doc.get("weather", {}))
    source = weather_doc.pop("source", "synthetic")
    if source == "csv":
        _check_keys(weather_doc, ("path",), "weather")
    else:
        synth_keys = tuple(f.name for f in fields(WeatherConfig) if f.name not in ("days", "step_seconds"))
        _check_keys(weather_doc, synth_keys, "weather")
    return SeasonConfig(
        plant=plant,
        compensation=compensation,
        schedule=schedule,
        weights=tuple(costs_doc.get("weights", DEFAULT_WEIGHTS)),
        calibration_days=costs_doc.get("calibration_days", 145),
        perturbation=costs_doc.get("perturbation", 0.25),
        beta=opt_doc.get("beta", DEFAULT_BETA),
        epsilon=opt_doc.get("epsilon", DEFAULT_EPSILON),
        kp_bounds=tuple(opt_doc.get("kp_bounds", DEFAULT_KP_BOUNDS)),
        ki_bounds=tuple(opt_doc.get("ki_bounds", DEFAULT_KI_BOUNDS)),
        grid_size=opt_doc.get("grid_size", DEFAULT_GRID_SIZE),
        initial_gains=tuple(opt_doc.get("initial_gains", DEFAULT_ANCHOR)),
        days=season_doc.get("days", 145),
        seeds=season_doc.get("seeds", 5),
        master_seed=season_doc.get("master_seed", 20161021),
        output_dir=season_doc.get("output_dir", "results"),
        weather_source=source,
        weather_params=weather_doc if source == "synthetic" else {},
        weather_csv=weather_doc.get("path") if source == "csv" else None,
    )


def load_config(path) -> SeasonConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def season_weather(config: SeasonConfig, seed: int) -> list[WeatherDay]:
    """Weather for the full horizon (max of calibration and evaluation
    lengths) so both phases of one seed see identical days."""
    horizon = max(config.days, config.calibration_days)
    if config.weather_source == "csv":
        days = load_weather_csv(config.weather_csv, config.plant.step_seconds)
        if len(days) < horizon:
            raise ValueError(f"weather CSV covers {len(days)} days, need {horizon}")
        return days[:horizon]
    wc = WeatherConfig(days=horizon, step_seconds=config.plant.step_seconds, **config.weather_params)
    rng = np.random.default_rng(np.random.SeedSequence([config.master_seed, seed, STREAM_WEATHER]))
    return synth_weather(wc, rng)


def _morning_oat(config: SeasonConfig, day_weather: WeatherDay) -> float:
    idx = config.schedule.morning_step_index(config.plant.step_seconds)
    return float(day_weather.oat_profile[idx])


def _initial_room(config: SeasonConfig) -> RoomState:
    sp = config.schedule.night_setpoint
    return RoomState(sp, sp)


def _burn_in(config: SeasonConfig, seed: int, stream: int, day_weather) -> tuple[RoomState, float]:
    """Settle room and controller on the first weather day before the
    season starts, so day 1 is not distorted by a cold controller. The
    burn-in day is discarded; only its final state is kept."""
    rng = np.random.default_rng(np.random.SeedSequence([config.master_seed, seed, stream, 0]))
    _, room, carry = simulate_day(
        config.plant,
        config.compensation,
        day_weather,
        config.anchor_gains,
        config.schedule,
        _initial_room(config),
        rng,
    )
    return room, carry


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    """Per-seed artifact shared by all GP methods of that seed."""

    normalization: CostNormalization
    scaler: ContextScaler
    contextual_cost_models: tuple[GPModel, ...]  # 4, basis mean enabled
    contextual_constraint_models: tuple[GPModel, ...]  # 3, zero mean
    gain_only_cost_models: tuple[GPModel, ...]  # 4, context axis dropped from the contextual fits

    def to_json(self) -> str:
        doc = {
            "normalization": json.loads(self.normalization.to_json()),
            "context": self.scaler.to_dict(),
            "models": {
                "cost_contextual": [_model_to_dict(m) for m in self.contextual_cost_models],
                "constraint_contextual": [_model_to_dict(m) for m in self.contextual_constraint_models],
                "cost_gain_only": [_model_to_dict(m) for m in self.gain_only_cost_models],
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Calibration":
        doc = json.loads(text)
        norm_doc = doc["normalization"]
        return cls(
            normalization=CostNormalization(
                tuple(norm_doc["scales"]), tuple(norm_doc["thresholds"]), tuple(norm_doc["weights"])
            ),
            scaler=ContextScaler.from_dict(doc["context"]),
            contextual_cost_models=tuple(_model_from_dict(d) for d in doc["models"]["cost_contextual"]),
            contextual_constraint_models=tuple(
                _model_from_dict(d) for d in doc["models"]["constraint_contextual"]
            ),
            gain_only_cost_models=tuple(_model_from_dict(d) for d in doc["models"]["cost_gain_only"]),
        )


def _fit_seed(config: SeasonConfig, seed: int, index: int) -> int:
    ss = np.random.SeedSequence([config.master_seed, seed, STREAM_FIT, index])
    return int(ss.generate_state(1)[0])


def run_calibration(config: SeasonConfig, seed: int) -> Calibration:
    """Perturbed-anchor season: simulate, derive normalization, fit all
    kernel hyperparameters once. The perturbed gains double as the
    random safe inputs for maximum-likelihood fitting."""
    weather = season_weather(config, seed)[: config.calibration_days]
    rng_gains = np.random.default_rng(
        np.random.SeedSequence([config.master_seed, seed, STREAM_CAL_GAINS])
    )
    anchor = config.anchor_gains
    room, carry = _burn_in(config, seed, STREAM_CAL_NOISE, weather[0])
    raws: list[RawCosts] = []
    gain_rows = []
    oats = []
    for day, day_weather in enumerate(weather, start=1):
        factors = 1.0 + rng_gains.uniform(-config.perturbation, config.perturbation, 2)
        gains = PIGains(anchor.kp * factors[0], anchor.ki * factors[1])
        rng_noise = np.random.default_rng(
            np.random.SeedSequence([config.master_seed, seed, STREAM_CAL_NOISE, day])
        )
        trace, room, carry = simulate_day(
            config.plant,
            config.compensation,
            day_weather,
            gains,
            config.schedule,
            room,
            rng_noise,
            initial_integral_action=carry,
        )
        raws.append(compute_raw_costs(trace))
        gain_rows.append([gains.kp, gains.ki])
        oats.append(_morning_oat(config, day_weather))

    normalization = calibrate_normalization(raws, config.weights)
    scaler = ContextScaler(min(oats), max(oats))
    domain = config.build_domain()
    x_gain = domain.normalize(np.asarray(gain_rows))
    z = np.array([scaler.normalize(v) for v in oats])
    x_ctx = np.column_stack([x_gain, z])
    y = np.array([normalization.normalize(r).as_array() for r in raws])

    cost_ctx = tuple(
        fit_hyperparameters(
            contextual_kernel_template(), x_ctx, y[:, i], with_basis=True, seed=_fit_seed(config, seed, i)
        ).build()
        for i in range(4)
    )
    # Constraint surrogates regress safety headroom (cost - threshold);
    # zero prior mean then leaves unexplored gains uncertified.
    constraint_ctx = tuple(
        fit_hyperparameters(
            contextual_kernel_template(),
            x_ctx,
            y[:, i] - normalization.thresholds[i],
            with_basis=False,
            seed=_fit_seed(config, seed, 4 + i),
        ).build()
        for i in range(3)
    )
    cost_gain = tuple(drop_context(m) for m in cost_ctx)
    return Calibration(normalization, scaler, cost_ctx, constraint_ctx, cost_gain)


def calibration_path(config: SeasonConfig, seed: int) -> Path:
    return Path(config.output_dir) / f"calibration_seed{seed}.json"


def save_calibration(config: SeasonConfig, seed: int, calibration: Calibration) -> Path:
    path = calibration_path(config, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(calibration.to_json())
    return path


def load_calibration(path) -> Calibration:
    return Calibration.from_json(Path(path).read_text())


def build_optimizer_state(config: SeasonConfig, calibration: Calibration, method: str) -> OptimizerState:
    if method not in GP_METHODS:
        raise ValueError(f"no optimizer state for method {method!r}")
    domain = config.build_domain()
    thresholds = calibration.normalization.thresholds
    weights = calibration.normalization.weights
    if method == "bo":
        return OptimizerState(
            method=method,
            domain=domain,
            scaler=None,
            weights=weights,
            thresholds=thresholds,
            cost_models=calibration.gain_only_cost_models,
            constraint_models=(),
            beta=config.beta,
            epsilon=config.epsilon,
        )
    constraints = calibration.contextual_constraint_models if method == "scbo" else ()
    return OptimizerState(
        method=method,
        domain=domain,
        scaler=calibration.scaler,
        weights=weights,
        thresholds=thresholds,
        cost_models=calibration.contextual_cost_models,
        constraint_models=constraints,
        beta=config.beta,
        epsilon=config.epsilon,
    )


# ---------------------------------------------------------------------------
# Season runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DailyResult:
    seed: int
    day: int
    oat_c: float
    kp: float
    ki: float
    j1_raw: float
    j2_raw: float
    j3_raw: float
    j4_raw: float
    j1: float
    j2: float
    j3: float
    j4: float
    j_total: float
    safe_set_size: int
    violation: bool


@dataclass(frozen=True)
class SeasonRun:
    method: str
    seed: int
    results: tuple[DailyResult, ...]
    final_state: OptimizerState | None


def run_season(
    config: SeasonConfig,
    method: str,
    seed: int,
    calibration: Calibration | None = None,
) -> SeasonRun:
    """One method over one seeded season, one episode per day.

    Gains recorded per row are the ones the day started with; the
    model-based retuner may change them intraday. Simulator divergence
    propagates: a bad day aborts the run rather than being skipped.
    """
    if method not in ALL_METHODS:
        raise ValueError(f"unknown method {method!r}")
    if calibration is None and method != METHOD_FIXED:
        raise ValueError(f"{method} requires a calibration artifact")
    normalization = calibration.normalization if calibration else IDENTITY_NORMALIZATION
    weather = season_weather(config, seed)[: config.days]
    room, carry = _burn_in(config, seed, STREAM_PLANT, weather[0])
    anchor = config.anchor_gains
    opt_state = build_optimizer_state(config, calibration, method) if method in GP_METHODS else None
    ada_gains = anchor
    rows = []
    for day, day_weather in enumerate(weather, start=1):
        oat = _morning_oat(config, day_weather)
        adapter = None
        if method in GP_METHODS:
            proposal = propose(opt_state, oat)
            gains = proposal.gains
            safe_size = proposal.safe_set_size
        elif method == METHOD_ADA:
            gains = ada_gains
            adapter = AdaptiveZnTuner(step_seconds=config.plant.step_seconds)
            safe_size = 1
        else:
            gains = anchor
            safe_size = 1
        rng_noise = np.random.default_rng(
            np.random.SeedSequence([config.master_seed, seed, STREAM_PLANT, day])
        )
        trace, room, carry = simulate_day(
            config.plant,
            config.compensation,
            day_weather,
            gains,
            config.schedule,
            room,
            rng_noise,
            gain_adapter=adapter,
            initial_integral_action=carry,
        )
        raw = compute_raw_costs(trace)
        normed = normalization.normalize(raw)
        if method in GP_METHODS:
            opt_state = update(opt_state, gains, oat, normed, day=day)
        if adapter is not None and adapter.gains is not None:
            ada_gains = adapter.gains
        rows.append(
            DailyResult(
                seed=seed,
                day=day,
                oat_c=oat,
                kp=gains.kp,
                ki=gains.ki,
                j1_raw=raw.j1_rise_s,
                j2_raw=raw.j2_overshoot_c,
                j3_raw=raw.j3_du_l2,
                j4_raw=raw.j4_u_l2,
                j1=normed.j1,
                j2=normed.j2,
                j3=normed.j3,
                j4=normed.j4,
                j_total=normed.total,
                safe_set_size=safe_size,
                violation=normalization.is_violation(normed),
            )
        )
    return SeasonRun(method, seed, tuple(rows), opt_state)


def results_path(config: SeasonConfig, method: str, seed: int) -> Path:
    return Path(config.output_dir) / f"{method}_seed{seed}.csv"


def state_path(config: SeasonConfig, method: str, seed: int) -> Path:
    return Path(config.output_dir) / f"{method}_seed{seed}_state.json"


def write_results_csv(path, results) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER.split(","))
        for r in results:
            writer.writerow(
                [
                    r.seed,
                    r.day,
                    r.oat_c,
                    r.kp,
                    r.ki,
                    r.j1_raw,
                    r.j2_raw,
                    r.j3_raw,
                    r.j4_raw,
                    r.j1,
                    r.j2,
                    r.j3,
                    r.j4,
                    r.j_total,
                    r.safe_set_size,
                    int(r.violation),
                ]
            )


def read_results_csv(path) -> list[DailyResult]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULTS_HEADER.split(","):
            raise ValueError(f"unexpected results header in {path}")
        for row in reader:
            out.append(
                DailyResult(
                    seed=int(row["seed"]),
                    day=int(row["day"]),
                    oat_c=float(row["oat_c"]),
                    kp=float(row["kp"]),
                    ki=float(row["ki"]),
                    j1_raw=float(row["j1_raw"]),
                    j2_raw=float(row["j2_raw"]),
                    j3_raw=float(row["j3_raw"]),
                    j4_raw=float(row["j4_raw"]),
                    j1=float(row["j1"]),
                    j2=float(row["j2"]),
                    j3=float(row["j3"]),
                    j4=float(row["j4"]),
                    j_total=float(row["j_total"]),
                    safe_set_size=int(row["safe_set_size"]),
                    violation=bool(int(row["violation"])),
                )
            )
    return out


def persist_run(config: SeasonConfig, run: SeasonRun) -> Path:
    path = results_path(config, run.method, run.seed)
    write_results_csv(path, run.results)
    if run.final_state is not None:
        state_path(config, run.method, run.seed).write_text(state_to_json(run.final_state))
    return path


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


def cumulative_average(totals) -> np.ndarray:
    """Prefix means of the daily totals, ordered by day."""
    arr = np.asarray(totals, dtype=float)
    return np.cumsum(arr) / np.arange(1, arr.size + 1)


@dataclass(frozen=True)
class SeasonReport:
    days: int
    cumulative: dict  # method -> {"median"|"min"|"max": list per day}
    final_median: dict  # method -> float
    improvement_vs_fixed_pct: dict  # method -> float, present when fixed ran

    def to_json(self) -> str:
        doc = {
            "days": self.days,
            "cumulative_average": self.cumulative,
            "final_median_cumulative_average": self.final_median,
            "improvement_vs_fixed_pct": self.improvement_vs_fixed_pct,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def compare_report(results_by_method: dict[str, list[list[DailyResult]]]) -> SeasonReport:
    """Aggregate per-seed runs into the cross-seed cumulative-average
    statistics and the end-of-season improvement over the fixed gains."""
    if not results_by_method:
        raise ValueError("no results to report")
    day_counts = {
        len(rows) for seed_runs in results_by_method.values() for rows in seed_runs
    }
    if len(day_counts) != 1:
        raise ValueError(f"mismatched day counts across runs: {sorted(day_counts)}")
    days = day_counts.pop()
    if days < 1:
        raise ValueError("runs are empty")
    cumulative = {}
    final_median = {}
    for method, seed_runs in results_by_method.items():
        if not seed_runs:
            raise ValueError(f"method {method!r} has no seed runs")
        curves = []
        for rows in seed_runs:
            ordered = sorted(rows, key=lambda r: r.day)
            curves.append(cumulative_average([r.j_total for r in ordered]))
        stacked = np.vstack(curves)
        cumulative[method] = {
            "median": np.median(stacked, axis=0).tolist(),
            "min": stacked.min(axis=0).tolist(),
            "max": stacked.max(axis=0).tolist(),
        }
        final_median[method] = float(np.median(stacked[:, -1]))
    improvements = {}
    if METHOD_FIXED in final_median:
        base = final_median[METHOD_FIXED]
        improvements = {
            method: float(100.0 * (base - value) / base) for method, value in final_median.items()
        }
    return SeasonReport(days, cumulative, final_median, improvements)


_RESULT_FILE = re.compile(r"^(fixed|ada|bo|cbo|scbo)_seed(\d+)\.csv$")


def collect_results(directory) -> dict[str, list[list[DailyResult]]]:
    """Load every results CSV in a directory, grouped by method."""
    grouped: dict[str, list[list[DailyResult]]] = {}
    for path in sorted(Path(directory).iterdir()):
        m = _RESULT_FILE.match(path.name)
        if m:
            grouped.setdefault(m.group(1), []).append(read_results_csv(path))
    if not grouped:
        raise ValueError(f"no results CSVs found in {directory}")
    return grouped
