"""Two-state room thermal simulator with weather-compensated heating.

Replaces the proprietary building model with the cheapest dynamics that
still produce context-dependent optima: a discrete affine room state
coupled to a slow wall state, radiator heat proportional to valve
opening times the (water - room) temperature difference, losses
proportional to (outside - room), plus solar/occupancy gains and bounded
Gaussian disturbance noise. Supply-water temperature follows a
piecewise-linear weather-compensation curve with a deliberate slope
change at -3 degC outside temperature.

One step:

    t_room' = a_d * t_room + c_w * t_wall
              + b_u * ua * u * max(water - t_room, 0)
              + b_d * (oat - t_room) + solar + occupancy + noise
    t_wall' = p_w * t_wall + (1 - p_w) * t_room

All parameters are desk-tuned simulator constants, frozen in
DEFAULT_PLANT / DEFAULT_COMPENSATION; none are claims about a real
building.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .costs import EpisodeTrace
from .pid import (
    INTEGRAL_TERM_MAX,
    INTEGRAL_TERM_MIN,
    ControllerState,
    PIGains,
    control_step,
    reset,
)

SECONDS_PER_DAY = 86400


class SimulationDivergedError(RuntimeError):
    """Room temperature left the sanity range during a rollout."""


@dataclass(frozen=True)
class PlantParams:
    room_pole: float = 0.995  # a_d, per step
    input_gain: float = 0.035  # degC per step per unit valve*(water - room)
    disturbance_gain: float = 0.036  # degC per step per degC of (oat - room)
    wall_coupling: float = 0.003
    wall_pole: float = 0.999
    step_seconds: int = 300
    radiator_ua: float = 0.8  # kW/K-equivalent scaling of the heat term
    noise_sigma: float = 0.01  # degC per step, truncated at +-3 sigma

    def __post_init__(self):
        if not 0.0 < self.room_pole < 1.0:
            raise ValueError("room_pole must lie in (0, 1)")
        if self.input_gain <= 0 or self.disturbance_gain <= 0:
            raise ValueError("input_gain and disturbance_gain must be positive")
        if not 0.0 <= self.wall_coupling < 1.0:
            raise ValueError("wall_coupling must lie in [0, 1)")
        if not 0.0 < self.wall_pole < 1.0:
            raise ValueError("wall_pole must lie in (0, 1)")
        if self.step_seconds not in (60, 300):
            raise ValueError("step_seconds must be 60 or 300")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def steps_per_day(self) -> int:
        return SECONDS_PER_DAY // self.step_seconds


@dataclass(frozen=True)
class WeatherCompensation:
    """Piecewise-linear heating curve: outside air temp -> water temp."""

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(o), float(w)) for o, w in self.breakpoints)
        object.__setattr__(self, "breakpoints", pts)
        oats = [o for o, _ in pts]
        waters = [w for _, w in pts]
        if len(pts) < 2:
            raise ValueError("need at least two breakpoints")
        if any(b <= a for a, b in zip(oats, oats[1:])):
            raise ValueError("oat breakpoints must be strictly increasing")
        if any(b > a for a, b in zip(waters, waters[1:])):
            raise ValueError("water temperature must be non-increasing in oat")
        if not self._has_slope_change_at(-3.0):
            raise ValueError("curve must change slope at -3 degC")

    def _has_slope_change_at(self, oat: float) -> bool:
        oats = [o for o, _ in self.breakpoints]
        waters = [w for _, w in self.breakpoints]
        for i in range(1, len(oats) - 1):
            if abs(oats[i] - oat) < 1e-9:
                left = (waters[i] - waters[i - 1]) / (oats[i] - oats[i - 1])
                right = (waters[i + 1] - waters[i]) / (oats[i + 1] - oats[i])
                return abs(left - right) > 1e-12
        return False


def heating_curve(comp: WeatherCompensation, oat: float) -> float:
    """Supply-water temperature for an outside air temperature, clamped
    at the end breakpoints."""
    oats = [o for o, _ in comp.breakpoints]
    waters = [w for _, w in comp.breakpoints]
    return float(np.interp(oat, oats, waters))


DEFAULT_COMPENSATION = WeatherCompensation(((-10.0, 70.0), (-3.0, 60.0), (20.0, 35.0)))


@dataclass(frozen=True)
class RoomState:
    t_room: float
    t_wall: float

    def __post_init__(self):
        if not (math.isfinite(self.t_room) and math.isfinite(self.t_wall)):
            raise ValueError("room state must be finite")


ROOM_TEMP_MIN = -20.0
ROOM_TEMP_MAX = 50.0


def step(
    params: PlantParams,
    state: RoomState,
    valve: float,
    oat: float,
    water_temp: float,
    solar: float = 0.0,
    occupancy: float = 0.0,
    noise: float = 0.0,
) -> RoomState:
    """Advance the thermal state by one control period."""
    if not 0.0 <= valve <= 1.0:
        raise ValueError("valve command must lie in [0, 1]")
    heat = params.input_gain * params.radiator_ua * valve * max(water_temp - state.t_room, 0.0)
    t_room = (
        params.room_pole * state.t_room
        + params.wall_coupling * state.t_wall
        + heat
        + params.disturbance_gain * (oat - state.t_room)
        + solar
        + occupancy
        + noise
    )
    t_wall = params.wall_pole * state.t_wall + (1.0 - params.wall_pole) * state.t_room
    if not ROOM_TEMP_MIN <= t_room <= ROOM_TEMP_MAX:
        raise SimulationDivergedError(f"room temperature {t_room:.2f} degC outside sanity range")
    return RoomState(t_room, t_wall)


@dataclass(frozen=True)
class DaySchedule:
    """Night setback with a morning step-up to the comfort setpoint."""

    night_setpoint: float = 17.0
    comfort_setpoint: float = 21.0
    morning_hour: float = 6.0
    evening_hour: float = 22.0

    def setpoints(self, steps_per_day: int, step_seconds: int) -> np.ndarray:
        hours = np.arange(steps_per_day) * step_seconds / 3600.0
        sp = np.full(steps_per_day, self.night_setpoint)
        comfort = (hours >= self.morning_hour) & (hours < self.evening_hour)
        sp[comfort] = self.comfort_setpoint
        return sp

    def morning_step_index(self, step_seconds: int) -> int:
        return int(round(self.morning_hour * 3600 / step_seconds))


@dataclass(frozen=True)
class WeatherDay:
    """Per-step exogenous profiles for one day.

    Solar and occupancy are already expressed as degC-equivalent gains
    per step, matching the units of the room update.
    """

    oat_profile: np.ndarray
    solar_profile: np.ndarray
    occupancy_profile: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "oat_profile", np.asarray(self.oat_profile, dtype=float))
        object.__setattr__(self, "solar_profile", np.asarray(self.solar_profile, dtype=float))
        object.__setattr__(self, "occupancy_profile", np.asarray(self.occupancy_profile, dtype=float))
        n = self.oat_profile.size
        if self.solar_profile.size != n or self.occupancy_profile.size != n:
            raise ValueError("weather profiles must share one length")
        for arr in (self.oat_profile, self.solar_profile, self.occupancy_profile):
            if not np.all(np.isfinite(arr)):
                raise ValueError("weather profiles must be finite")


def simulate_day(
    params: PlantParams,
    comp: WeatherCompensation,
    weather: WeatherDay,
    gains: PIGains,
    schedule: DaySchedule,
    initial_state: RoomState,
    rng: np.random.Generator | None,
    gain_adapter=None,
    initial_integral_action: float = 0.0,
) -> tuple[EpisodeTrace, RoomState, float]:
    """Closed-loop rollout of one day; returns trace, final thermal state
    and the closing integral term of the controller (in valve units).

    ``gain_adapter``, when given, is called before every control step as
    ``adapter(k, t_room_so_far, valve_so_far, gains) -> PIGains`` and
    lets the model-based baseline retune within the day.

    ``initial_integral_action`` pre-loads the integrator with ki * I in
    valve units. Feeding yesterday's closing value back in gives bumpless
    day-to-day operation regardless of gain changes; without it every
    morning starts from a discharged integrator and the loop spends the
    whole day re-learning the standing heat demand.
    """
    steps = weather.oat_profile.size
    setpoints = schedule.setpoints(steps, params.step_seconds)
    if rng is not None and params.noise_sigma > 0:
        sigma = params.noise_sigma
        noise = np.clip(rng.normal(0.0, sigma, steps), -3.0 * sigma, 3.0 * sigma)
    else:
        noise = np.zeros(steps)

    t_room = np.empty(steps)
    valve = np.empty(steps)
    ctrl = reset()
    if gains.ki > 0.0 and initial_integral_action != 0.0:
        action = min(max(initial_integral_action, INTEGRAL_TERM_MIN), INTEGRAL_TERM_MAX)
        ctrl = ControllerState(action / gains.ki, 0.0)
    state = initial_state
    for k in range(steps):
        if gain_adapter is not None:
            gains = gain_adapter(k, t_room[:k], valve[:k], gains)
        t_room[k] = state.t_room
        u, ctrl = control_step(gains, ctrl, setpoints[k], state.t_room)
        valve[k] = u
        oat = weather.oat_profile[k]
        state = step(
            params,
            state,
            u,
            oat,
            heating_curve(comp, oat),
            weather.solar_profile[k],
            weather.occupancy_profile[k],
            noise[k],
        )
    trace = EpisodeTrace(
        setpoint=setpoints,
        t_room=t_room,
        valve=valve,
        step_seconds=params.step_seconds,
        step_index=schedule.morning_step_index(params.step_seconds),
    )
    return trace, state, gains.ki * ctrl.integrator


# ---------------------------------------------------------------------------
# Weather sources
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeatherConfig:
    """Synthetic heating-season weather generator settings.

    Outside air temperature = seasonal sinusoid (coldest mid-season)
    + daily sinusoid (coldest pre-dawn) + day-scale AR(1) noise. Solar is
    a clipped daytime sinusoid scaled by per-day cloudiness; occupancy
    is a fixed office-hours profile.
    """

    days: int = 145
    step_seconds: int = 300
    edge_oat: float = 7.0  # seasonal mean at season edges, degC
    mid_oat: float = -2.5  # seasonal mean at mid-season, degC
    daily_amplitude: float = 4.0
    warmest_hour: float = 15.0
    ar1_phi: float = 0.85
    ar1_sigma: float = 1.15
    solar_peak: float = 0.34  # degC-equivalent per step at clear midday
    occupancy_gain: float = 0.01  # degC-equivalent per step, 8-18 h

    @property
    def steps_per_day(self) -> int:
        return SECONDS_PER_DAY // self.step_seconds


def synth_weather(config: WeatherConfig, rng: np.random.Generator) -> list[WeatherDay]:
    """Generate one season of daily weather; deterministic given the rng."""
    if config.days < 1:
        raise ValueError("day count must be >= 1")
    steps = config.steps_per_day
    hours = np.arange(steps) * config.step_seconds / 3600.0
    daily = config.daily_amplitude * np.cos(2.0 * np.pi * (hours - config.warmest_hour) / 24.0)
    sun = np.clip(np.sin(np.pi * (hours - 7.0) / 11.0), 0.0, None)
    occupancy = np.where((hours >= 8.0) & (hours < 18.0), config.occupancy_gain, 0.0)

    days = []
    ar = 0.0
    for d in range(config.days):
        phase = d / (config.days - 1) if config.days > 1 else 0.5
        seasonal = config.edge_oat + (config.mid_oat - config.edge_oat) * math.sin(math.pi * phase)
        ar = config.ar1_phi * ar + rng.normal(0.0, config.ar1_sigma)
        cloud = rng.uniform(0.85, 1.0)
        days.append(
            WeatherDay(
                oat_profile=seasonal + ar + daily,
                solar_profile=config.solar_peak * cloud * sun,
                occupancy_profile=occupancy.copy(),
            )
        )
    return days


# degC-equivalent gain per step per W/m^2 of measured irradiance; sized so
# clear-sky 500 W/m^2 matches the synthetic generator's solar_peak scale.
SOLAR_WM2_TO_GAIN = 6.8e-4


def load_weather_csv(
    path,
    step_seconds: int = 300,
    occupancy_gain: float = 0.01,
) -> list[WeatherDay]:
    """Read measured weather and resample it onto the simulation grid.

    Expects the header ``timestamp,oat_celsius,solar_wm2`` with ISO-8601
    timestamps at a fixed interval. Values are linearly interpolated to
    ``step_seconds`` and split into whole days; a trailing partial day is
    dropped.
    """
    times: list[float] = []
    oats: list[float] = []
    solar: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"timestamp", "oat_celsius", "solar_wm2"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise ValueError(f"weather CSV must have header {sorted(expected)}")
        for row in reader:
            times.append(datetime.fromisoformat(row["timestamp"]).timestamp())
            oats.append(float(row["oat_celsius"]))
            solar.append(float(row["solar_wm2"]))
    if len(times) < 2:
        raise ValueError("weather CSV needs at least two rows")
    t = np.asarray(times)
    intervals = np.diff(t)
    if np.ptp(intervals) > 1e-6:
        raise ValueError("weather CSV timestamps must be evenly spaced")

    grid = np.arange(t[0], t[-1] + 1e-9, step_seconds)
    oat_grid = np.interp(grid, t, np.asarray(oats))
    solar_grid = np.interp(grid, t, np.asarray(solar)) * SOLAR_WM2_TO_GAIN

    steps_per_day = SECONDS_PER_DAY // step_seconds
    hours = np.arange(steps_per_day) * step_seconds / 3600.0
    occupancy = np.where((hours >= 8.0) & (hours < 18.0), occupancy_gain, 0.0)
    n_days = grid.size // steps_per_day
    if n_days < 1:
        raise ValueError("weather CSV covers less than one day")
    days = []
    for d in range(n_days):
        sl = slice(d * steps_per_day, (d + 1) * steps_per_day)
        days.append(WeatherDay(oat_grid[sl], solar_grid[sl], occupancy.copy()))
    return days


DEFAULT_PLANT = PlantParams()
DEFAULT_SCHEDULE = DaySchedule()
