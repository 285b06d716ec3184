"""Daily gain selection over a discretized PI-gain grid.

Three GP-backed selectors share one state type:

- ``scbo``: contextual lower-confidence-bound search restricted to the
  set of gains whose constraint surrogates certify, with probability at
  least 1 - epsilon, that rise time, overshoot and valve-movement costs
  stay below their calibrated thresholds.
- ``cbo``: same acquisition with context but no safety restriction.
- ``bo``: no context dimension and no safety restriction.

All three evaluate the known-safe anchor gains on their first day and
condition the surrogates on it before the acquisition loop starts.

The model-based baseline lives here too: an in-day retuner that fits a
first-order-plus-dead-time response by least squares and applies the
open-loop Ziegler-Nichols PI rule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy.stats import norm

from .costs import NormalizedCosts
from .gp import GPModel, KernelSpec, MATERN52, PRODUCT, combine_gps_batch
from .pid import PIGains

METHOD_FIXED = "fixed"
METHOD_ADA = "ada"
METHOD_BO = "bo"
METHOD_CBO = "cbo"
METHOD_SCBO = "scbo"
GP_METHODS = (METHOD_BO, METHOD_CBO, METHOD_SCBO)
ALL_METHODS = (METHOD_FIXED, METHOD_ADA) + GP_METHODS

DEFAULT_BETA = 2.0
DEFAULT_EPSILON = 0.05
DEFAULT_KP_BOUNDS = (0.02, 20.0)
DEFAULT_KI_BOUNDS = (1e-4, 0.2)
DEFAULT_GRID_SIZE = 40
DEFAULT_ANCHOR = (0.6, 0.004)


@dataclass(frozen=True, eq=False)
class GainDomain:
    """Log-spaced candidate grid with the anchor gains snapped onto it.

    Grid points are ordered kp-major, so index order is (kp ascending,
    then ki ascending); first-occurrence argmin over this order realises
    the lower-kp-then-lower-ki tie break.
    """

    kp_values: np.ndarray
    ki_values: np.ndarray
    anchor_kp: float
    anchor_ki: float

    def __post_init__(self):
        object.__setattr__(self, "kp_values", np.asarray(self.kp_values, dtype=float))
        object.__setattr__(self, "ki_values", np.asarray(self.ki_values, dtype=float))
        for values in (self.kp_values, self.ki_values):
            if values.size < 2 or np.any(values <= 0):
                raise ValueError("gain grids need >= 2 positive values")
            if np.any(np.diff(values) <= 0):
                raise ValueError("gain grids must be strictly increasing")
        if self.anchor_kp not in self.kp_values or self.anchor_ki not in self.ki_values:
            raise ValueError("anchor gains must lie on the grid")

    @classmethod
    def build(
        cls,
        kp_bounds: tuple[float, float] = DEFAULT_KP_BOUNDS,
        ki_bounds: tuple[float, float] = DEFAULT_KI_BOUNDS,
        size: int = DEFAULT_GRID_SIZE,
        anchor: tuple[float, float] = DEFAULT_ANCHOR,
    ) -> "GainDomain":
        """Geometric grids with the node nearest each anchor coordinate
        replaced by the anchor value (nearest-in-log stays between its
        neighbours, so monotonicity survives)."""
        kp = np.geomspace(kp_bounds[0], kp_bounds[1], size)
        ki = np.geomspace(ki_bounds[0], ki_bounds[1], size)
        if not (kp_bounds[0] < anchor[0] < kp_bounds[1] and ki_bounds[0] < anchor[1] < ki_bounds[1]):
            raise ValueError("anchor must lie strictly inside the gain bounds")
        kp[np.argmin(np.abs(np.log(kp) - math.log(anchor[0])))] = anchor[0]
        ki[np.argmin(np.abs(np.log(ki) - math.log(anchor[1])))] = anchor[1]
        return cls(kp, ki, anchor[0], anchor[1])

    @property
    def size(self) -> int:
        return self.kp_values.size * self.ki_values.size

    @cached_property
    def points(self) -> np.ndarray:
        """(size, 2) array of (kp, ki), kp-major."""
        return np.column_stack(
            [
                np.repeat(self.kp_values, self.ki_values.size),
                np.tile(self.ki_values, self.kp_values.size),
            ]
        )

    def normalize(self, gains: np.ndarray) -> np.ndarray:
        """Map raw (kp, ki) rows to [0,1]^2 via log scaling against the
        grid end points. Off-grid gains (calibration perturbations) are
        allowed."""
        g = np.atleast_2d(np.asarray(gains, dtype=float))
        lo = np.log([self.kp_values[0], self.ki_values[0]])
        hi = np.log([self.kp_values[-1], self.ki_values[-1]])
        return (np.log(g) - lo) / (hi - lo)

    @cached_property
    def unit_points(self) -> np.ndarray:
        return self.normalize(self.points)

    @cached_property
    def anchor_index(self) -> int:
        i_kp = int(np.searchsorted(self.kp_values, self.anchor_kp))
        i_ki = int(np.searchsorted(self.ki_values, self.anchor_ki))
        return i_kp * self.ki_values.size + i_ki

    def gains_at(self, index: int) -> PIGains:
        kp, ki = self.points[index]
        return PIGains(float(kp), float(ki))

    def index_of(self, gains: PIGains) -> int:
        i_kp = int(np.searchsorted(self.kp_values, gains.kp))
        i_ki = int(np.searchsorted(self.ki_values, gains.ki))
        if (
            i_kp >= self.kp_values.size
            or i_ki >= self.ki_values.size
            or self.kp_values[i_kp] != gains.kp
            or self.ki_values[i_ki] != gains.ki
        ):
            raise ValueError(f"gains ({gains.kp}, {gains.ki}) are not on the grid")
        return i_kp * self.ki_values.size + i_ki

    def to_dict(self) -> dict:
        return {
            "kp_values": [float(v) for v in self.kp_values],
            "ki_values": [float(v) for v in self.ki_values],
            "anchor": [self.anchor_kp, self.anchor_ki],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GainDomain":
        return cls(np.array(d["kp_values"]), np.array(d["ki_values"]), d["anchor"][0], d["anchor"][1])


@dataclass(frozen=True)
class ContextScaler:
    """Linear map from outside-air temperature to the unit interval,
    anchored to the calibration season's morning-reading range."""

    oat_min: float
    oat_max: float

    def __post_init__(self):
        if not self.oat_max > self.oat_min:
            raise ValueError("oat_max must exceed oat_min")

    def normalize(self, oat: float) -> float:
        return (oat - self.oat_min) / (self.oat_max - self.oat_min)

    def to_dict(self) -> dict:
        return {"oat_min": self.oat_min, "oat_max": self.oat_max}

    @classmethod
    def from_dict(cls, d: dict) -> "ContextScaler":
        return cls(d["oat_min"], d["oat_max"])


def gain_kernel_template(lengthscale: float = 0.3, signal_variance: float = 1.0) -> KernelSpec:
    """Starting kernel for context-free surrogates (2 gain dims)."""
    return KernelSpec(MATERN52, (lengthscale, lengthscale), signal_variance)


def contextual_kernel_template(lengthscale: float = 0.3, signal_variance: float = 1.0) -> KernelSpec:
    """Starting kernel for contextual surrogates (2 gain dims + context)."""
    return KernelSpec(PRODUCT, (lengthscale, lengthscale, lengthscale), signal_variance)


def drop_context(model: GPModel) -> GPModel:
    """Context-free slice of a fitted contextual surrogate.

    The product kernel factorizes into a gain part and a context part,
    so at any fixed context the covariance is the gain part with the
    fitted lengthscales and signal variance unchanged. The context-free
    search reuses that slice instead of refitting without the weather
    input: hyperparameters stay fixed after calibration, and a fit that
    cannot see the context would misread weather variation as noise and
    stop exploring.
    """
    spec = model.kernel
    if spec.family != PRODUCT:
        raise ValueError("only contextual product kernels have a context axis to drop")
    sliced = KernelSpec(MATERN52, spec.lengthscales[:2], spec.signal_variance)
    return GPModel.empty(sliced, model.noise_variance, model.basis_coefficient)


@dataclass(frozen=True)
class Observation:
    day: int
    context: float
    gain_index: int
    costs: tuple[float, float, float, float]  # normalized j1..j4


@dataclass(frozen=True, eq=False)
class OptimizerState:
    """Immutable bundle of surrogates plus the observation log.

    ``cost_models`` carry the constant-basis mean and regress the
    normalized costs directly. ``constraint_models`` are zero-mean GPs
    over the safety headroom (cost minus threshold): with no data their
    certificate is 0 + q*sigma_prior > 0, so unexplored gains stay out
    of the safe set and exploration can only creep outward from
    observed safe territory.
    """

    method: str
    domain: GainDomain
    scaler: ContextScaler | None
    weights: tuple[float, float, float, float]
    thresholds: tuple[float, float, float]
    cost_models: tuple[GPModel, ...]
    constraint_models: tuple[GPModel, ...]
    beta: float = DEFAULT_BETA
    epsilon: float = DEFAULT_EPSILON
    observations: tuple[Observation, ...] = ()

    def __post_init__(self):
        if self.method not in GP_METHODS:
            raise ValueError(f"method must be one of {GP_METHODS}")
        if self.method == METHOD_BO:
            if self.scaler is not None:
                raise ValueError("context-free search takes no context scaler")
        elif self.scaler is None:
            raise ValueError(f"{self.method} requires a context scaler")
        if len(self.cost_models) != 4:
            raise ValueError("four cost surrogates required")
        n_constraints = 3 if self.method == METHOD_SCBO else 0
        if len(self.constraint_models) != n_constraints:
            raise ValueError(f"{self.method} requires {n_constraints} constraint surrogates")
        if any(m.basis_coefficient is not None for m in self.constraint_models):
            raise ValueError("constraint surrogates must be zero-mean")
        dim = self.input_dim
        for m in self.cost_models + self.constraint_models:
            if m.kernel.input_dim != dim:
                raise ValueError(f"all surrogates must take {dim}-dim inputs")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 0.5)")
        if len(self.weights) != 4 or any(w <= 0 for w in self.weights):
            raise ValueError("four positive weights required")
        if len(self.thresholds) != 3 or any(c <= 0 for c in self.thresholds):
            raise ValueError("three positive thresholds required")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "thresholds", tuple(float(c) for c in self.thresholds))

    @property
    def uses_context(self) -> bool:
        return self.scaler is not None

    @property
    def uses_safety(self) -> bool:
        return self.method == METHOD_SCBO

    @property
    def input_dim(self) -> int:
        return 3 if self.uses_context else 2

    @property
    def anchor_gains(self) -> PIGains:
        return self.domain.gains_at(self.domain.anchor_index)


def _grid_inputs(state: OptimizerState, oat: float) -> np.ndarray:
    pts = state.domain.unit_points
    if not state.uses_context:
        return pts
    z = state.scaler.normalize(oat)
    return np.column_stack([pts, np.full(pts.shape[0], z)])


def _observation_inputs(state: OptimizerState, observations) -> np.ndarray:
    if not observations:
        return np.empty((0, state.input_dim))
    rows = state.domain.unit_points[[o.gain_index for o in observations]]
    if state.uses_context:
        z = np.array([state.scaler.normalize(o.context) for o in observations])
        rows = np.column_stack([rows, z])
    return rows


def _with_observations(state: OptimizerState, observations: tuple[Observation, ...]) -> OptimizerState:
    """Rebuild every surrogate on the given log; single code path shared
    by update, checkpoint restore, and day truncation."""
    x = _observation_inputs(state, observations)
    targets = np.array([o.costs for o in observations]).reshape(len(observations), 4)
    cost_models = tuple(m.with_data(x, targets[:, i]) for i, m in enumerate(state.cost_models))
    constraint_models = tuple(
        m.with_data(x, targets[:, i] - state.thresholds[i])
        for i, m in enumerate(state.constraint_models)
    )
    return replace(state, observations=observations, cost_models=cost_models, constraint_models=constraint_models)


def safe_set(
    state: OptimizerState,
    oat: float,
    epsilon: float | None = None,
    *,
    fallback: bool = True,
) -> np.ndarray:
    """Boolean grid mask of gains certified safe at this context.

    A point is safe when every constraint surrogate puts at least
    1 - epsilon probability on its cost staying at or below the
    threshold. The surrogates regress cost minus threshold, so the
    certificate reads headroom mean + q_{1-eps} * std <= 0. An empty
    set falls back to the anchor singleton unless ``fallback`` is off.
    """
    if not state.constraint_models:
        raise ValueError(f"{state.method} state carries no constraint surrogates")
    eps = state.epsilon if epsilon is None else epsilon
    if not 0.0 < eps < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    q = norm.ppf(1.0 - eps)
    x = _grid_inputs(state, oat)
    mask = np.ones(state.domain.size, dtype=bool)
    for model in state.constraint_models:
        mean, var = model.posterior_batch(x)
        mask &= mean + q * np.sqrt(var) <= 0.0
    if fallback and not mask.any():
        mask = np.zeros(state.domain.size, dtype=bool)
        mask[state.domain.anchor_index] = True
    return mask


def acquire(
    state: OptimizerState,
    oat: float,
    safe_mask: np.ndarray | None = None,
    beta: float | None = None,
) -> int:
    """Grid index minimizing combined-cost mean - beta * std over the
    mask (full grid when no mask). Ties resolve to lower kp, then ki."""
    x = _grid_inputs(state, oat)
    mean, var = combine_gps_batch(state.cost_models, state.weights, x)
    b = state.beta if beta is None else beta
    score = mean - b * np.sqrt(var)
    if safe_mask is not None:
        if not safe_mask.any():
            return state.domain.anchor_index
        score = np.where(safe_mask, score, np.inf)
    return int(np.argmin(score))


@dataclass(frozen=True)
class Proposal:
    gain_index: int
    gains: PIGains
    safe_set_size: int
    used_fallback: bool


def propose(state: OptimizerState, oat: float) -> Proposal:
    """One round of gain selection for the observed context.

    The first call (no observations yet) returns the anchor: the
    surrogates are initialized with the known-safe gains before the
    confidence-bound loop takes over.
    """
    full = state.domain.size
    if not state.observations:
        size = 1 if state.uses_safety else full
        return Proposal(state.domain.anchor_index, state.anchor_gains, size, False)
    if state.uses_safety:
        raw = safe_set(state, oat, fallback=False)
        fb = not bool(raw.any())
        if fb:
            return Proposal(state.domain.anchor_index, state.anchor_gains, 1, True)
        index = acquire(state, oat, raw)
        return Proposal(index, state.domain.gains_at(index), int(raw.sum()), False)
    index = acquire(state, oat)
    return Proposal(index, state.domain.gains_at(index), full, False)


def update(
    state: OptimizerState,
    gains: PIGains,
    oat: float,
    costs: NormalizedCosts,
    day: int | None = None,
) -> OptimizerState:
    """Condition all surrogates on one evaluated day; returns new state."""
    values = (costs.j1, costs.j2, costs.j3, costs.j4)
    if not all(math.isfinite(v) for v in values):
        raise ValueError("non-finite costs rejected")
    index = state.domain.index_of(gains)
    if day is None:
        day = len(state.observations) + 1
    obs = Observation(int(day), float(oat), index, tuple(float(v) for v in values))
    return _with_observations(state, state.observations + (obs,))


def gain_schedule(state: OptimizerState, oats) -> list[tuple[float, PIGains]]:
    """Pure-exploitation gain lookup per context: posterior-mean argmin
    restricted to the safe set when the state carries constraints."""
    table = []
    for oat in np.asarray(oats, dtype=float):
        mask = safe_set(state, oat) if state.uses_safety else None
        index = acquire(state, float(oat), mask, beta=0.0)
        table.append((float(oat), state.domain.gains_at(index)))
    return table


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def _model_to_dict(model: GPModel) -> dict:
    return {
        "kernel": model.kernel.to_dict(),
        "noise_variance": model.noise_variance,
        "basis_coefficient": model.basis_coefficient,
    }


def _model_from_dict(d: dict) -> GPModel:
    return GPModel.empty(KernelSpec.from_dict(d["kernel"]), d["noise_variance"], d["basis_coefficient"])


def state_to_json(state: OptimizerState) -> str:
    doc = {
        "method": state.method,
        "beta": state.beta,
        "epsilon": state.epsilon,
        "weights": list(state.weights),
        "thresholds": list(state.thresholds),
        "domain": state.domain.to_dict(),
        "context": None if state.scaler is None else state.scaler.to_dict(),
        "cost_models": [_model_to_dict(m) for m in state.cost_models],
        "constraint_models": [_model_to_dict(m) for m in state.constraint_models],
        "observations": [
            {"day": o.day, "context": o.context, "gain_index": o.gain_index, "costs": list(o.costs)}
            for o in state.observations
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def state_from_json(text: str) -> OptimizerState:
    doc = json.loads(text)
    base = OptimizerState(
        method=doc["method"],
        domain=GainDomain.from_dict(doc["domain"]),
        scaler=None if doc["context"] is None else ContextScaler.from_dict(doc["context"]),
        weights=tuple(doc["weights"]),
        thresholds=tuple(doc["thresholds"]),
        cost_models=tuple(_model_from_dict(d) for d in doc["cost_models"]),
        constraint_models=tuple(_model_from_dict(d) for d in doc["constraint_models"]),
        beta=doc["beta"],
        epsilon=doc["epsilon"],
    )
    observations = tuple(
        Observation(o["day"], o["context"], o["gain_index"], tuple(o["costs"])) for o in doc["observations"]
    )
    return _with_observations(base, observations)


def state_at_day(state: OptimizerState, day: int) -> OptimizerState:
    """State as of the end of the given day (0 = before any data)."""
    kept = tuple(o for o in state.observations if o.day <= day)
    return _with_observations(state, kept)


# ---------------------------------------------------------------------------
# Model-based baseline: in-day system identification + tuning rule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FOPDTModel:
    """First-order-plus-dead-time fit: T[k+1] = a T[k] + b u[k-L] + c."""

    gain: float  # steady-state degC per unit valve, b / (1 - a)
    time_constant: float  # steps, -1 / ln(a)
    delay: int  # steps
    residual: float  # mean squared one-step prediction error


def fit_fopdt(t_room, valve, max_delay: int = 12) -> FOPDTModel | None:
    """Least-squares fit over delay candidates 0..max_delay.

    All candidates are scored on the common window k in [max_delay, n-2]
    so their residuals are comparable. Candidates with an unstable or
    non-heating fit (a outside (0,1), b <= 0) are discarded; returns
    None when nothing valid remains or the regression is degenerate.
    """
    t = np.asarray(t_room, dtype=float)
    u = np.asarray(valve, dtype=float)
    n = t.size
    rows = n - 1 - max_delay
    if rows < 8:
        return None
    ks = np.arange(max_delay, n - 1)
    target = t[ks + 1]
    best = None
    for delay in range(max_delay + 1):
        design = np.column_stack([t[ks], u[ks - delay], np.ones(rows)])
        coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
        if rank < 3:
            continue
        a, b, _ = coef
        if not (0.0 < a < 1.0 and b > 0.0):
            continue
        mse = float(np.mean((design @ coef - target) ** 2))
        if best is None or mse < best.residual:
            best = FOPDTModel(
                gain=float(b / (1.0 - a)),
                time_constant=float(-1.0 / math.log(a)),
                delay=delay,
                residual=mse,
            )
    return best


def zn_pi_gains(model: FOPDTModel) -> PIGains:
    """Open-loop Ziegler-Nichols PI rule on a FOPDT fit, delay clamped
    to one step: kp = 0.9 tau / (K L), Ti = L / 0.3 steps."""
    lag = max(model.delay, 1)
    kp = 0.9 * model.time_constant / (model.gain * lag)
    ti = lag / 0.3
    return PIGains(kp, kp / ti)


class AdaptiveZnTuner:
    """In-day gain adapter: waits for two hours of samples, then refits
    the FOPDT model hourly on the day so far and retunes. Invalid fits
    keep the previous gains. One instance serves one day."""

    def __init__(self, step_seconds: int = 300, max_delay: int = 12):
        self.warmup_samples = int(round(7200 / step_seconds))
        self.refit_samples = int(round(3600 / step_seconds))
        self.max_delay = max_delay
        self._next_refit = self.warmup_samples
        self.gains: PIGains | None = None

    def __call__(self, k: int, t_room: np.ndarray, valve: np.ndarray, gains: PIGains) -> PIGains:
        if self.gains is None:
            self.gains = gains
        if k >= self._next_refit:
            self._next_refit = k + self.refit_samples
            model = fit_fopdt(t_room, valve, self.max_delay)
            if model is not None:
                self.gains = zn_pi_gains(model)
        return self.gains
