"""Exact Gaussian process regression on small datasets.

Product kernels (Matern 5/2 over controller-gain inputs, squared
exponential over the context input), optional constant explicit-basis
mean, Cholesky-backed posteriors, and offline maximum-likelihood
hyperparameter fitting with analytic gradients.

Models are values: ``add_observation`` returns a new model, queries are
read-only. Observation counts stay small (one per heating day), so the
Gram factor is rebuilt on every update instead of rank-1 patched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

MATERN52 = "matern52"
SQUARED_EXPONENTIAL = "squared_exponential"
PRODUCT = "product"

_FAMILIES = (MATERN52, SQUARED_EXPONENTIAL, PRODUCT)

# Relative diagonal jitter: duplicate daily contexts make the Gram matrix
# near-singular, so every factorization gets signal_variance * JITTER added.
JITTER = 1e-9

_SQRT5 = math.sqrt(5.0)


class DimensionMismatchError(ValueError):
    """Query or training points do not match the kernel's input dimension."""


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel description.

    ``product`` combines a Matern 5/2 factor over the first two (gain)
    dimensions with a squared-exponential factor over the third (context)
    dimension; the single ``signal_variance`` scales the product.
    """

    family: str
    lengthscales: tuple[float, ...]
    signal_variance: float

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "lengthscales", tuple(float(l) for l in self.lengthscales))
        if not self.lengthscales or any(l <= 0 for l in self.lengthscales):
            raise ValueError("lengthscales must be positive")
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be positive")
        if self.family == PRODUCT and len(self.lengthscales) != 3:
            raise ValueError("product kernel takes 2 gain dims + 1 context dim")

    @property
    def input_dim(self) -> int:
        return len(self.lengthscales)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "lengthscales": list(self.lengthscales),
            "signal_variance": self.signal_variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["family"], tuple(d["lengthscales"]), d["signal_variance"])


@dataclass(frozen=True)
class PosteriorEstimate:
    mean: float
    variance: float  # tiny round-off negatives are clamped to 0


def _as_points(x, dim: int) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if pts.shape[1] != dim:
        raise DimensionMismatchError(f"expected {dim}-dim points, got shape {pts.shape}")
    return pts


def _matern52_profile(r: np.ndarray) -> np.ndarray:
    return (1.0 + _SQRT5 * r + 5.0 / 3.0 * r**2) * np.exp(-_SQRT5 * r)


def _scaled_sq_dists(spec: KernelSpec, x: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Per-dimension squared scaled distances, shape (d, n, m)."""
    diff = x[:, None, :] - x2[None, :, :]
    ell = np.asarray(spec.lengthscales)
    return np.moveaxis((diff / ell) ** 2, -1, 0)


def _kernel_factors(spec: KernelSpec, sq: np.ndarray):
    """Unit-variance kernel value plus the pieces gradients reuse.

    Returns (k_unit, r_matern, matern_profile_grad_coeff, se_value) where
    entries not used by the family are None.
    """
    if spec.family == MATERN52:
        r = np.sqrt(np.sum(sq, axis=0))
        return _matern52_profile(r), r, None
    if spec.family == SQUARED_EXPONENTIAL:
        return np.exp(-0.5 * np.sum(sq, axis=0)), None, None
    r_a = np.sqrt(sq[0] + sq[1])
    se = np.exp(-0.5 * sq[2])
    return _matern52_profile(r_a) * se, r_a, se


def kernel_matrix(spec: KernelSpec, x, x2=None) -> np.ndarray:
    """Cross-covariance matrix k(x_m, x2_n)."""
    xa = _as_points(x, spec.input_dim)
    xb = xa if x2 is None else _as_points(x2, spec.input_dim)
    sq = _scaled_sq_dists(spec, xa, xb)
    k_unit, _, _ = _kernel_factors(spec, sq)
    return spec.signal_variance * k_unit


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    """Scalar kernel evaluation; symmetric in its arguments."""
    return float(kernel_matrix(spec, [np.ravel(x)], [np.ravel(x2)])[0, 0])


def gram_matrix(spec: KernelSpec, points) -> np.ndarray:
    pts = _as_points(points, spec.input_dim)
    if pts.shape[0] == 0:
        raise ValueError("gram_matrix needs at least one point")
    return kernel_matrix(spec, pts)


def _kernel_log_grads(spec: KernelSpec, sq: np.ndarray) -> list[np.ndarray]:
    """d k / d log(lengthscale_i), then d k / d log(signal_variance).

    Uses d m52(r)/dr = -(5/3) r (1 + sqrt5 r) exp(-sqrt5 r), which cancels
    the 1/r of dr/dlog(ell) so r == 0 needs no special casing.
    """
    grads = []
    if spec.family == MATERN52:
        r = np.sqrt(np.sum(sq, axis=0))
        coeff = 5.0 / 3.0 * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)
        for i in range(spec.input_dim):
            grads.append(spec.signal_variance * coeff * sq[i])
        grads.append(spec.signal_variance * _matern52_profile(r))
    elif spec.family == SQUARED_EXPONENTIAL:
        k_unit = np.exp(-0.5 * np.sum(sq, axis=0))
        for i in range(spec.input_dim):
            grads.append(spec.signal_variance * k_unit * sq[i])
        grads.append(spec.signal_variance * k_unit)
    else:
        r_a = np.sqrt(sq[0] + sq[1])
        prof = _matern52_profile(r_a)
        coeff = 5.0 / 3.0 * (1.0 + _SQRT5 * r_a) * np.exp(-_SQRT5 * r_a)
        se = np.exp(-0.5 * sq[2])
        grads.append(spec.signal_variance * se * coeff * sq[0])
        grads.append(spec.signal_variance * se * coeff * sq[1])
        grads.append(spec.signal_variance * prof * se * sq[2])
        grads.append(spec.signal_variance * prof * se)
    return grads


@dataclass(frozen=True)
class GPModel:
    """One cost or constraint surrogate.

    ``basis_coefficient`` is the constant explicit-basis mean; ``None``
    means a plain zero-mean GP. ``gram_factor`` is the lower Cholesky
    factor of K + (noise_variance + jitter) I over ``inputs``.
    """

    kernel: KernelSpec
    noise_variance: float
    basis_coefficient: float | None = None
    inputs: np.ndarray | None = None
    targets: np.ndarray | None = None
    gram_factor: np.ndarray | None = None

    @classmethod
    def empty(
        cls,
        kernel: KernelSpec,
        noise_variance: float,
        basis_coefficient: float | None = None,
    ) -> "GPModel":
        if noise_variance <= 0:
            raise ValueError("noise_variance must be positive")
        return cls(
            kernel=kernel,
            noise_variance=noise_variance,
            basis_coefficient=basis_coefficient,
            inputs=np.empty((0, kernel.input_dim)),
            targets=np.empty(0),
            gram_factor=np.empty((0, 0)),
        )

    @property
    def num_observations(self) -> int:
        return self.inputs.shape[0]

    def _prior_mean(self) -> float:
        return 0.0 if self.basis_coefficient is None else float(self.basis_coefficient)

    def with_data(self, inputs, targets) -> "GPModel":
        """Batch-build a model on the full observation set."""
        x = _as_points(inputs, self.kernel.input_dim) if len(inputs) else np.empty((0, self.kernel.input_dim))
        y = np.asarray(targets, dtype=float).ravel()
        if x.shape[0] != y.shape[0]:
            raise ValueError("inputs and targets length mismatch")
        if y.size and not np.all(np.isfinite(y)):
            raise ValueError("non-finite target values rejected")
        if x.size and not np.all(np.isfinite(x)):
            raise ValueError("non-finite input values rejected")
        if x.shape[0] == 0:
            return replace(self, inputs=x, targets=y, gram_factor=np.empty((0, 0)))
        gram = kernel_matrix(self.kernel, x)
        gram[np.diag_indices_from(gram)] += self.noise_variance + JITTER * self.kernel.signal_variance
        factor = cholesky(gram, lower=True)
        return replace(self, inputs=x, targets=y, gram_factor=factor)

    def add_observation(self, x, y: float) -> "GPModel":
        """Condition on one more (input, target) pair; returns a new model."""
        if not np.isfinite(y):
            raise ValueError("non-finite target values rejected")
        pt = _as_points([np.ravel(x)], self.kernel.input_dim)
        new_x = np.vstack([self.inputs, pt])
        new_y = np.append(self.targets, float(y))
        return self.with_data(new_x, new_y)

    def posterior_batch(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Posterior means and variances at a batch of query points."""
        pts = _as_points(x, self.kernel.input_dim)
        prior_var = np.full(pts.shape[0], self.kernel.signal_variance)
        if self.num_observations == 0:
            return np.full(pts.shape[0], self._prior_mean()), prior_var
        k_star = kernel_matrix(self.kernel, pts, self.inputs)  # (m, n)
        resid = self.targets - self._prior_mean()
        alpha = cho_solve((self.gram_factor, True), resid)
        mean = self._prior_mean() + k_star @ alpha
        v = solve_triangular(self.gram_factor, k_star.T, lower=True)
        var = prior_var - np.sum(v**2, axis=0)
        return mean, np.maximum(var, 0.0)

    def posterior(self, x) -> PosteriorEstimate:
        mean, var = self.posterior_batch([np.ravel(x)])
        return PosteriorEstimate(float(mean[0]), float(var[0]))


def combine_gps(models, weights, x) -> PosteriorEstimate:
    """Posterior of the weighted sum of independent GPs at one point.

    Mean is the weighted sum of means; variance is sum w_i^2 var_i since
    the per-index surrogates carry no cross-covariances.
    """
    w = np.asarray(weights, dtype=float)
    if len(models) != w.size:
        raise ValueError("one weight per model required")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    mean = 0.0
    var = 0.0
    for model, wi in zip(models, w):
        est = model.posterior(x)
        mean += wi * est.mean
        var += wi**2 * est.variance
    return PosteriorEstimate(mean, var)


def combine_gps_batch(models, weights, x) -> tuple[np.ndarray, np.ndarray]:
    """Batched version of :func:`combine_gps` over query points ``x``."""
    w = np.asarray(weights, dtype=float)
    means = None
    variances = None
    for model, wi in zip(models, w):
        m, v = model.posterior_batch(x)
        means = wi * m if means is None else means + wi * m
        variances = wi**2 * v if variances is None else variances + wi**2 * v
    return means, variances


# ---------------------------------------------------------------------------
# Maximum-likelihood hyperparameter fitting (offline, once per experiment)
# ---------------------------------------------------------------------------

# Search region in normalized input units; inputs are mapped to [0, 1]
# before fitting, so these bounds bracket plausible smoothness.
LENGTHSCALE_BOUNDS = (0.05, 10.0)
VARIANCE_BOUNDS = (1e-4, 10.0)


@dataclass(frozen=True)
class FitResult:
    kernel: KernelSpec
    noise_variance: float
    basis_coefficient: float | None
    log_marginal_likelihood: float
    degenerate: bool = False

    def build(self) -> GPModel:
        return GPModel.empty(self.kernel, self.noise_variance, self.basis_coefficient)


def _unpack(theta: np.ndarray, template: KernelSpec):
    d = template.input_dim
    ells = tuple(np.exp(theta[:d]))
    sig = float(np.exp(theta[d]))
    noise = float(np.exp(theta[d + 1]))
    return replace(template, lengthscales=ells, signal_variance=sig), noise


def log_marginal_likelihood(
    theta: np.ndarray,
    template: KernelSpec,
    x: np.ndarray,
    y: np.ndarray,
    with_basis: bool,
) -> tuple[float, np.ndarray]:
    """Concentrated log marginal likelihood and its gradient.

    ``theta`` holds log lengthscales, log signal variance, log noise
    variance. The constant-basis coefficient, when enabled, is profiled
    out by generalized least squares; by the envelope theorem the
    gradient then only needs the kernel-parameter partials.
    """
    spec, noise = _unpack(theta, template)
    n = x.shape[0]
    sq = _scaled_sq_dists(spec, x, x)
    k_unit, _, _ = _kernel_factors(spec, sq)
    gram = spec.signal_variance * k_unit
    jitter = JITTER * spec.signal_variance
    cov = gram + (noise + jitter) * np.eye(n)
    factor = cholesky(cov, lower=True)
    if with_basis:
        ones = np.ones(n)
        ci_y = cho_solve((factor, True), y)
        ci_1 = cho_solve((factor, True), ones)
        alpha_hat = float(ones @ ci_y) / float(ones @ ci_1)
        resid = y - alpha_hat
    else:
        resid = y
    a = cho_solve((factor, True), resid)
    lml = -0.5 * float(resid @ a) - float(np.sum(np.log(np.diag(factor)))) - 0.5 * n * math.log(2 * math.pi)

    cov_inv = cho_solve((factor, True), np.eye(n))
    grads = _kernel_log_grads(spec, sq)
    # signal-variance partial also scales the jitter term
    grads[-1] = grads[-1] + jitter * np.eye(n)
    grads.append(noise * np.eye(n))
    grad = np.array([0.5 * float(a @ g @ a) - 0.5 * float(np.sum(cov_inv * g)) for g in grads])
    return lml, grad


def fit_hyperparameters(
    template: KernelSpec,
    inputs,
    targets,
    *,
    noise_variance: float = 1e-2,
    with_basis: bool = False,
    n_starts: int = 5,
    seed: int = 0,
) -> FitResult:
    """Fit kernel hyperparameters (and basis coefficient) once, offline.

    Multi-start L-BFGS-B on the concentrated log marginal likelihood over
    a bounded region. Hyperparameters are treated as fixed afterwards;
    the optimizer never re-fits them during a season. Constant targets
    short-circuit to the template defaults with ``degenerate=True``.
    """
    x = _as_points(inputs, template.input_dim)
    y = np.asarray(targets, dtype=float).ravel()
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and targets length mismatch")
    if x.shape[0] < 10:
        raise ValueError("need at least 10 calibration samples")
    if float(np.ptp(y)) < 1e-12:
        alpha = float(y[0]) if with_basis else None
        return FitResult(template, noise_variance, alpha, math.nan, degenerate=True)

    d = template.input_dim
    lo = np.log(np.array([LENGTHSCALE_BOUNDS[0]] * d + [VARIANCE_BOUNDS[0]] * 2))
    hi = np.log(np.array([LENGTHSCALE_BOUNDS[1]] * d + [VARIANCE_BOUNDS[1]] * 2))
    bounds = list(zip(lo, hi))

    def objective(theta):
        lml, grad = log_marginal_likelihood(theta, template, x, y, with_basis)
        return -lml, -grad

    rng = np.random.default_rng(seed)
    theta0 = np.log(
        np.clip(
            np.array(list(template.lengthscales) + [template.signal_variance, noise_variance]),
            np.exp(lo),
            np.exp(hi),
        )
    )
    starts = [theta0] + [rng.uniform(lo, hi) for _ in range(max(0, n_starts - 1))]

    best = None
    for start in starts:
        res = minimize(
            objective,
            start,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-10},
        )
        if best is None or res.fun < best.fun:
            best = res

    spec, noise = _unpack(best.x, template)
    alpha = None
    if with_basis:
        cov = kernel_matrix(spec, x)
        cov[np.diag_indices_from(cov)] += noise + JITTER * spec.signal_variance
        factor = cholesky(cov, lower=True)
        ones = np.ones(x.shape[0])
        alpha = float(ones @ cho_solve((factor, True), y)) / float(ones @ cho_solve((factor, True), ones))
    return FitResult(spec, noise, alpha, -float(best.fun))
