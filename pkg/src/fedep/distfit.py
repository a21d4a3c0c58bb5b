"""Gaussian mixture fitting of a node's label values.

A node summarizes its local label vector as a 1-D Gaussian mixture fitted
with expectation-maximization, choosing the component count by BIC under a
cap proportional to the number of distinct labels it holds. The fitted
parameters (plus the sample count) are the only statistics a node ever
shares, and :func:`discretize` turns such a summary back into a probability
vector over the integer class alphabet.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, FittingError, NumericError
from .numkit import Rng, log_sum_exp

_LOG_2PI = math.log(2.0 * math.pi)
_TINY = 1e-300


@dataclass
class GmmParams:
    """Mixture weights, means and variances of a 1-D Gaussian mixture."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        m = len(self.weights)
        if m < 1 or len(self.means) != m or len(self.variances) != m:
            raise ValueError("weights, means and variances must share a positive length")
        if not (
            np.all(np.isfinite(self.weights))
            and np.all(np.isfinite(self.means))
            and np.all(np.isfinite(self.variances))
        ):
            raise ValueError("mixture parameters must be finite")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights <= 0.0):
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(self.variances <= 0.0):
            raise ValueError("variances must be positive")

    @property
    def n_components(self) -> int:
        return len(self.weights)


@dataclass
class FittedDistribution:
    """A node's shared summary: mixture parameters, sample count, alphabet size."""

    params: GmmParams
    n_samples: int
    n_classes: int

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")

    def to_json(self) -> str:
        return json.dumps(
            {
                "pi": self.params.weights.tolist(),
                "mu": self.params.means.tolist(),
                "sigma2": self.params.variances.tolist(),
                "n_samples": int(self.n_samples),
                "n_classes": int(self.n_classes),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "FittedDistribution":
        obj = json.loads(text)
        expected = {"pi", "mu", "sigma2", "n_samples", "n_classes"}
        if set(obj) != expected:
            raise ConsistencyError(
                f"distribution payload keys {sorted(obj)} != {sorted(expected)}"
            )
        params = GmmParams(obj["pi"], obj["mu"], obj["sigma2"])
        return cls(params, int(obj["n_samples"]), int(obj["n_classes"]))


@dataclass
class FitConfig:
    """Knobs of the fitting procedure."""

    rho: float = 0.5  # maximum component fraction, in (0, 1]
    max_iterations: int = 200
    tolerance: float = 1e-6
    variance_floor: float = 1e-4
    n_restarts: int = 1
    bic_standard: bool = False  # penalty 3M-1 instead of M

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.max_iterations < 1 or self.n_restarts < 1:
            raise ValueError("max_iterations and n_restarts must be positive")
        if self.tolerance <= 0.0 or self.variance_floor <= 0.0:
            raise ValueError("tolerance and variance_floor must be positive")


def gaussian_pdf(y, mean: float, variance: float):
    """Normal density at y. Vectorizes over y; variance must be positive."""
    if not np.isfinite(variance) or variance <= 0.0:
        raise ValueError(f"variance must be a positive finite real, got {variance!r}")
    y = np.asarray(y, dtype=np.float64)
    out = np.exp(-0.5 * (y - mean) ** 2 / variance) / math.sqrt(2.0 * math.pi * variance)
    return float(out) if out.ndim == 0 else out


def _log_pdf_grid(y: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """(N, M) log densities of every sample under every component."""
    diff = y[:, None] - means[None, :]
    return -0.5 * (_LOG_2PI + np.log(variances)[None, :] + diff * diff / variances[None, :])


def _em(
    y: np.ndarray,
    weights: np.ndarray,
    means: np.ndarray,
    variances: np.ndarray,
    config: FitConfig,
) -> tuple[float, GmmParams, list[float]]:
    """Run EM from the given start; returns (log-likelihood, params, trace).

    The E-step forms log-space responsibilities, the M-step re-estimates
    weights, means and variances in closed form (variances clamped to the
    floor), and iteration stops once the expected complete-data objective
    moves by less than the tolerance. The trace holds the observed-data
    log-likelihood at every visited parameter value; EM theory makes it
    non-decreasing.
    """
    n = len(y)
    pi, mu, var = weights.copy(), means.copy(), np.maximum(variances, config.variance_floor)
    trace: list[float] = []
    prev_q = None
    for it in range(config.max_iterations):
        log_pdf = _log_pdf_grid(y, mu, var)
        log_w = np.log(np.maximum(pi, _TINY))[None, :] + log_pdf
        row_lse = log_sum_exp(log_w, axis=1)
        ll = float(np.sum(row_lse))
        trace.append(ll)
        gamma = np.exp(log_w - row_lse[:, None])
        col = gamma.sum(axis=0)
        q = float(
            np.sum(np.where(col > 0.0, col * np.log(np.maximum(pi, _TINY)), 0.0))
            + np.sum(gamma * log_pdf)
        )
        if not np.isfinite(q) or not np.isfinite(ll):
            raise NumericError("objective became non-finite", iteration=it)
        if prev_q is not None and abs(q - prev_q) < config.tolerance:
            return ll, GmmParams(pi, mu, var), trace
        prev_q = q
        denom = np.maximum(col, _TINY)
        pi = np.maximum(col, _TINY) / n  # keep dead components representable
        pi = pi / pi.sum()
        mu = gamma.T @ y / denom
        var = np.maximum((gamma * (y[:, None] - mu[None, :]) ** 2).sum(axis=0) / denom,
                         config.variance_floor)
        if not (np.all(np.isfinite(pi)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise NumericError("parameters became non-finite", iteration=it)
    # Hit the iteration cap: refresh the likelihood for the final parameters.
    log_w = np.log(np.maximum(pi, _TINY))[None, :] + _log_pdf_grid(y, mu, var)
    ll = float(np.sum(log_sum_exp(log_w, axis=1)))
    trace.append(ll)
    return ll, GmmParams(pi, mu, var), trace


def _quantile_init(y: np.ndarray, m: int, config: FitConfig):
    """Deterministic start: means at evenly spaced quantiles, shared variance."""
    qs = (np.arange(m) + 0.5) / m
    means = np.quantile(y, qs)
    var = max(float(np.var(y)), config.variance_floor)
    return np.full(m, 1.0 / m), means, np.full(m, var)


def _random_init(y: np.ndarray, m: int, config: FitConfig, rng: Rng):
    means = y[rng.choice(len(y), size=m, replace=len(y) < m)].astype(np.float64)
    var = max(float(np.var(y)), config.variance_floor)
    return np.full(m, 1.0 / m), means, np.full(m, var)


def expectation_max(
    labels, m: int, config: FitConfig, rng: Rng | None = None
) -> tuple[float, GmmParams]:
    """Fit an m-component mixture to a 1-D sample by EM.

    The first start is deterministic (quantile means); additional restarts,
    if configured, draw means from the data via the rng and the best final
    likelihood wins. Returns (log-likelihood, parameters).
    """
    y = np.asarray(labels, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValueError("cannot fit a mixture to an empty sample")
    if not 1 <= m <= y.size:
        raise ValueError(f"component count must lie in [1, {y.size}], got {m}")
    best: tuple[float, GmmParams] | None = None
    failure: NumericError | None = None
    for restart in range(config.n_restarts):
        if restart == 0:
            init = _quantile_init(y, m, config)
        else:
            if rng is None:
                raise ValueError("random restarts require an rng")
            init = _random_init(y, m, config, rng)
        try:
            ll, params, _ = _em(y, *init, config)
        except NumericError as err:
            failure = err
            continue
        if best is None or ll > best[0]:
            best = (ll, params)
    if best is None:
        raise failure if failure is not None else NumericError("no restart succeeded")
    return best


def em_trace(labels, m: int, config: FitConfig) -> np.ndarray:
    """Per-iteration log-likelihoods of the deterministic-start EM run."""
    y = np.asarray(labels, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValueError("cannot fit a mixture to an empty sample")
    _, _, trace = _em(y, *_quantile_init(y, m, config), config)
    return np.asarray(trace)


def responsibilities(labels, params: GmmParams) -> np.ndarray:
    """(N, M) posterior component memberships; every row sums to 1."""
    y = np.asarray(labels, dtype=np.float64).ravel()
    log_w = np.log(params.weights)[None, :] + _log_pdf_grid(y, params.means, params.variances)
    return np.exp(log_w - log_sum_exp(log_w, axis=1)[:, None])


def bic(log_likelihood: float, m: int, n: int, standard: bool = False) -> float:
    """Bayesian information criterion; lower is better.

    The default penalty counts the components themselves (m); the standard
    free-parameter count (3m - 1) is available behind ``standard``.
    """
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    penalty = (3 * m - 1) if standard else m
    return -2.0 * log_likelihood + penalty * math.log(n)


def select_components(
    labels, m_max: int, config: FitConfig, rng: Rng | None = None
) -> tuple[int, float, GmmParams]:
    """Fit candidates m = 1..m_max and keep the lowest-BIC one.

    Ties break toward fewer components. Candidates that fail numerically are
    skipped; if every candidate fails, raises FittingError.
    """
    y = np.asarray(labels, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValueError("cannot fit a mixture to an empty sample")
    m_max = min(max(1, m_max), y.size)
    best = None
    for m in range(1, m_max + 1):
        try:
            ll, params = expectation_max(y, m, config, rng)
        except NumericError:
            continue
        score = bic(ll, m, y.size, standard=config.bic_standard)
        if best is None or score < best[1]:
            best = (m, score, params)
    if best is None:
        raise FittingError("every component-count candidate failed to fit")
    return best


def pretrain_distribution_fitting(
    labels, n_classes: int, config: FitConfig, rng: Rng | None = None
) -> FittedDistribution:
    """Fit a node's label vector, capping components at ceil(rho * |distinct|)."""
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.size == 0:
        raise ValueError("cannot fit an empty label vector")
    distinct = len(np.unique(y))
    m_max = max(1, math.ceil(config.rho * distinct))
    _, _, params = select_components(y.astype(np.float64), m_max, config, rng)
    return FittedDistribution(params, int(y.size), int(n_classes))


def mixture_pmf(params: GmmParams, n_classes: int, eps: float = 1e-12) -> np.ndarray:
    """Mixture density sampled at the integer classes, floored and normalized."""
    ys = np.arange(n_classes, dtype=np.float64)
    diff = ys[:, None] - params.means[None, :]
    dens = np.exp(-0.5 * diff * diff / params.variances[None, :]) / np.sqrt(
        2.0 * math.pi * params.variances[None, :]
    )
    pmf = dens @ params.weights + eps
    return pmf / pmf.sum()


def discretize(fit: FittedDistribution) -> np.ndarray:
    """Probability vector of the fitted mixture over {0, ..., n_classes - 1}."""
    return mixture_pmf(fit.params, fit.n_classes)


def histogram_distribution(
    labels, n_classes: int, variance_floor: float = 1e-4
) -> FittedDistribution:
    """Empirical-histogram stand-in when EM fails: one sharp component per present class."""
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.size == 0:
        raise ValueError("cannot summarize an empty label vector")
    classes, counts = np.unique(y, return_counts=True)
    params = GmmParams(
        counts / counts.sum(),
        classes.astype(np.float64),
        np.full(len(classes), variance_floor),
    )
    return FittedDistribution(params, int(y.size), int(n_classes))
