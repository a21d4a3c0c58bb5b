"""Global distribution estimation and entropy-pooling attention weights.

A node that has collected its neighbors' fitted label summaries mixes them,
weighted by sample counts, into an estimate of the federation-wide label
distribution. The attention each contributor receives during model
aggregation is its KL divergence from that global estimate, normalized over
the neighborhood; a federation of identical distributions degenerates to
uniform attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distfit import FittedDistribution, GmmParams, mixture_pmf
from .errors import ConsistencyError

KLD_EPS = 1e-12
UNIFORM_FALLBACK_THRESHOLD = 1e-10


@dataclass
class GlobalDistribution:
    """Sample-weighted mixture of the neighborhood's fitted distributions."""

    mix_weights: np.ndarray  # p_k = N_k / sum(N), in contributor order
    components: list[GmmParams]
    n_classes: int

    def __post_init__(self):
        self.mix_weights = np.asarray(self.mix_weights, dtype=np.float64)
        if len(self.mix_weights) != len(self.components) or not len(self.components):
            raise ValueError("need one mix weight per component, at least one of each")
        if abs(self.mix_weights.sum() - 1.0) > 1e-9:
            raise ValueError("mix weights must sum to 1")


@dataclass
class PoolingWeights:
    """Divergences from the global estimate and the attention they induce."""

    kld: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.kld = np.asarray(self.kld, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.kld.shape != self.alpha.shape:
            raise ValueError("kld and alpha must have matching lengths")
        if np.any(self.alpha < 0.0) or abs(self.alpha.sum() - 1.0) > 1e-9:
            raise ValueError("attention must be non-negative and sum to 1")


def estimate_global(fits: list[FittedDistribution]) -> GlobalDistribution:
    """Mix the contributors' fitted distributions with weights N_k / sum(N)."""
    if not fits:
        raise ValueError("need at least one fitted distribution")
    n_classes = fits[0].n_classes
    for f in fits[1:]:
        if f.n_classes != n_classes:
            raise ConsistencyError(
                f"fits disagree on the class alphabet: {f.n_classes} vs {n_classes}"
            )
    counts = np.array([f.n_samples for f in fits], dtype=np.float64)
    return GlobalDistribution(counts / counts.sum(), [f.params for f in fits], n_classes)


def global_discrete(global_dist: GlobalDistribution) -> np.ndarray:
    """Discrete class probabilities of the global estimate."""
    acc = np.zeros(global_dist.n_classes)
    for p_k, params in zip(global_dist.mix_weights, global_dist.components):
        acc += p_k * mixture_pmf(params, global_dist.n_classes)
    return acc / acc.sum()


def kl_divergence(p_global, p_local, eps: float = KLD_EPS) -> float:
    """KL divergence sum_y P(y) (ln P(y) - ln P_k(y)) over the class alphabet.

    Both arguments are floored at eps inside the logarithms; entries where
    P(y) is exactly zero contribute nothing.
    """
    p = np.asarray(p_global, dtype=np.float64)
    q = np.asarray(p_local, dtype=np.float64)
    if p.shape != q.shape:
        raise ConsistencyError(f"distribution lengths differ: {p.shape} vs {q.shape}")
    terms = np.where(p > 0.0, p * (np.log(np.maximum(p, eps)) - np.log(np.maximum(q, eps))), 0.0)
    return float(terms.sum())


def entropy_pooling_weights(
    p_global,
    p_locals: list,
    inverse: bool = False,
    eps: float = KLD_EPS,
) -> PoolingWeights:
    """Attention per contributor from its divergence against the global estimate.

    By default attention is directly proportional to divergence. When every
    divergence is (numerically) zero the federation is IID and attention
    falls back to uniform. ``inverse`` switches to attention proportional to
    1 / (divergence + eps), an ablation mode.
    """
    if not len(p_locals):
        raise ValueError("need at least one local distribution")
    # Rounding can leave a divergence a hair below zero; clamp before pooling.
    kld = np.maximum(np.array([kl_divergence(p_global, p, eps) for p in p_locals]), 0.0)
    if inverse:
        inv = 1.0 / (kld + eps)
        alpha = inv / inv.sum()
    else:
        total = kld.sum()
        if total < UNIFORM_FALLBACK_THRESHOLD:
            alpha = np.full(len(kld), 1.0 / len(kld))
        else:
            alpha = kld / total
    return PoolingWeights(kld, alpha)
