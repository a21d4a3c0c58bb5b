"""Deterministic numeric kernel: seeded random streams and stable reductions.

All statistical code in this package works in float64. Dense matrices are
plain 2-D C-order ``numpy.ndarray`` objects; :func:`ensure_matrix` is the
boundary check that public operations apply to incoming arrays.

Randomness goes through :class:`Rng`, a thin wrapper over PCG64. Sub-streams
for a particular node or purpose are derived from ``(seed, *tags)`` so that
the order in which nodes are created, or whether some stream is ever used,
has no effect on any other stream.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

__all__ = [
    "Rng",
    "ensure_matrix",
    "log_sum_exp",
    "sample_gamma",
    "sample_gamma_array",
    "softmax",
]

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _tag_to_int(tag) -> int:
    """Map an arbitrary tag (int or string) to a stable 64-bit integer."""
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK64
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """Seeded pseudo-random stream with documented sub-seeding.

    ``Rng(seed)`` is the root stream of an experiment. ``Rng(seed, node_id,
    "train")`` is the training stream of one node: distinct tag tuples give
    independent deterministic streams, and identical ``(seed, tags)`` always
    reproduce the identical draw sequence.
    """

    def __init__(self, seed: int, *tags):
        self.seed = int(seed)
        self.tags = tuple(tags)
        entropy = [self.seed & _MASK64] + [_tag_to_int(t) for t in tags]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    @classmethod
    def substream(cls, seed: int, *tags) -> "Rng":
        """Derive the deterministic sub-stream keyed by ``(seed, *tags)``."""
        return cls(seed, *tags)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, tags={self.tags!r})"

    def uniform(self, size=None):
        """Draws from U[0, 1)."""
        return self._gen.random(size)

    def normal(self, size=None):
        """Draws from the standard normal."""
        return self._gen.standard_normal(size)

    def integers(self, low: int, high: int, size=None):
        """Integer draws from [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        """Indices chosen from range(n)."""
        return self._gen.choice(n, size=size, replace=replace)


def ensure_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a finite 2-D float64 array."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite values")
    return out


def log_sum_exp(values, axis=None):
    """Stable ln(sum(exp(values))), safe for inputs as low as -1e6.

    Raises ValueError on an empty input.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector is undefined")
    m = np.max(v, axis=axis, keepdims=True)
    # An all -inf slice would otherwise produce nan from (-inf) - (-inf).
    m_safe = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(v - m_safe), axis=axis, keepdims=True)
    out = np.log(s) + m_safe
    if axis is None:
        return float(np.squeeze(out))
    return np.squeeze(out, axis=axis)


def softmax(values, axis=-1) -> np.ndarray:
    """Exponentiate and normalize along ``axis``; rows sum to 1."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty vector is undefined")
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def sample_gamma(rng: Rng, shape: float) -> float:
    """One draw from Gamma(shape, 1) via the Marsaglia-Tsang squeeze method.

    Shapes below 1 use the boost transform: draw Gamma(shape + 1) and scale
    by U^(1/shape). Always returns a strictly positive value.
    """
    _check_gamma_shape(shape)
    if shape < 1.0:
        # 1 - U lies in (0, 1], keeping the boosted draw strictly positive.
        u = 1.0 - rng.uniform()
        return sample_gamma(rng, shape + 1.0) * u ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = rng.normal()
        t = 1.0 + c * x
        if t <= 0.0:
            continue
        v = t * t * t
        u = rng.uniform()
        if u < 1.0 - 0.0331 * x * x * x * x:
            return d * v
        if u <= 0.0 or math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v


def sample_gamma_array(rng: Rng, shape: float, n: int) -> np.ndarray:
    """Vectorized Gamma(shape, 1) draws; same method as :func:`sample_gamma`."""
    _check_gamma_shape(shape)
    if n < 0:
        raise ValueError("n must be non-negative")
    if shape < 1.0:
        u = 1.0 - rng.uniform(n)
        return sample_gamma_array(rng, shape + 1.0, n) * u ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(n, dtype=np.float64)
    pending = np.arange(n)
    while pending.size:
        x = rng.normal(pending.size)
        u = rng.uniform(pending.size)
        t = 1.0 + c * x
        v = t * t * t
        with np.errstate(divide="ignore", invalid="ignore"):
            squeeze = u < 1.0 - 0.0331 * x**4
            full = np.log(u) < 0.5 * x * x + d * (1.0 - v + np.log(v))
        accept = (v > 0.0) & (squeeze | full)
        out[pending[accept]] = d * v[accept]
        pending = pending[~accept]
    return out


def _check_gamma_shape(shape: float) -> None:
    if not np.isfinite(shape) or shape <= 0.0:
        raise ValueError(f"gamma shape must be a positive finite real, got {shape!r}")
