"""Shared numeric building blocks.

Everything downstream (risk measures, closed-form strategies, the CVaR-SGD
optimizer, the hedging lab) draws its randomness and normal-law special
functions from here, so the conventions are fixed once:

* randomness is counter-based (Philox).  An :class:`Rng` is a value, not a
  mutable stream: the same ``(seed, stream)`` always reproduces the same
  draws, and substreams occupy distinct counter blocks, so parallel or
  out-of-order evaluation cannot change results.
* ``norm_*`` functions follow the standard-normal convention (zero mean,
  unit variance) and broadcast over numpy arrays.
* ``cholesky`` is the lower-triangular factorization and reports the failing
  pivot index on non-SPD input, which callers rely on for diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as _sp

__all__ = [
    "FactorizationError",
    "Rng",
    "SpdMatrix",
    "cholesky",
    "erf",
    "erfc",
    "mvn_sample",
    "norm_cdf",
    "norm_pdf",
    "norm_quantile",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_U64 = 2**64


class FactorizationError(ValueError):
    """Raised when a matrix factorization fails; names the failing pivot."""

    def __init__(self, pivot_index: int, pivot_value: float):
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value
        super().__init__(
            f"Cholesky factorization failed at pivot index {pivot_index}: "
            f"leading minor is not positive definite (pivot {pivot_value:.6e})"
        )


@dataclass(frozen=True)
class Rng:
    """Reproducible random source keyed by ``(seed, stream)``.

    Built on Philox, a counter-based generator: the key is the 128-bit pair
    ``(seed, stream)`` and substreams are placed in the high words of the
    256-bit counter.  Two consequences the rest of the library depends on:

    * identical ``(seed, stream)`` (and substream path) means bit-identical
      draws, regardless of thread count or evaluation order;
    * distinct substream paths never overlap (the running counter only
      touches the low word for fewer than 2**64 blocks).

    ``generator()`` returns a *fresh* ``numpy.random.Generator`` each call,
    so an ``Rng`` can be reused without hidden state.
    """

    seed: int
    stream: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) < _U64:
                raise ValueError(f"Rng.{name} must be an integer in [0, 2**64), got {v!r}")
        if len(self.path) > 3:
            raise ValueError("Rng substream path is limited to 3 levels")
        for v in self.path:
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) < _U64:
                raise ValueError(f"Rng substream indices must be integers in [0, 2**64), got {v!r}")

    def substream(self, *indices: int) -> "Rng":
        """Derive an independent, non-overlapping stream, e.g. per (step, model)."""
        return Rng(self.seed, self.stream, self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        counter = [0, 0, 0, 0]
        for i, v in enumerate(self.path):
            counter[i + 1] = int(v)
        bitgen = np.random.Philox(counter=counter, key=[int(self.seed), int(self.stream)])
        return np.random.Generator(bitgen)


def norm_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / _SQRT_2PI
    return float(out) if out.ndim == 0 else out


def norm_cdf(x):
    """Standard normal distribution function."""
    out = _sp.ndtr(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def norm_quantile(p):
    """Inverse of :func:`norm_cdf` on (0, 1).

    Raises ValueError outside the open interval: the callers that feed
    tail levels in must decide how to handle 0/1 themselves (they have
    exact limits there).
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p_arr)) or np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise ValueError(f"norm_quantile requires p in (0, 1), got {p!r}")
    out = _sp.ndtri(p_arr)
    return float(out) if out.ndim == 0 else out


def erf(x):
    """Error function, vectorized."""
    out = _sp.erf(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def erfc(x):
    """Complementary error function (accurate in the far tail)."""
    out = _sp.erfc(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def cholesky(matrix) -> np.ndarray:
    """Lower-triangular L with L @ L.T = matrix.

    Row-wise elimination so that failure can name the offending pivot:
    a non-positive (or non-finite) pivot at index j means the leading
    (j+1)x(j+1) minor is not positive definite.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cholesky requires a square matrix, got shape {a.shape}")
    d = a.shape[0]
    lower = np.zeros_like(a)
    for j in range(d):
        pivot = a[j, j] - lower[j, :j] @ lower[j, :j]
        if not np.isfinite(pivot) or pivot <= 0.0:
            raise FactorizationError(j, float(pivot))
        lower[j, j] = math.sqrt(pivot)
        if j + 1 < d:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """Symmetric positive definite matrix, validated on construction.

    Stores the matrix and its Cholesky factor (the validation is the
    factorization, so it is kept rather than recomputed).
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.data, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"SpdMatrix requires a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("SpdMatrix entries must be finite")
        scale = np.max(np.abs(a))
        if scale > 0 and np.max(np.abs(a - a.T)) > 1e-8 * scale:
            raise ValueError("SpdMatrix requires a symmetric matrix (tolerance 1e-8 relative)")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "data", a)
        object.__setattr__(self, "chol_lower", cholesky(a))  # raises if not PD

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve A x = b via the cached Cholesky factor (two triangular solves)."""
        from scipy.linalg import solve_triangular

        lower = getattr(self, "chol_lower")
        y = solve_triangular(lower, np.asarray(b, dtype=float), lower=True)
        return solve_triangular(lower.T, y, lower=False)

    def whiten(self, b: np.ndarray) -> np.ndarray:
        """Return L^-1 b, so that ||whiten(b)|| = sqrt(b' A^-1 b)."""
        from scipy.linalg import solve_triangular

        return solve_triangular(getattr(self, "chol_lower"), np.asarray(b, dtype=float), lower=True)


def mvn_sample(rng: Rng, mean, cov, count: int) -> np.ndarray:
    """Draw ``count`` correlated normal vectors, shape (count, d).

    ``cov`` may be an SpdMatrix (cached factor reused) or a raw SPD array.
    """
    mean = np.asarray(mean, dtype=float)
    if mean.ndim != 1:
        raise ValueError("mvn_sample mean must be a vector")
    if count < 0:
        raise ValueError("mvn_sample count must be nonnegative")
    if isinstance(cov, SpdMatrix):
        lower = getattr(cov, "chol_lower")
    else:
        lower = cholesky(cov)
    if lower.shape[0] != mean.shape[0]:
        raise ValueError("mean and covariance dimensions disagree")
    z = rng.generator().standard_normal((count, mean.shape[0]))
    return mean + z @ lower.T
