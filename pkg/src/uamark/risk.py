"""Risk and uncertainty measures over outcome samples.

All measures here use the *utility* convention: inputs are outcomes where
bigger is better, and each measure returns a certainty equivalent on the
same scale (so translation by a constant moves the measure by the same
constant).  In particular `cvar_lower_mean` is the mean of the worst
alpha-fraction of outcomes — the quantity one *maximizes* when robustifying
— rather than the negated loss-tail common in risk-management texts.  The
two conventions differ only by signs; keeping one of them everywhere makes
every argmax in the library read literally.

A `Sample` is an immutable weighted empirical distribution.  The same
measures exist in closed form for normal laws where needed (`cvar_normal`);
for the entropic measure the normal closed form is mean - lambda/2 * var,
which coincides with `mean_variance` — a fact several tests lean on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .mathkit import norm_pdf, norm_quantile

__all__ = [
    "RiskAversion",
    "Sample",
    "cvar_lower_mean",
    "cvar_normal",
    "cvar_tail_coefficient",
    "entropic",
    "mean_variance",
    "value_at_risk",
]


@dataclass(frozen=True, eq=False)
class Sample:
    """Finite outcome sample with optional weights (normalized to sum 1)."""

    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if v.ndim != 1 or v.size == 0:
            raise ValueError("Sample requires a nonempty 1-d value array")
        if not np.all(np.isfinite(v)):
            raise ValueError("Sample values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.weights is not None:
            w = np.atleast_1d(np.asarray(self.weights, dtype=float))
            if w.shape != v.shape:
                raise ValueError("Sample weights must match values in shape")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValueError("Sample weights must be finite and nonnegative")
            total = w.sum()
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"Sample weights must sum to 1 (got {total!r})")
            w = w / total
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.values.size

    def effective_weights(self) -> np.ndarray:
        if self.weights is not None:
            return self.weights
        return np.full(self.size, 1.0 / self.size)


@dataclass(frozen=True)
class RiskAversion:
    """Aversion bundle: inner lambda, outer lambda_prime, CVaR level alpha."""

    lam: float
    lam_prime: float = 0.0
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be positive, got {self.lam!r}")
        if not (self.lam_prime >= 0 and math.isfinite(self.lam_prime)):
            raise ValueError(f"lam_prime must be nonnegative, got {self.lam_prime!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha!r}")


def _as_sample(sample) -> Sample:
    return sample if isinstance(sample, Sample) else Sample(np.asarray(sample, dtype=float))


def entropic(sample, lam: float) -> float:
    """Entropic certainty equivalent -(1/lam) log E[exp(-lam X)].

    Computed through a shifted log-sum-exp so large lam*|x| cannot
    overflow.  lam=0 returns the plain weighted mean (the limit).
    """
    s = _as_sample(sample)
    if lam < 0 or not math.isfinite(lam):
        raise ValueError(f"entropic requires lam >= 0, got {lam!r}")
    w = s.effective_weights()
    if lam == 0.0:
        return float(w @ s.values)
    return float(-logsumexp(-lam * s.values, b=w) / lam)


def mean_variance(sample, lam: float) -> float:
    """Weighted mean minus lam/2 times the (population-style) weighted variance."""
    s = _as_sample(sample)
    if lam < 0 or not math.isfinite(lam):
        raise ValueError(f"mean_variance requires lam >= 0, got {lam!r}")
    w = s.effective_weights()
    m = float(w @ s.values)
    var = float(w @ (s.values - m) ** 2)
    return m - 0.5 * lam * var


def value_at_risk(sample, gamma: float) -> float:
    """Lower empirical gamma-quantile of the outcomes (not negated)."""
    s = _as_sample(sample)
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"value_at_risk requires gamma in (0, 1), got {gamma!r}")
    order = np.argsort(s.values, kind="stable")
    sorted_vals = s.values[order]
    cum = np.cumsum(s.effective_weights()[order])
    idx = int(np.searchsorted(cum, gamma - 1e-12, side="left"))
    return float(sorted_vals[min(idx, s.size - 1)])


def cvar_lower_mean(sample, alpha: float) -> float:
    """Mean of the worst alpha-fraction of outcomes (utility-style CVaR).

    Uniform samples keep the k = ceil(alpha*n) smallest values, matching a
    brute-force enumeration at every alpha = j/n.  Weighted samples fill
    cumulative weight alpha from the bottom, including the boundary atom
    fractionally; the two rules agree at atom boundaries.
    """
    s = _as_sample(sample)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"cvar_lower_mean requires alpha in (0, 1], got {alpha!r}")
    order = np.argsort(s.values, kind="stable")
    sorted_vals = s.values[order]
    if s.weights is None:
        k = max(1, math.ceil(alpha * s.size - 1e-9))
        return float(sorted_vals[:k].mean())
    w = s.weights[order]
    cum = np.cumsum(w)
    j = int(np.searchsorted(cum, alpha - 1e-12, side="left"))
    j = min(j, s.size - 1)
    below = float(w[:j] @ sorted_vals[:j])
    frac = alpha - (float(cum[j - 1]) if j > 0 else 0.0)
    frac = min(max(frac, 0.0), float(w[j]))
    return (below + frac * sorted_vals[j]) / alpha


def cvar_tail_coefficient(alpha) -> float | np.ndarray:
    """kappa_alpha = phi(Phi^-1(alpha)) / alpha.

    The magnitude by which the mean of the lower alpha-tail of a standard
    normal sits below 0; the soft-threshold constant of the closed-form
    tail strategies.  kappa_1 = 0, kappa decreases to 0 as alpha -> 1 and
    grows without bound as alpha -> 0.
    """
    a = np.asarray(alpha, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(a <= 0.0) or np.any(a > 1.0):
        raise ValueError(f"cvar_tail_coefficient requires alpha in (0, 1], got {alpha!r}")
    interior = np.where(a < 1.0, a, 0.5)
    out = np.where(a < 1.0, norm_pdf(norm_quantile(interior)) / a, 0.0)
    return float(out) if out.ndim == 0 else out


def cvar_normal(mean: float, sd: float, alpha: float) -> float:
    """Closed-form lower-tail CVaR of a normal law: mean - kappa_alpha * sd."""
    if sd < 0:
        raise ValueError(f"cvar_normal requires sd >= 0, got {sd!r}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"cvar_normal requires alpha in (0, 1], got {alpha!r}")
    if alpha == 1.0 or sd == 0.0:
        return float(mean)
    return float(mean - cvar_tail_coefficient(alpha) * sd)
