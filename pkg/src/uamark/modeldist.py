"""Distributions over models: drift uncertainty, subsampling, bootstrapping.

A model distribution produces models; a model is either a parametric normal
law for the increment or a finite uniform measure over drawn outcomes
(SubsampleMeasure).  ua_objective scores an action by evaluating the inner
risk functional of a * increment under each of m drawn models and applying an
outer uncertainty measure across the m values.

The empirical base measure ("bootstrap") and subsampling from it are the same
construction; both are exposed because callers think of them differently
(resampling observed returns vs. drawing from a fitted law).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mathkit import Rng
from .risk import Sample, cvar_lower_mean, entropic, mean_variance

__all__ = [
    "GaussianModel",
    "InnerObjective",
    "ModelDistribution",
    "OuterMeasure",
    "SubsampleMeasure",
    "bootstrap_paths",
    "read_returns_csv",
    "sample_model",
    "ua_objective",
]


@dataclass(frozen=True)
class GaussianModel:
    """Parametric increment law N(mu, sigma2)."""

    mu: float
    sigma2: float

    def __post_init__(self) -> None:
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2!r}")
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")


@dataclass(frozen=True, eq=False)
class SubsampleMeasure:
    """Uniform mixture of Dirac measures at the drawn outcomes."""

    outcomes: np.ndarray

    def __post_init__(self) -> None:
        out = np.asarray(self.outcomes, dtype=float)
        if out.ndim not in (1, 2) or out.shape[0] == 0:
            raise ValueError("outcomes must be a nonempty vector (or path matrix)")
        if not np.all(np.isfinite(out)):
            raise ValueError("outcomes must be finite")
        object.__setattr__(self, "outcomes", out)

    @property
    def size(self) -> int:
        return self.outcomes.shape[0]

    def weights(self) -> np.ndarray:
        return np.full(self.size, 1.0 / self.size)


@dataclass(frozen=True, eq=False)
class ModelDistribution:
    """One of: gaussian-drift, subsample (from a base sampler), bootstrap.

    Construct via the classmethods; the raw constructor is not validated for
    cross-kind consistency.
    """

    kind: str
    base: Callable[[np.random.Generator, int], np.ndarray] | None = None
    subsample_size: int = 0
    mu_hat: float = 0.0
    tau2: float = 0.0
    sigma2_hat: float = 0.0
    observed: np.ndarray | None = field(default=None)

    @classmethod
    def gaussian_drift(cls, mu_hat: float, tau2: float, sigma2_hat: float):
        """Drift uncertainty: mu ~ N(mu_hat, tau2), model = N(mu, sigma2_hat)."""
        if not (tau2 >= 0 and math.isfinite(tau2)):
            raise ValueError(f"tau2 must be >= 0, got {tau2!r}")
        if not (sigma2_hat > 0 and math.isfinite(sigma2_hat)):
            raise ValueError(f"sigma2_hat must be positive, got {sigma2_hat!r}")
        return cls(kind="gaussian-drift", mu_hat=float(mu_hat), tau2=float(tau2),
                   sigma2_hat=float(sigma2_hat))

    @classmethod
    def subsample(cls, base: Callable[[np.random.Generator, int], np.ndarray],
                  n: int):
        """Each model is the uniform measure over n i.i.d. draws from base."""
        if n < 1:
            raise ValueError(f"subsample size must be >= 1, got {n!r}")
        return cls(kind="subsample", base=base, subsample_size=int(n))

    @classmethod
    def bootstrap(cls, observed, n: int | None = None):
        """Subsampling with the empirical measure of observed increments."""
        obs = np.asarray(observed, dtype=float)
        if obs.ndim != 1 or obs.size == 0:
            raise ValueError("observed must be a nonempty 1-d vector")
        if not np.all(np.isfinite(obs)):
            raise ValueError("observed must be finite")
        n_eff = obs.size if n is None else int(n)
        if n_eff < 1:
            raise ValueError(f"subsample size must be >= 1, got {n!r}")
        return cls(kind="bootstrap", subsample_size=n_eff, observed=obs)


def sample_model(dist: ModelDistribution, rng: Rng):
    """Draw one model from the distribution; deterministic in the Rng value."""
    gen = rng.generator()
    if dist.kind == "gaussian-drift":
        mu = dist.mu_hat + math.sqrt(dist.tau2) * gen.standard_normal()
        return GaussianModel(mu=mu, sigma2=dist.sigma2_hat)
    if dist.kind == "subsample":
        out = np.asarray(dist.base(gen, dist.subsample_size), dtype=float)
        if out.shape[0] != dist.subsample_size:
            raise ValueError(
                f"base sampler returned {out.shape[0]} outcomes, "
                f"expected {dist.subsample_size}"
            )
        return SubsampleMeasure(out)
    if dist.kind == "bootstrap":
        idx = gen.integers(0, dist.observed.size, size=dist.subsample_size)
        return SubsampleMeasure(dist.observed[idx])
    raise ValueError(f"unknown model distribution kind {dist.kind!r}")


def bootstrap_paths(observed, horizon: int, count: int, rng: Rng) -> np.ndarray:
    """count x horizon cumulative sums of resampled increments."""
    obs = np.asarray(observed, dtype=float)
    if obs.ndim != 1 or obs.size == 0:
        raise ValueError("observed must be a nonempty 1-d vector")
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon!r}")
    if count <= 0:
        raise ValueError(f"count must be positive, got {count!r}")
    gen = rng.generator()
    idx = gen.integers(0, obs.size, size=(count, horizon))
    return np.cumsum(obs[idx], axis=1)


@dataclass(frozen=True)
class InnerObjective:
    """Per-model functional: entropic certainty equivalent of a * increment.

    For parametric normal models the closed form mu*a - (lam/2) a^2 sigma2 is
    used (exact for both the entropic and mean-variance readings).  For
    subsample measures the default is the empirical entropic value; setting
    use_mean_variance swaps in the empirical mean-variance functional (the
    large-n normal approximation argument).
    """

    lam: float
    use_mean_variance: bool = False

    def __post_init__(self) -> None:
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be >= 0, got {self.lam!r}")

    def of(self, model, action: float) -> float:
        if isinstance(model, GaussianModel):
            return action * model.mu - 0.5 * self.lam * action * action * model.sigma2
        if isinstance(model, SubsampleMeasure):
            if model.outcomes.ndim != 1:
                raise ValueError("inner objective needs scalar outcomes, not paths")
            s = Sample(action * model.outcomes)
            if self.use_mean_variance:
                return mean_variance(s, self.lam)
            return entropic(s, self.lam)
        raise TypeError(f"unsupported model type {type(model).__name__}")


@dataclass(frozen=True)
class OuterMeasure:
    """Uncertainty measure applied across the per-model objective values."""

    kind: str  # "mean" | "entropic" | "cvar"
    lam_prime: float = 0.0
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("mean", "entropic", "cvar"):
            raise ValueError(f"unknown outer measure kind {self.kind!r}")
        if not (self.lam_prime >= 0 and math.isfinite(self.lam_prime)):
            raise ValueError(f"lam_prime must be >= 0, got {self.lam_prime!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha!r}")

    def across(self, values: np.ndarray) -> float:
        vals = np.sort(np.asarray(values, dtype=float))  # order-independent
        if self.kind == "mean":
            return float(vals.mean())
        if self.kind == "entropic":
            return entropic(Sample(vals), self.lam_prime)
        return cvar_lower_mean(Sample(vals), self.alpha)


def ua_objective(dist: ModelDistribution, inner: InnerObjective,
                 outer: OuterMeasure, action: float, model_count: int,
                 rng: Rng) -> float:
    """Outer measure across inner objective values under m drawn models."""
    if model_count < 1:
        raise ValueError(f"model_count must be >= 1, got {model_count!r}")
    values = np.empty(model_count)
    for i in range(model_count):
        model = sample_model(dist, rng.substream(i))
        values[i] = inner.of(model, action)
    if model_count == 1:
        return float(values[0])
    return outer.across(values)


def read_returns_csv(path) -> np.ndarray:
    """Single-column CSV of returns; optional header; '#' comment lines skipped.

    Malformed rows are rejected with their 1-based line number.
    """
    values: list[float] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            if len(row) != 1:
                raise ValueError(f"line {lineno}: expected a single column, "
                                 f"got {len(row)} fields")
            cell = row[0].strip()
            try:
                values.append(float(cell))
            except ValueError:
                if lineno == 1 and not values:
                    continue  # optional header
                raise ValueError(f"line {lineno}: not a number: {cell!r}") from None
    if not values:
        raise ValueError(f"{path}: no numeric rows found")
    arr = np.array(values)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: non-finite return values")
    return arr
