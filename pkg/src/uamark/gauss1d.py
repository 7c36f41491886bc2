"""One-dimensional Gaussian investment laboratory.

The setting: per-step returns are i.i.d. normal with unknown drift mu and
variance sigma2; an agent observing N past steps picks a position and is
judged by the entropic certainty equivalent (risk aversion lam) of the next
step's P&L.  Every strategy of interest here is a deterministic function of
the estimated pair (mu_hat, sigma2_hat), and — because estimation noise
makes the position random — its *out-of-sample performance* (OOSP) is the
mean-variance certainty equivalent of the joint law of position times fresh
increment:

    oosp = mu E[a] - (lam/2) ( E[a^2] (mu^2 + sigma2) - mu^2 E[a]^2 ).

For any strategy of the linear form a = x * mu_hat this reduces to the
closed form implemented by `oosp_scaled`; the plug-in, shrinkage, mixture
and variance-adjusted strategies are all of that form, so their OOSP
functions are thin wrappers sharing one identity.  The tail strategy
(`ua_cvar_action`) soft-thresholds mu_hat instead; its OOSP needs the first
two moments of the thresholded estimate, which are standard truncated-normal
integrals (`_hinge_moments`).

All OOSP formulas adopt the simplification sigma2_hat == sigma2 (its
estimation error is second-order); the Monte-Carlo oracle `oosp_mc` can
resample sigma2_hat as well, to quantify exactly what that simplification
costs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from scipy.special import logsumexp

from .mathkit import Rng, norm_cdf, norm_pdf
from .risk import cvar_tail_coefficient

__all__ = [
    "EstimatedGaussian",
    "GaussianLabParams",
    "SubsampleOospScan",
    "entropic_improvement_boundary",
    "estimate",
    "improvement_condition",
    "mixture_action",
    "oosp_mc",
    "oosp_mixture",
    "oosp_oracle",
    "oosp_plugin",
    "oosp_scaled",
    "oosp_subsample_mc",
    "oosp_ua_cvar",
    "oosp_ua_entropic",
    "oosp_var_adjusted",
    "optimal_aversion",
    "oracle_action",
    "plugin_action",
    "ua_cvar_action",
    "ua_entropic_action",
    "var_adjusted_action",
]

LAMBDA_PRIME_GRID = np.logspace(-3.0, 6.0, 400)
ALPHA_GRID = np.logspace(-4.0, 0.0, 400)


@dataclass(frozen=True)
class GaussianLabParams:
    """True model: drift mu, variance sigma2 (per step), N observations, aversion lam."""

    mu: float
    sigma2: float
    n_obs: int
    lam: float

    def __post_init__(self) -> None:
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2!r}")
        if int(self.n_obs) < 2:
            raise ValueError(f"n_obs must be >= 2, got {self.n_obs!r}")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be positive, got {self.lam!r}")
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")


@dataclass(frozen=True)
class EstimatedGaussian:
    """Estimated model (mu_hat, sigma2_hat) from n_obs observed steps."""

    mu_hat: float
    sigma2_hat: float
    n_obs: int

    def __post_init__(self) -> None:
        if not (self.sigma2_hat > 0 and math.isfinite(self.sigma2_hat)):
            raise ValueError(f"sigma2_hat must be positive, got {self.sigma2_hat!r}")
        if int(self.n_obs) < 1:
            raise ValueError(f"n_obs must be >= 1, got {self.n_obs!r}")
        if not math.isfinite(self.mu_hat):
            raise ValueError("mu_hat must be finite")


def estimate(returns, centered: bool = False) -> EstimatedGaussian:
    """Estimate (mu_hat, sigma2_hat) from observed per-step returns.

    The default scale estimator is sum(x_t^2)/(N-1), i.e. *uncentered*
    second moments with the N-1 divisor; `centered=True` switches to the
    usual sample variance.  The uncentered default is what the rest of the
    closed forms are calibrated against; for small |mu| relative to sigma
    the two differ only at order mu^2.
    """
    x = np.asarray(returns, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("estimate requires a 1-d array of length >= 2")
    if not np.all(np.isfinite(x)):
        raise ValueError("estimate requires finite returns")
    n = x.size
    mu_hat = float(x.mean())
    if centered:
        sigma2_hat = float(((x - mu_hat) ** 2).sum() / (n - 1))
    else:
        sigma2_hat = float((x**2).sum() / (n - 1))
    if sigma2_hat <= 0.0:
        raise ValueError("degenerate sample: estimated variance is zero")
    return EstimatedGaussian(mu_hat, sigma2_hat, n)


# ---------------------------------------------------------------------------
# strategies


def oracle_action(p: GaussianLabParams) -> float:
    """Position of the oracle that knows (mu, sigma2): mu / (lam sigma2)."""
    return p.mu / (p.lam * p.sigma2)


def plugin_action(e: EstimatedGaussian, lam: float) -> float:
    """Certainty-equivalent maximizer under the estimated model."""
    return e.mu_hat / (lam * e.sigma2_hat)


def ua_entropic_action(e: EstimatedGaussian, lam: float, lam_prime: float) -> float:
    """Plug-in position shrunk by x_N = lam N / (lam N + lam'), the
    closed-form effect of an entropic outer measure over drift uncertainty."""
    if lam_prime < 0:
        raise ValueError(f"lam_prime must be nonnegative, got {lam_prime!r}")
    x_n = lam * e.n_obs / (lam * e.n_obs + lam_prime)
    return x_n * plugin_action(e, lam)


def ua_cvar_action(e: EstimatedGaussian, lam: float, alpha: float) -> float:
    """Soft-thresholded plug-in position from a CVaR outer measure.

    Invests nothing unless |mu_hat| clears the significance threshold
    A sqrt(sigma2_hat / N) with A = kappa_alpha; beyond it, the position is
    the plug-in applied to the thresholded drift estimate.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha!r}")
    threshold = cvar_tail_coefficient(alpha) * math.sqrt(e.sigma2_hat / e.n_obs)
    clipped = max(abs(e.mu_hat) - threshold, 0.0)
    return math.copysign(clipped, e.mu_hat) / (lam * e.sigma2_hat)


def mixture_action(e: EstimatedGaussian, lam: float) -> float:
    """Position optimal under the posterior-mixture model: plug-in times N/(N+1)."""
    return e.n_obs / (e.n_obs + 1) * plugin_action(e, lam)


def var_adjusted_action(e: EstimatedGaussian, lam: float, tau2: float) -> float:
    """Plug-in with the variance manually inflated by tau2 >= 0."""
    if tau2 < 0:
        raise ValueError(f"tau2 must be nonnegative, got {tau2!r}")
    return e.mu_hat / (lam * (e.sigma2_hat + tau2))


# ---------------------------------------------------------------------------
# out-of-sample performance (closed forms; sigma2_hat == sigma2 simplification)


def oosp_scaled(p: GaussianLabParams, x) -> float | np.ndarray:
    """OOSP of the linear strategy a = x * mu_hat.

    Every linear-in-mu_hat strategy below equals this at its own x; the
    formula is the joint mean-variance certainty equivalent spelled out in
    the module docstring, evaluated with E[mu_hat] = mu, Var[mu_hat] =
    sigma2/N.
    """
    x = np.asarray(x, dtype=float)
    mu2 = p.mu * p.mu
    out = x * mu2 * (1.0 - 0.5 * p.lam * x * p.sigma2) - (
        p.lam / (2.0 * p.n_obs)
    ) * x * x * p.sigma2 * (mu2 + p.sigma2)
    return float(out) if out.ndim == 0 else out


def oosp_oracle(p: GaussianLabParams) -> float:
    """OOSP of the (deterministic) oracle position: mu^2 / (2 lam sigma2)."""
    return p.mu * p.mu / (2.0 * p.lam * p.sigma2)


def oosp_plugin(p: GaussianLabParams) -> float:
    return float(oosp_scaled(p, 1.0 / (p.lam * p.sigma2)))


def oosp_ua_entropic(p: GaussianLabParams, lam_prime) -> float | np.ndarray:
    lam_prime = np.asarray(lam_prime, dtype=float)
    if np.any(lam_prime < 0):
        raise ValueError("lam_prime must be nonnegative")
    x_n = p.lam * p.n_obs / (p.lam * p.n_obs + lam_prime)
    return oosp_scaled(p, x_n / (p.lam * p.sigma2))


def oosp_mixture(p: GaussianLabParams, variant: str = "consistent") -> float:
    """OOSP of the mixture strategy.

    variant="consistent" (default) evaluates `oosp_scaled` at
    x = N/((N+1) lam sigma2), the value implied by the general linear-
    strategy formula.  variant="main-text" reproduces the display that
    drops the first-order shrinkage of the mean term; it is positive in
    regimes where the consistent value is negative, and is kept only for
    comparison.
    """
    n = p.n_obs
    if variant == "consistent":
        return float(oosp_scaled(p, n / ((n + 1) * p.lam * p.sigma2)))
    if variant == "main-text":
        mu2 = p.mu * p.mu
        return mu2 * n / (p.lam * p.sigma2 * (n + 1)) - n * (mu2 + p.sigma2) / (
            2.0 * p.lam * p.sigma2 * (n + 1) ** 2
        )
    raise ValueError(f"unknown oosp_mixture variant {variant!r}")


def oosp_var_adjusted(p: GaussianLabParams, tau2) -> float | np.ndarray:
    tau2 = np.asarray(tau2, dtype=float)
    if np.any(tau2 < 0):
        raise ValueError("tau2 must be nonnegative")
    return oosp_scaled(p, 1.0 / (p.lam * (p.sigma2 + tau2)))


def _hinge_moments(p: GaussianLabParams, alpha) -> tuple[np.ndarray, np.ndarray]:
    """First two moments of g(mu_hat) = sign(mu_hat) (|mu_hat| - c)_+.

    mu_hat ~ N(mu, s^2) with s = sigma/sqrt(N) and c = kappa_alpha * s.
    Both are sums of truncated-normal pieces over the two tails:

        E[g]   = (mu-c) Phi(d1) + s phi(d1) + (mu+c) Phi(d2) - s phi(d2)
        E[g^2] = (s^2+(mu-c)^2) Phi(d1) + s (mu-c) phi(d1)
               + (s^2+(mu+c)^2) Phi(d2) - s (mu+c) phi(d2)

    with d1 = (mu-c)/s and d2 = -(mu+c)/s.
    """
    a = np.asarray(alpha, dtype=float)
    s = math.sqrt(p.sigma2 / p.n_obs)
    c = cvar_tail_coefficient(a) * s
    d1 = (p.mu - c) / s
    d2 = -(p.mu + c) / s
    m1 = (p.mu - c) * norm_cdf(d1) + s * norm_pdf(d1) + (p.mu + c) * norm_cdf(d2) - s * norm_pdf(d2)
    m2 = (
        (s * s + (p.mu - c) ** 2) * norm_cdf(d1)
        + s * (p.mu - c) * norm_pdf(d1)
        + (s * s + (p.mu + c) ** 2) * norm_cdf(d2)
        - s * (p.mu + c) * norm_pdf(d2)
    )
    return np.asarray(m1, dtype=float), np.asarray(m2, dtype=float)


def oosp_ua_cvar(p: GaussianLabParams, alpha) -> float | np.ndarray:
    """OOSP of the soft-threshold (CVaR outer) strategy, in closed form."""
    a = np.asarray(alpha, dtype=float)
    if np.any(a <= 0) or np.any(a > 1):
        raise ValueError("alpha must lie in (0, 1]")
    m1, m2 = _hinge_moments(p, a)
    scale = p.lam * p.sigma2
    e_a = m1 / scale
    e_a2 = m2 / (scale * scale)
    mu2 = p.mu * p.mu
    out = p.mu * e_a - 0.5 * p.lam * ((mu2 + p.sigma2) * e_a2 - mu2 * e_a * e_a)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Monte-Carlo oracle

_STRATEGIES = ("plugin", "ua_entropic", "ua_cvar", "mixture", "var_adjusted")


def oosp_mc(
    p: GaussianLabParams,
    strategy: str,
    rng: Rng,
    *,
    lam_prime: float = 0.0,
    alpha: float = 1.0,
    tau2: float = 0.0,
    draws: int = 10**6,
    vary_sigma2: bool = False,
) -> tuple[float, float]:
    """Monte-Carlo estimate of a strategy's OOSP, with standard error.

    Resamples the estimation randomness (mu_hat always; sigma2_hat too when
    `vary_sigma2`, using its chi-square law), maps each draw through the
    strategy, and evaluates the joint mean-variance certainty equivalent
    from the first two moments of the position.  The standard error is the
    delta-method propagation of the moment covariance.
    """
    if strategy not in _STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {_STRATEGIES}")
    if draws < 2:
        raise ValueError("draws must be >= 2")
    gen = rng.generator()
    n = p.n_obs
    mu_hat = gen.normal(p.mu, math.sqrt(p.sigma2 / n), size=draws)
    if vary_sigma2:
        sigma2_hat = p.sigma2 * gen.chisquare(n - 1, size=draws) / (n - 1)
    else:
        sigma2_hat = np.full(draws, p.sigma2)

    if strategy == "plugin":
        a = mu_hat / (p.lam * sigma2_hat)
    elif strategy == "ua_entropic":
        x_n = p.lam * n / (p.lam * n + lam_prime)
        a = x_n * mu_hat / (p.lam * sigma2_hat)
    elif strategy == "ua_cvar":
        c = cvar_tail_coefficient(alpha) * np.sqrt(sigma2_hat / n)
        a = np.sign(mu_hat) * np.maximum(np.abs(mu_hat) - c, 0.0) / (p.lam * sigma2_hat)
    elif strategy == "mixture":
        a = n / (n + 1) * mu_hat / (p.lam * sigma2_hat)
    else:
        a = mu_hat / (p.lam * (sigma2_hat + tau2))

    return _score_from_actions(p, a)


def _score_from_actions(p: GaussianLabParams, a: np.ndarray) -> tuple[float, float]:
    """Joint mean-variance score of a sampled action law, with delta-method SE."""
    a = np.asarray(a, dtype=float)
    a2 = a * a
    m1 = float(a.mean())
    m2 = float(a2.mean())
    mu2 = p.mu * p.mu
    est = p.mu * m1 - 0.5 * p.lam * ((mu2 + p.sigma2) * m2 - mu2 * m1 * m1)
    # delta method: gradient of est in (m1, m2), covariance of the sample means
    g1 = p.mu + p.lam * mu2 * m1
    g2 = -0.5 * p.lam * (mu2 + p.sigma2)
    cov = np.cov(np.stack([a, a2]), ddof=1) / a.size
    se = math.sqrt(max(g1 * g1 * cov[0, 0] + 2 * g1 * g2 * cov[0, 1] + g2 * g2 * cov[1, 1], 0.0))
    return float(est), se


@dataclass(frozen=True)
class SubsampleOospScan:
    """Monte-Carlo out-of-sample scores of subsample-built strategies.

    The error fields combine the estimation-draw standard error with the
    model-pool standard error (batch means over model blocks), since both
    sources of randomness move the reported score.
    """

    action_grid: np.ndarray
    lam_prime_values: np.ndarray
    entropic_scores: np.ndarray
    entropic_errors: np.ndarray
    alpha_values: np.ndarray
    cvar_scores: np.ndarray
    cvar_errors: np.ndarray


def oosp_subsample_mc(
    p: GaussianLabParams,
    rng: Rng,
    *,
    lam_prime_values,
    alpha_values,
    subsample_size: int | None = None,
    model_count: int = 10_000,
    draws: int = 10_000,
    action_grid: np.ndarray | None = None,
    blocks: int = 8,
) -> SubsampleOospScan:
    """Out-of-sample score of the strategies built from empirical subsamples.

    One pool of `model_count` standardized subsamples of size n defines the
    strategy map for every aversion level (common random numbers across both
    grids); `draws` fresh mean estimates then score that map out of sample.

    The per-model inner utility for a mean estimate mu_hat separates as
    J_ij(a) = a*mu_hat_i + G_j(a), where G_j(a) is the empirical exponential
    certainty equivalent of a*sigma*z_j.  Both outer measures are translation
    equivariant, so the whole aversion sweep reduces to functionals of the
    (action, model) matrix G — computed once, sorted once per action row.

    Reported errors add, in quadrature, the estimation-draw delta-method SE
    and a batch-means SE over `blocks` model blocks (the strategy map itself
    is a Monte-Carlo object, and at strong aversion its pool noise dominates).
    Caveat: for extreme aversion (lam' >> lambda*N, alpha << 1/sqrt(n)) the
    empirical outer tracks the worst pool member, a regime where the score is
    governed by extreme-value behaviour rather than the population functional;
    expect genuine finite-pool bias there no matter how many draws are used.
    """
    lam_prime_values = np.atleast_1d(np.asarray(lam_prime_values, dtype=float))
    alpha_values = np.atleast_1d(np.asarray(alpha_values, dtype=float))
    if np.any(lam_prime_values < 0.0):
        raise ValueError("lam_prime values must be nonnegative")
    if np.any((alpha_values <= 0.0) | (alpha_values > 1.0)):
        raise ValueError("alpha values must lie in (0, 1]")
    n = p.n_obs if subsample_size is None else int(subsample_size)
    if n < 1:
        raise ValueError(f"subsample_size must be >= 1, got {subsample_size!r}")
    if model_count < 2 or draws < 2:
        raise ValueError("model_count and draws must be >= 2")
    blocks = int(blocks)
    if blocks < 2 or model_count < 2 * blocks:
        raise ValueError("blocks must be >= 2 with at least 2 models per block")
    sigma = math.sqrt(p.sigma2)
    if action_grid is None:
        # bracket the plug-in action over +-4.5 standard errors of mu_hat;
        # sign-symmetric log spacing keeps the RELATIVE resolution constant,
        # so strongly shrunk strategies are not quantized away near zero
        half = (abs(p.mu) + 4.5 * math.sqrt(p.sigma2 / p.n_obs)) / (p.lam * p.sigma2)
        side = np.geomspace(half * 1e-6, half, 240)
        action_grid = np.concatenate([-side[::-1], [0.0], side])
    else:
        action_grid = np.asarray(action_grid, dtype=float)
        if action_grid.ndim != 1 or action_grid.size < 2:
            raise ValueError("action_grid must be a 1-d grid of actions")

    z = rng.substream(0).generator().standard_normal((int(model_count), n))
    inner = np.empty((action_grid.size, int(model_count)))
    for g, a in enumerate(action_grid):
        inner[g] = -(logsumexp(-p.lam * a * sigma * z, axis=1) - math.log(n)) / p.lam

    mu_hats = rng.substream(1).generator().normal(
        p.mu, math.sqrt(p.sigma2 / p.n_obs), size=int(draws))
    shift = mu_hats[:, None] * action_grid[None, :]

    def score(outer: np.ndarray) -> tuple[float, float]:
        actions = action_grid[np.argmax(shift + outer[None, :], axis=1)]
        return _score_from_actions(p, actions)

    def combine(outer_full: np.ndarray, outer_blocks: np.ndarray) -> tuple[float, float]:
        est, se_draws = score(outer_full)
        block_ests = np.array([score(ob)[0] for ob in outer_blocks])
        se_pool = float(block_ests.std(ddof=1)) / math.sqrt(blocks)
        return est, math.hypot(se_draws, se_pool)

    slices = [s for s in np.array_split(np.arange(int(model_count)), blocks)]
    counts = np.array([s.size for s in slices], dtype=float)

    ent_scores, ent_errors = np.empty(lam_prime_values.size), np.empty(lam_prime_values.size)
    for i, lp in enumerate(lam_prime_values):
        if lp == 0.0:
            outer_b = np.stack([inner[:, s].mean(axis=1) for s in slices])
            outer = (counts[:, None] * outer_b).sum(axis=0) / model_count
        else:
            lse_b = np.stack([logsumexp(-lp * inner[:, s], axis=1) for s in slices])
            outer_b = -(lse_b - np.log(counts)[:, None]) / lp
            outer = -(logsumexp(lse_b, axis=0) - math.log(model_count)) / lp
        ent_scores[i], ent_errors[i] = combine(outer, outer_b)

    tail_sums = np.cumsum(np.sort(inner, axis=1), axis=1)
    tail_sums_b = [np.cumsum(np.sort(inner[:, s], axis=1), axis=1) for s in slices]
    cvar_scores, cvar_errors = np.empty(alpha_values.size), np.empty(alpha_values.size)
    for i, alpha in enumerate(alpha_values):
        k = math.ceil(alpha * model_count)  # matches the whole-atom tail mean
        outer = tail_sums[:, k - 1] / k
        outer_b = np.stack([
            ts[:, math.ceil(alpha * c) - 1] / math.ceil(alpha * c)
            for ts, c in zip(tail_sums_b, counts)
        ])
        cvar_scores[i], cvar_errors[i] = combine(outer, outer_b)

    return SubsampleOospScan(
        action_grid=action_grid,
        lam_prime_values=lam_prime_values,
        entropic_scores=ent_scores,
        entropic_errors=ent_errors,
        alpha_values=alpha_values,
        cvar_scores=cvar_scores,
        cvar_errors=cvar_errors,
    )


# ---------------------------------------------------------------------------
# improvement condition and optimal aversion


def improvement_condition(p: GaussianLabParams, lam_prime: float) -> bool:
    """Whether entropic robustification at lam_prime beats the plug-in.

    Exact sign test: mu^2 ((N-1) lam' - 2 N lam) / (2 N lam + lam') < sigma2.
    Any lam' below 2 N lam / (N-1) satisfies it regardless of (mu, sigma).
    """
    if lam_prime < 0:
        raise ValueError("lam_prime must be nonnegative")
    n, lam = p.n_obs, p.lam
    lhs = p.mu * p.mu * ((n - 1) * lam_prime - 2.0 * n * lam) / (2.0 * n * lam + lam_prime)
    return bool(lhs < p.sigma2)


def entropic_improvement_boundary(p: GaussianLabParams) -> float | None:
    """The lam' where the improvement condition flips, or None if it never does."""
    n, lam = p.n_obs, p.lam
    denom = p.mu * p.mu * (n - 1) - p.sigma2
    if denom <= 0:
        return None
    return 2.0 * n * lam * (p.mu * p.mu + p.sigma2) / denom


def optimal_aversion(p: GaussianLabParams, measure: str) -> float:
    """Grid argmax of the OOSP over the outer-aversion parameter.

    measure="entropic" searches lam' on a 400-point log grid [1e-3, 1e6];
    measure="cvar" searches alpha on a 400-point log grid [1e-4, 1].  Ties
    resolve toward less robustification (smaller lam', larger alpha).
    """
    if measure == "entropic":
        grid = LAMBDA_PRIME_GRID
        values = np.asarray(oosp_ua_entropic(p, grid))
        best = values.max()
        return float(grid[np.nonzero(values >= best - 1e-15 * max(1.0, abs(best)))[0][0]])
    if measure == "cvar":
        grid = ALPHA_GRID
        values = np.asarray(oosp_ua_cvar(p, grid))
        best = values.max()
        return float(grid[np.nonzero(values >= best - 1e-15 * max(1.0, abs(best)))[0][-1]])
    raise ValueError(f"unknown measure {measure!r}; expected 'entropic' or 'cvar'")
