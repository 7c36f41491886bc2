"""Robust hedging laboratory for a cliquet option under stochastic volatility.

A square-root variance model drives daily spot paths; a small policy network
maps (spot, last reset spot, remaining time) to a hedge position, and the
objective to minimize is the standard deviation of terminal P&L.  Trainers
differ only in the model distribution fed to the tail optimizer: the plug-in
estimate alone, the plug-in law with a CVaR outer measure over path bundles,
or an oracle mixture drawn from the test distribution itself.

All objectives are utilities (bigger is better), so the trainers maximize
minus the smoothed P&L standard deviation via cvarsgd.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .cvarsgd import CvarSgdConfig, OptimizeResult, optimize
from .mathkit import Rng
from .nnpolicy import Mlp, backward, forward_batch, forward_trace, init_params

__all__ = [
    "EvaluationResult",
    "HedgeProblem",
    "HestonParams",
    "TestDistribution",
    "bundle_objective",
    "bundle_objective_and_gradient",
    "cliquet_payoff",
    "cliquet_payoff_batch",
    "evaluate_on_test_distribution",
    "pnl",
    "policy_features",
    "simulate_heston",
    "train_oracle_mixture",
    "train_plugin",
    "train_ua",
]

_STD_EPS = 1e-12  # smooths std at var=0 so the gradient stays finite


@dataclass(frozen=True)
class HestonParams:
    """Square-root stochastic volatility parameters (desk-calibrated defaults)."""

    kappa: float = 1.0
    theta: float = 0.03
    xi: float = 0.2
    rho_c: float = -0.8
    drift: float = 0.0
    v0: float = 0.03
    s0: float = 100.0

    def __post_init__(self) -> None:
        for name in ("kappa", "theta", "xi", "v0"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
        if not -1.0 <= self.rho_c <= 1.0:
            raise ValueError(f"rho_c must lie in [-1, 1], got {self.rho_c!r}")
        if not np.isfinite(self.drift):
            raise ValueError(f"drift must be finite, got {self.drift!r}")
        if not (np.isfinite(self.s0) and self.s0 > 0.0):
            raise ValueError(f"s0 must be positive, got {self.s0!r}")

    @property
    def feller_ok(self) -> bool:
        """Whether 2*kappa*theta >= xi^2 (variance stays positive in the SDE)."""
        return 2.0 * self.kappa * self.theta >= self.xi**2


def _simulate_core(kappa, theta, xi, rho, drift, v0, s0, z, dt):
    # Parameters may be scalars or per-row arrays; z has shape (2, count, steps).
    z_v, z_perp = z[0], z[1]
    count, steps = z_v.shape
    kappa, theta, xi, rho, drift, v0, s0 = (
        np.broadcast_to(np.asarray(p, dtype=float), (count,))
        for p in (kappa, theta, xi, rho, drift, v0, s0)
    )
    z_s = rho[:, None] * z_v + np.sqrt(1.0 - rho * rho)[:, None] * z_perp
    spot = np.empty((count, steps + 1))
    var = np.empty((count, steps + 1))
    spot[:, 0] = s0
    var[:, 0] = v0
    for t in range(steps):
        v_plus = np.maximum(var[:, t], 0.0)  # full truncation
        vol_dt = np.sqrt(v_plus * dt)
        spot[:, t + 1] = spot[:, t] * np.exp(
            (drift - 0.5 * v_plus) * dt + vol_dt * z_s[:, t]
        )
        var[:, t + 1] = var[:, t] + kappa * (theta - v_plus) * dt + xi * vol_dt * z_v[:, t]
    return spot, var


def simulate_heston(params: HestonParams, steps: int, count: int, rng: Rng,
                    dt: float = 1.0 / 255.0) -> tuple[np.ndarray, np.ndarray]:
    """Simulate spot and variance paths on a daily grid.

    Full-truncation Euler for the variance; the spot advances by the exact
    lognormal step for the frozen-variance increment, which keeps prices
    positive and makes the drift-free spot a martingale.  Returns arrays of
    shape (count, steps+1).
    """
    if not isinstance(params, HestonParams):
        raise TypeError(f"expected HestonParams, got {type(params).__name__}")
    if int(steps) < 1:
        raise ValueError(f"steps must be >= 1, got {steps!r}")
    if int(count) < 1:
        raise ValueError(f"count must be >= 1, got {count!r}")
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    z = rng.generator().standard_normal((2, int(count), int(steps)))
    return _simulate_core(params.kappa, params.theta, params.xi, params.rho_c,
                          params.drift, params.v0, params.s0, z, float(dt))


def cliquet_payoff_batch(paths: np.ndarray, reset_period: int) -> np.ndarray:
    """Sum of positive reset-to-reset spot increments, per path row."""
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    r = int(reset_period)
    if r < 1:
        raise ValueError(f"reset_period must be >= 1, got {reset_period!r}")
    steps = paths.shape[1] - 1
    if steps < 1 or steps % r != 0:
        raise ValueError(
            f"path covers {steps} steps, not a multiple of the reset period {r}"
        )
    if steps // r < 3:
        raise ValueError(f"need at least three reset periods, got {steps // r}")
    resets = paths[:, ::r]
    return np.maximum(np.diff(resets, axis=1), 0.0).sum(axis=1)


def cliquet_payoff(path: np.ndarray, reset_period: int) -> float:
    path = np.asarray(path, dtype=float)
    if path.ndim != 1:
        raise ValueError(f"expected a single path, got shape {path.shape}")
    return float(cliquet_payoff_batch(path[None, :], reset_period)[0])


@dataclass(frozen=True)
class HedgeProblem:
    """Fixed trading setup: plug-in model, horizon, resets, policy network.

    The hedge trades the spot only; positions over (t-1, t] come from the
    policy applied to h_{t-1} = (S/s0, last reset S/s0, remaining fraction).
    `premium` is a constant added to every P&L (the std objective ignores it).
    """

    params: HestonParams = HestonParams()
    horizon: int = 120
    reset_period: int = 40
    mlp: Mlp = Mlp((3, 32, 32, 1))
    dt: float = 1.0 / 255.0
    premium: float = 0.0

    def __post_init__(self) -> None:
        if int(self.reset_period) < 1:
            raise ValueError(f"reset_period must be >= 1, got {self.reset_period!r}")
        if self.horizon % self.reset_period != 0 or self.horizon // self.reset_period < 3:
            raise ValueError(
                f"horizon {self.horizon} must be a multiple of the reset period "
                f"{self.reset_period} covering at least three periods"
            )
        if self.mlp.input_dim != 3:
            raise ValueError(f"policy expects 3 inputs, got {self.mlp.input_dim}")
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not np.isfinite(self.premium):
            raise ValueError(f"premium must be finite, got {self.premium!r}")


def policy_features(problem: HedgeProblem, spots: np.ndarray) -> np.ndarray:
    """Policy inputs h_t for t=0..T-1, shape (count, T, 3).

    h_t depends on the path only through S_t and the latest reset spot at or
    before t, so positions are predictable.
    """
    spots = np.asarray(spots, dtype=float)
    horizon = problem.horizon
    if spots.ndim != 2 or spots.shape[1] != horizon + 1:
        raise ValueError(
            f"paths have shape {spots.shape}, expected (count, {horizon + 1})"
        )
    t_idx = np.arange(horizon)
    reset_idx = (t_idx // problem.reset_period) * problem.reset_period
    s0 = problem.params.s0
    feats = np.empty((spots.shape[0], horizon, 3))
    feats[:, :, 0] = spots[:, :horizon] / s0
    feats[:, :, 1] = spots[:, reset_idx] / s0
    feats[:, :, 2] = (horizon - t_idx) / horizon
    return feats


def pnl(problem: HedgeProblem, spots: np.ndarray,
        policy_params: np.ndarray) -> np.ndarray:
    """Terminal P&L per path: premium - payoff + sum_t pi(h_{t-1}) dS_t."""
    spots = np.asarray(spots, dtype=float)
    feats = policy_features(problem, spots)
    count = spots.shape[0]
    positions = forward_batch(
        problem.mlp, policy_params, feats.reshape(count * problem.horizon, 3)
    ).reshape(count, problem.horizon)
    gains = np.einsum("ij,ij->i", positions, np.diff(spots, axis=1))
    payoff = cliquet_payoff_batch(spots, problem.reset_period)
    return problem.premium - payoff + gains


def _smooth_std(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("std needs at least two paths")
    return math.sqrt(values.var(ddof=1) + _STD_EPS)


def bundle_objective(problem: HedgeProblem, spots: np.ndarray,
                     policy_params: np.ndarray) -> float:
    """Inner utility of one path bundle: minus the smoothed std of P&L."""
    return -_smooth_std(pnl(problem, spots, policy_params))


def bundle_objective_and_gradient(
    problem: HedgeProblem, spots: np.ndarray, policy_params: np.ndarray
) -> tuple[float, np.ndarray]:
    """Bundle utility and its exact reverse-mode gradient in the policy."""
    spots = np.asarray(spots, dtype=float)
    count = spots.shape[0]
    if count < 2:
        raise ValueError("std needs at least two paths")
    feats = policy_features(problem, spots).reshape(count * problem.horizon, 3)
    outputs, trace = forward_trace(problem.mlp, policy_params, feats)
    positions = outputs.reshape(count, problem.horizon)
    increments = np.diff(spots, axis=1)
    profits = (
        problem.premium
        - cliquet_payoff_batch(spots, problem.reset_period)
        + np.einsum("ij,ij->i", positions, increments)
    )
    centered = profits - profits.mean()
    std = math.sqrt(centered @ centered / (count - 1) + _STD_EPS)
    # dJ/dP_i for J = -std; position (i,t) feels it through dS_{i,t}.
    dj_dp = -centered / ((count - 1) * std)
    adjoints = (dj_dp[:, None] * increments).reshape(count * problem.horizon)
    return -std, backward(problem.mlp, policy_params, trace, adjoints)


def _stacked_objectives(problem: HedgeProblem, spots: np.ndarray,
                        policy_params: np.ndarray) -> np.ndarray:
    # spots: (models, paths, horizon+1) -> per-model utility vector.
    m, n, width = spots.shape
    flat = spots.reshape(m * n, width)
    feats = policy_features(problem, flat)
    positions = forward_batch(
        problem.mlp, policy_params, feats.reshape(m * n * problem.horizon, 3)
    ).reshape(m, n, problem.horizon)
    increments = np.diff(spots, axis=2)
    profits = (
        problem.premium
        - cliquet_payoff_batch(flat, problem.reset_period).reshape(m, n)
        + np.einsum("mnt,mnt->mn", positions, increments)
    )
    centered = profits - profits.mean(axis=1, keepdims=True)
    var = (centered * centered).sum(axis=1) / (n - 1)
    return -np.sqrt(var + _STD_EPS)


class _BundleProblem:
    """cvarsgd adapter: one model = one fresh path bundle from the plug-in law.

    sample_model returns the bundle's Rng; simulation happens lazily so the
    batched hooks can run all bundles through a single stacked recursion.
    Stacking is bitwise-equivalent to per-bundle simulation because draws stay
    per-model and the recursion is elementwise across rows.
    """

    def __init__(self, problem: HedgeProblem, bundle_size: int):
        if int(bundle_size) < 2:
            raise ValueError(f"bundle_size must be >= 2, got {bundle_size!r}")
        self.problem = problem
        self.bundle_size = int(bundle_size)
        self._cache: dict = {}

    @property
    def dimension(self) -> int:
        return self.problem.mlp.param_count

    def sample_model(self, rng: Rng):
        return rng

    def _normals(self, model) -> np.ndarray:
        return model.generator().standard_normal(
            (2, self.bundle_size, self.problem.horizon)
        )

    def _row_params(self, model) -> tuple:
        p = self.problem.params
        return (p.kappa, p.theta, p.xi, p.rho_c, p.drift, p.v0, p.s0)

    def _spots(self, model) -> np.ndarray:
        cached = self._cache.get(model)
        if cached is not None:
            return cached
        spots, _ = _simulate_core(*self._row_params(model), self._normals(model),
                                  self.problem.dt)
        return spots

    def _simulate_stacked(self, models) -> np.ndarray:
        n = self.bundle_size
        z = np.concatenate([self._normals(mod) for mod in models], axis=1)
        rows = tuple(
            np.repeat([per_model], n)
            for per_model in zip(*(self._row_params(mod) for mod in models))
        )
        spots, _ = _simulate_core(*rows, z, self.problem.dt)
        return spots.reshape(len(models), n, self.problem.horizon + 1)

    def evaluate(self, params: np.ndarray, model) -> float:
        return bundle_objective(self.problem, self._spots(model), params)

    def gradient(self, params: np.ndarray, model) -> np.ndarray:
        return bundle_objective_and_gradient(self.problem, self._spots(model),
                                             params)[1]

    def evaluate_batch(self, params: np.ndarray, models) -> np.ndarray:
        stacked = self._simulate_stacked(models)
        self._cache = dict(zip(models, stacked))
        return _stacked_objectives(self.problem, stacked, params)

    def gradient_batch(self, params: np.ndarray, models) -> np.ndarray:
        return np.stack([self.gradient(params, mod) for mod in models])


@dataclass(frozen=True)
class TestDistribution:
    """Surrogate law of the true parameters around the plug-in estimate.

    "lognormal" multiplies (kappa, theta, xi, v0) by independent lognormal
    factors with log-sd `spread`; "normal" applies additive relative Gaussian
    shocks instead, so invalid (negative) draws occur and are redrawn.  Both
    replace the correlation by -1 + 0.5*Beta(2, 3), mean -0.8, clipped to
    [-1, -0.5].  "dirac" returns the base parameters unchanged.
    """

    __test__ = False  # not a pytest case despite the name

    base: HestonParams = HestonParams()
    spread: float = 0.2
    mode: str = "lognormal"
    max_redraws: int = 1000

    def __post_init__(self) -> None:
        if self.mode not in ("dirac", "lognormal", "normal"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (np.isfinite(self.spread) and self.spread >= 0.0):
            raise ValueError(f"spread must be >= 0, got {self.spread!r}")
        if int(self.max_redraws) < 0:
            raise ValueError(f"max_redraws must be >= 0, got {self.max_redraws!r}")

    def sample(self, rng: Rng) -> tuple[HestonParams, int]:
        """Draw one parameter set; returns (params, rejected draw count)."""
        if self.mode == "dirac":
            return self.base, 0
        gen = rng.generator()
        base = self.base
        core = np.array([base.kappa, base.theta, base.xi, base.v0])
        rejections = 0
        while True:
            if self.mode == "lognormal":
                drawn = core * np.exp(self.spread * gen.standard_normal(4))
            else:
                drawn = core * (1.0 + self.spread * gen.standard_normal(4))
            rho = min(-0.5, max(-1.0, -1.0 + 0.5 * gen.beta(2.0, 3.0)))
            if drawn.min() >= 0.0:
                return (
                    HestonParams(float(drawn[0]), float(drawn[1]), float(drawn[2]),
                                 float(rho), base.drift, float(drawn[3]), base.s0),
                    rejections,
                )
            rejections += 1
            if rejections > self.max_redraws:
                raise ArithmeticError(
                    f"exceeded {self.max_redraws} redraws sampling {self.mode!r} "
                    f"test parameters"
                )


@dataclass(frozen=True)
class _MixtureModel:
    params: HestonParams
    path_rng: Rng


class _MixtureBundleProblem(_BundleProblem):
    """Bundles whose parameters are drawn fresh from the test distribution."""

    def __init__(self, problem: HedgeProblem, dist: TestDistribution,
                 bundle_size: int):
        super().__init__(problem, bundle_size)
        self.dist = dist

    def sample_model(self, rng: Rng):
        params, _ = self.dist.sample(rng.substream(0))
        return _MixtureModel(params, rng.substream(1))

    def _normals(self, model) -> np.ndarray:
        return model.path_rng.generator().standard_normal(
            (2, self.bundle_size, self.problem.horizon)
        )

    def _row_params(self, model) -> tuple:
        p = model.params
        return (p.kappa, p.theta, p.xi, p.rho_c, p.drift, p.v0, p.s0)


def _initial_policy(problem: HedgeProblem, config: CvarSgdConfig) -> np.ndarray:
    # substream(0) never collides with the per-step streams (t >= 1).
    return init_params(problem.mlp, Rng(seed=config.seed, stream=config.stream).substream(0))


def train_plugin(problem: HedgeProblem, bundle_size: int,
                 config: CvarSgdConfig,
                 initial: np.ndarray | None = None) -> OptimizeResult:
    """Minimize the empirical P&L std over fresh plug-in bundles (alpha=1).

    The trained policy is `result.final_params`.  `initial` defaults to a
    fresh seeded init; pass a previous run's `final_params` to continue
    training (use a different config stream so step draws don't repeat).
    """
    cfg = replace(config, alpha=1.0, tail="worst-fraction")
    adapter = _BundleProblem(problem, bundle_size)
    if initial is None:
        initial = _initial_policy(problem, cfg)
    return optimize(adapter, cfg, initial=initial)


def train_ua(problem: HedgeProblem, bundle_size: int, model_count: int,
             alpha: float, config: CvarSgdConfig,
             initial: np.ndarray | None = None) -> OptimizeResult:
    """CVaR_alpha over per-bundle stds: retain the worst bundles each step."""
    cfg = replace(config, m=int(model_count), alpha=float(alpha),
                  tail="worst-fraction")
    adapter = _BundleProblem(problem, bundle_size)
    if initial is None:
        initial = _initial_policy(problem, cfg)
    return optimize(adapter, cfg, initial=initial)


def train_oracle_mixture(problem: HedgeProblem, dist: TestDistribution,
                         bundle_size: int, config: CvarSgdConfig,
                         initial: np.ndarray | None = None) -> OptimizeResult:
    """Expectation over the test distribution itself (one model per bundle)."""
    cfg = replace(config, alpha=1.0, tail="worst-fraction")
    adapter = _MixtureBundleProblem(problem, dist, bundle_size)
    if initial is None:
        initial = _initial_policy(problem, cfg)
    return optimize(adapter, cfg, initial=initial)


@dataclass(frozen=True)
class EvaluationResult:
    """Per-model P&L stds of one policy under the test distribution."""

    models: tuple[HestonParams, ...]
    objectives: np.ndarray
    mean: float
    std: float
    rejections: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["draw", "kappa", "theta", "xi", "rho_c", "drift",
                             "v0", "s0", "objective"])
            for i, (p, value) in enumerate(zip(self.models, self.objectives)):
                writer.writerow([i] + [repr(float(v)) for v in
                                       (p.kappa, p.theta, p.xi, p.rho_c,
                                        p.drift, p.v0, p.s0, value)])


def evaluate_on_test_distribution(
    problem: HedgeProblem, policy_params: np.ndarray, dist: TestDistribution,
    model_count: int, paths_per_model: int, rng: Rng,
) -> EvaluationResult:
    """Std of P&L under freshly drawn parameter sets; lower is better.

    Each drawn model gets its own substream for the parameter draw and the
    path simulation, so evaluations are order-independent and reproducible.
    """
    if int(model_count) < 2:
        raise ValueError(f"model_count must be >= 2, got {model_count!r}")
    if int(paths_per_model) < 2:
        raise ValueError(f"paths_per_model must be >= 2, got {paths_per_model!r}")
    objectives = np.empty(int(model_count))
    models = []
    rejections = 0
    for i in range(int(model_count)):
        sub = rng.substream(i)
        params_i, rejected = dist.sample(sub.substream(0))
        spots, _ = simulate_heston(params_i, problem.horizon, paths_per_model,
                                   sub.substream(1), problem.dt)
        objectives[i] = _smooth_std(pnl(problem, spots, policy_params))
        models.append(params_i)
        rejections += rejected
    return EvaluationResult(
        models=tuple(models),
        objectives=objectives,
        mean=float(objectives.mean()),
        std=float(objectives.std(ddof=1)),
        rejections=rejections,
    )
