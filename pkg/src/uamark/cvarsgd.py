"""Tail-averaged stochastic gradient ascent over a sampled model distribution.

Maximizes CVaR_alpha over models of a utility objective J(params, model):
each step draws m models, retains the k lowest objective values (k is random
with E[k] = alpha * m), and ascends the average of the retained gradients.
Objectives are utilities — larger is better — so "worst" means smallest.

Memory is bounded by the retained set: the value scan runs the insert/replace
branches over all m models, but gradients are materialized only for the k
retained models, so the peak number of simultaneously stored gradients is
exactly k (reported per step and asserted by the diagnostics).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from .mathkit import Rng

__all__ = [
    "CvarSgdConfig",
    "DifferentiableProblem",
    "OptimizeResult",
    "StepDiagnostics",
    "WorstSet",
    "draw_k",
    "optimize",
    "step",
    "trace_to_csv",
    "verify_gradients",
]


@runtime_checkable
class DifferentiableProblem(Protocol):
    """What the optimizer needs from a problem.

    evaluate/gradient must be deterministic functions of (params, model).
    Problems may additionally provide `evaluate_batch(params, models)` and
    `gradient_batch(params, models)` returning stacked results; the optimizer
    uses them when present.
    """

    @property
    def dimension(self) -> int: ...

    def sample_model(self, rng: Rng): ...

    def evaluate(self, params: np.ndarray, model) -> float: ...

    def gradient(self, params: np.ndarray, model) -> np.ndarray: ...


@dataclass(frozen=True)
class CvarSgdConfig:
    """Optimizer settings.

    Exactly one of `step_size` (constant rule) or `theorem_rule` must be
    chosen; the theorem rule uses eta_t = radius / (rho * sqrt(t)) and
    projects iterates onto the ball of radius `radius`.

    `tail="worst-fraction"` reads alpha as the retained tail fraction
    (E[k] = alpha * m, the convention of the convergence analysis);
    `tail="kept-fraction"` reads it the other way around (E[k] = (1-alpha)*m).
    """

    m: int
    alpha: float
    steps: int
    step_size: float | None = None
    theorem_rule: bool = False
    radius: float = 0.0
    rho: float = 0.0
    seed: int = 0
    stream: int = 0
    tail: str = "worst-fraction"
    workers: int = 1

    def __post_init__(self) -> None:
        if int(self.m) < 1:
            raise ValueError(f"m must be >= 1, got {self.m!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha!r}")
        if int(self.steps) < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps!r}")
        if self.tail not in ("worst-fraction", "kept-fraction"):
            raise ValueError(f"unknown tail convention {self.tail!r}")
        if int(self.workers) < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers!r}")
        if self.theorem_rule:
            if self.step_size is not None:
                raise ValueError("choose either step_size or theorem_rule, not both")
            if not (self.radius > 0 and self.rho > 0):
                raise ValueError("theorem_rule needs positive radius and rho")
        else:
            if self.step_size is None or not self.step_size > 0:
                raise ValueError("constant rule needs a positive step_size")
        if self.tail_fraction * self.m < 1.0:
            warnings.warn(
                f"expected retained count {self.tail_fraction * self.m:.3g} < 1: "
                "k clamps to 1 every step (pure worst-case regime)",
                stacklevel=2,
            )

    @property
    def tail_fraction(self) -> float:
        """Fraction of the batch retained in expectation."""
        return self.alpha if self.tail == "worst-fraction" else 1.0 - self.alpha

    def step_size_at(self, t: int) -> float:
        if self.theorem_rule:
            return self.radius / (self.rho * math.sqrt(t))
        return float(self.step_size)


def draw_k(m: int, alpha: float, rng: Rng) -> int:
    """Randomized retained count: floor(alpha*m) + Bernoulli(frac(alpha*m)).

    E[k] = alpha * m before clamping; the result is clamped into [1, m].
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m!r}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha!r}")
    raw = _draw_k_raw(m, alpha, rng)
    return min(max(raw, 1), m)


def _draw_k_raw(m: int, fraction: float, rng: Rng) -> int:
    target = fraction * m
    base = int(math.floor(target))
    frac = target - base
    bump = 1 if (frac > 0.0 and rng.generator().random() < frac) else 0
    return base + bump


class WorstSet:
    """Bounded set of the k smallest (value, arrival) pairs seen so far.

    Eviction removes the lexicographically largest (value, arrival) pair and
    insertion requires a strictly smaller value than the current maximum, so
    on value ties the earlier arrival is retained.  After offering all m pairs
    the set holds exactly the k smallest values.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity!r}")
        self.capacity = capacity
        self.entries: list[tuple[float, int]] = []  # (value, arrival index)

    def offer(self, value: float, arrival: int) -> bool:
        """Insert/replace per the retention branches; True if retained."""
        if len(self.entries) < self.capacity:
            self.entries.append((value, arrival))
            return True
        worst = max(range(len(self.entries)), key=lambda i: self.entries[i])
        if value < self.entries[worst][0]:  # strict: ties keep the incumbent
            self.entries[worst] = (value, arrival)
            return True
        return False

    def retained(self) -> list[tuple[float, int]]:
        """Entries in arrival order (deterministic averaging order)."""
        return sorted(self.entries, key=lambda e: e[1])

    def merge(self, other: "WorstSet") -> "WorstSet":
        """Deterministic merge of partial sets: k smallest (value, arrival)."""
        merged = WorstSet(self.capacity)
        merged.entries = sorted(self.entries + other.entries)[: self.capacity]
        return merged


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    k: int
    k_clamped: bool
    retained_indices: tuple[int, ...]
    retained_mean: float
    batch_mean: float
    step_size: float
    peak_stored_gradients: int
    param_norm: float


@dataclass(frozen=True)
class OptimizeResult:
    average_iterate: np.ndarray
    final_params: np.ndarray
    trace: list[StepDiagnostics] = field(repr=False)
    k_clamp_count: int = 0


def _model_rng(rng: Rng, index: int) -> Rng:
    return rng.substream(index)


def _scan_values(values: np.ndarray, k: int, workers: int) -> WorstSet:
    if workers == 1:
        ws = WorstSet(k)
        for i, v in enumerate(values):
            ws.offer(float(v), i)
        return ws
    partial = [WorstSet(k) for _ in range(workers)]
    for w in range(workers):
        for i in range(w, len(values), workers):
            partial[w].offer(float(values[i]), i)
    merged = partial[0]
    for other in partial[1:]:
        merged = merged.merge(other)
    return merged


def step(problem: DifferentiableProblem, params: np.ndarray,
         config: CvarSgdConfig, rng: Rng,
         step_index: int = 1) -> tuple[np.ndarray, StepDiagnostics]:
    """One ascent step: sample, retain the k worst, average their gradients."""
    params = np.asarray(params, dtype=float)
    m = int(config.m)
    q = config.tail_fraction
    k_raw = _draw_k_raw(m, q, _model_rng(rng, m)) if q > 0.0 else 0
    k = min(max(k_raw, 1), m)
    k_clamped = k != k_raw
    assert k <= math.ceil(q * m) + 1

    models = [problem.sample_model(_model_rng(rng, i)) for i in range(m)]
    if hasattr(problem, "evaluate_batch"):
        values = np.asarray(problem.evaluate_batch(params, models), dtype=float)
    else:
        values = np.array([problem.evaluate(params, mod) for mod in models])
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = int(bad[0])
        raise ArithmeticError(
            f"non-finite objective {values[i]!r} at step {step_index}, model {i}; "
            f"reproduce with rng {_model_rng(rng, i)!r}"
        )

    ws = _scan_values(values, k, int(config.workers))
    order = [arrival for _, arrival in ws.retained()]
    if hasattr(problem, "gradient_batch"):
        grads = np.asarray(problem.gradient_batch(params, [models[i] for i in order]),
                           dtype=float)
    else:
        grads = np.stack([problem.gradient(params, models[i]) for i in order])
    if not np.all(np.isfinite(grads)):
        i = order[int(np.flatnonzero(~np.all(np.isfinite(grads), axis=1))[0])]
        raise ArithmeticError(
            f"non-finite gradient at step {step_index}, model {i}; "
            f"reproduce with rng {_model_rng(rng, i)!r}"
        )
    peak = grads.shape[0]  # every retained gradient lives exactly here
    assert peak == k

    eta = config.step_size_at(step_index)
    new_params = params + eta * grads.mean(axis=0)
    if config.theorem_rule:
        norm = float(np.linalg.norm(new_params))
        if norm > config.radius:
            new_params = new_params * (config.radius / norm)

    diag = StepDiagnostics(
        step=step_index,
        k=k,
        k_clamped=k_clamped,
        retained_indices=tuple(order),
        retained_mean=float(values[order].mean()),
        batch_mean=float(values.mean()),
        step_size=eta,
        peak_stored_gradients=peak,
        param_norm=float(np.linalg.norm(new_params)),
    )
    return new_params, diag


def optimize(problem: DifferentiableProblem, config: CvarSgdConfig,
             initial: np.ndarray | None = None) -> OptimizeResult:
    """Run T steps and return the averaged iterate (1/T) sum of post-step params."""
    if initial is None:
        params = np.zeros(problem.dimension)
    else:
        params = np.asarray(initial, dtype=float).copy()
        if params.shape != (problem.dimension,):
            raise ValueError(
                f"initial has shape {params.shape}, expected ({problem.dimension},)"
            )
    base = Rng(seed=config.seed, stream=config.stream)
    accum = np.zeros_like(params)
    trace: list[StepDiagnostics] = []
    clamps = 0
    for t in range(1, int(config.steps) + 1):
        params, diag = step(problem, params, config, base.substream(t), step_index=t)
        accum += params
        trace.append(diag)
        clamps += bool(diag.k_clamped)
    return OptimizeResult(
        average_iterate=accum / config.steps,
        final_params=params,
        trace=trace,
        k_clamp_count=clamps,
    )


def trace_to_csv(trace: list[StepDiagnostics], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "k", "retained_mean", "step_size", "param_norm"])
        for d in trace:
            w.writerow([d.step, d.k, repr(d.retained_mean), repr(d.step_size),
                        repr(d.param_norm)])


def verify_gradients(problem: DifferentiableProblem, params: np.ndarray,
                     rng: Rng, probes: int = 5, coords: int = 10,
                     rel_tol: float = 1e-4, h: float = 1e-5) -> float:
    """Central-difference self-test of problem.gradient on random probe models.

    Checks up to `coords` random coordinates per probe; raises ValueError on
    the first relative mismatch beyond rel_tol, otherwise returns the largest
    relative error seen.
    """
    params = np.asarray(params, dtype=float)
    dim = params.size
    worst = 0.0
    for p in range(probes):
        model = problem.sample_model(rng.substream(p))
        grad = np.asarray(problem.gradient(params, model), dtype=float)
        picker = rng.substream(p, probes + 1).generator()
        idx = (np.arange(dim) if dim <= coords
               else picker.choice(dim, size=coords, replace=False))
        for j in idx:
            e = np.zeros(dim)
            e[j] = h
            fd = (problem.evaluate(params + e, model)
                  - problem.evaluate(params - e, model)) / (2 * h)
            scale = max(abs(fd), abs(grad[j]), 1e-8)
            err = abs(fd - grad[j]) / scale
            worst = max(worst, err)
            if err > rel_tol:
                raise ValueError(
                    f"gradient check failed: coordinate {j}, probe {p}: "
                    f"analytic {grad[j]:.6e} vs central difference {fd:.6e} "
                    f"(relative error {err:.2e} > {rel_tol:g})"
                )
    return worst
