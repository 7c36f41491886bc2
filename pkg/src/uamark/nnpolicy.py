"""Small feedforward policy network with exact reverse-mode gradients.

The network is a plain MLP with scalar output (a hedge position), flat
parameter vector, and hand-written backward pass.  This is deliberately not a
general autodiff engine: it differentiates exactly the compositions the
hedging lab needs — batched forward outputs contracted against per-row
adjoints.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .mathkit import Rng

__all__ = [
    "Mlp",
    "backward",
    "flatten",
    "forward",
    "forward_batch",
    "forward_trace",
    "init_params",
    "lipschitz_bound",
    "params_from_csv",
    "params_to_csv",
    "unflatten",
]


@dataclass(frozen=True)
class Mlp:
    """Architecture: layer widths (input, hidden..., 1) and hidden activation."""

    widths: tuple[int, ...] = (3, 32, 32, 1)
    activation: str = "tanh"

    def __post_init__(self) -> None:
        w = tuple(int(x) for x in self.widths)
        if len(w) < 2 or any(x < 1 for x in w):
            raise ValueError(f"widths must be >= 2 positive entries, got {w!r}")
        if w[-1] != 1:
            raise ValueError(f"output width must be 1, got {w[-1]!r}")
        if self.activation not in ("tanh", "softplus"):
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "widths", w)

    @property
    def param_count(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))

    @property
    def input_dim(self) -> int:
        return self.widths[0]


def _act(mlp: Mlp, z: np.ndarray) -> np.ndarray:
    if mlp.activation == "tanh":
        return np.tanh(z)
    return np.logaddexp(0.0, z)  # stable softplus


def _act_deriv(mlp: Mlp, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if mlp.activation == "tanh":
        return 1.0 - h * h
    return expit(z)


def init_params(mlp: Mlp, rng: Rng) -> np.ndarray:
    """Seeded uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    gen = rng.generator()
    chunks = []
    for fan_in, fan_out in zip(mlp.widths[:-1], mlp.widths[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        chunks.append(gen.uniform(-bound, bound, fan_out * fan_in))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def unflatten(mlp: Mlp, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    params = np.asarray(params, dtype=float)
    if params.shape != (mlp.param_count,):
        raise ValueError(
            f"parameter vector has shape {params.shape}, expected ({mlp.param_count},)"
        )
    layers = []
    pos = 0
    for fan_in, fan_out in zip(mlp.widths[:-1], mlp.widths[1:]):
        w = params[pos : pos + fan_out * fan_in].reshape(fan_out, fan_in)
        pos += fan_out * fan_in
        b = params[pos : pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def flatten(layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])


def forward_trace(mlp: Mlp, params: np.ndarray, inputs: np.ndarray):
    """Batched forward pass keeping what backward needs.

    inputs: (n, input_dim).  Returns (outputs (n,), trace).  The trace holds,
    per layer, the layer input and pre-activation.
    """
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[1] != mlp.input_dim:
        raise ValueError(
            f"inputs must have shape (n, {mlp.input_dim}), got {x.shape}"
        )
    layers = unflatten(mlp, params)
    trace = []
    h = x
    for li, (w, b) in enumerate(layers):
        z = h @ w.T + b
        trace.append((h, z))
        h = _act(mlp, z) if li < len(layers) - 1 else z
    return h[:, 0], trace


def forward_batch(mlp: Mlp, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    out, _ = forward_trace(mlp, params, inputs)
    return out


def forward(mlp: Mlp, params: np.ndarray, x) -> float:
    out = forward_batch(mlp, params, np.asarray(x, dtype=float)[None, :])
    return float(out[0])


def backward(mlp: Mlp, params: np.ndarray, trace,
             out_adjoints: np.ndarray) -> np.ndarray:
    """Gradient of sum_i adjoint_i * output_i with respect to flat params."""
    adj = np.asarray(out_adjoints, dtype=float)
    if not np.all(np.isfinite(adj)):
        raise ValueError("non-finite output adjoints")
    layers = unflatten(mlp, params)
    if adj.shape != (trace[0][0].shape[0],):
        raise ValueError(
            f"adjoints have shape {adj.shape}, expected ({trace[0][0].shape[0]},)"
        )
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)
    dz = adj[:, None]  # output layer is linear
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        h_in, _z = trace[li]
        grads[li] = (dz.T @ h_in, dz.sum(axis=0))
        if li > 0:
            # h_in of this layer is the activated pre-activation of the one below
            z_prev = trace[li - 1][1]
            dz = (dz @ w) * _act_deriv(mlp, z_prev, h_in)
    return flatten(grads)


def lipschitz_bound(mlp: Mlp, params: np.ndarray) -> float:
    """Product of weight spectral norms; valid since both activations are
    1-Lipschitz."""
    bound = 1.0
    for w, _ in unflatten(mlp, params):
        bound *= float(np.linalg.norm(w, 2))
    return bound


def params_to_csv(mlp: Mlp, params: np.ndarray, path) -> None:
    """Flat parameter dump with an architecture header line."""
    params = np.asarray(params, dtype=float)
    if params.shape != (mlp.param_count,):
        raise ValueError(
            f"parameter vector has shape {params.shape}, expected ({mlp.param_count},)"
        )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arch", "|".join(str(x) for x in mlp.widths), mlp.activation])
        for v in params:
            w.writerow([repr(float(v))])


def params_from_csv(path) -> tuple[Mlp, np.ndarray]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][0] != "arch" or len(rows[0]) != 3:
        raise ValueError(f"{path}: missing architecture header")
    widths = tuple(int(x) for x in rows[0][1].split("|"))
    mlp = Mlp(widths=widths, activation=rows[0][2])
    params = np.array([float(r[0]) for r in rows[1:]])
    if params.size != mlp.param_count:
        raise ValueError(
            f"{path}: {params.size} parameters for architecture needing "
            f"{mlp.param_count}"
        )
    return mlp, params
