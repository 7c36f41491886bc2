"""Experiment harness: figure-data CSVs, return ingestion, lab subcommands.

Every subcommand reads a JSON config (flags win over config keys), writes a
resolved-config copy next to its outputs, and emits CSVs that start with a
provenance comment line (tool version, resolved seed) followed by a header
row.  Unknown config keys are rejected with their dotted key path.  Re-runs
with the same config and seed overwrite outputs bit-identically — nothing
here depends on wall-clock time.

Exit codes: 0 success, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cvarsgd import CvarSgdConfig, OptimizeResult, optimize
from .gauss1d import (
    ALPHA_GRID,
    LAMBDA_PRIME_GRID,
    EstimatedGaussian,
    GaussianLabParams,
    estimate,
    oosp_mixture,
    oosp_oracle,
    oosp_plugin,
    oosp_subsample_mc,
    oosp_ua_cvar,
    oosp_ua_entropic,
    oosp_var_adjusted,
    optimal_aversion,
    oracle_action,
    plugin_action,
    ua_cvar_action,
    ua_entropic_action,
)
from .gausshd import DriftModelProblem, hd_ua_cvar, synthetic_instance
from .hedgelab import (
    HedgeProblem,
    HestonParams,
    TestDistribution,
    evaluate_on_test_distribution,
    train_oracle_mixture,
    train_plugin,
    train_ua,
)
from .mathkit import FactorizationError, Rng
from .modeldist import read_returns_csv
from .nnpolicy import Mlp

__all__ = ["ConfigError", "main"]


class ConfigError(ValueError):
    """Bad, unknown, or missing configuration input (exit code 2)."""


_REQUIRED = object()


def _type_name(kind: str) -> str:
    return {
        "int": "an integer",
        "float": "a number",
        "str": "a string",
        "bool": "a boolean",
        "floats": "a list of numbers",
        "ints": "a list of integers",
    }[kind.rstrip("?")]


def _coerce(kind: str, value, path: str):
    base = kind.rstrip("?")
    if value is None:
        if kind.endswith("?"):
            return None
        raise ConfigError(f"{path}: must be {_type_name(kind)}, got null")
    if base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: must be {_type_name(kind)}, got {value!r}")
        return int(value)
    if base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: must be {_type_name(kind)}, got {value!r}")
        return float(value)
    if base == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: must be {_type_name(kind)}, got {value!r}")
        return value
    if base == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: must be {_type_name(kind)}, got {value!r}")
        return value
    if base in ("floats", "ints"):
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{path}: must be {_type_name(kind)}, got {value!r}")
        out = []
        for j, item in enumerate(value):
            out.append(_coerce(base[:-1], item, f"{path}[{j}]"))
        return out
    raise AssertionError(f"unknown schema kind {kind!r}")


def _resolve(user: dict, schema: dict, path: str = "") -> dict:
    """Defaults filled, types checked, unknown keys rejected with key paths."""
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'}: must be a JSON object, got {user!r}")
    for key in user:
        if key not in schema:
            dotted = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key: {dotted}")
    resolved = {}
    for key, spec in schema.items():
        dotted = f"{path}.{key}" if path else key
        if isinstance(spec, dict):
            resolved[key] = _resolve(user.get(key, {}), spec, dotted)
            continue
        kind, default = spec
        if key in user:
            resolved[key] = _coerce(kind, user[key], dotted)
        elif default is _REQUIRED:
            raise ConfigError(f"missing required config key: {dotted}")
        else:
            resolved[key] = default
    return resolved


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path: Path, seed: int, header: list[str], rows) -> None:
    lines = [f"# uamark {__version__}, seed={seed}", ",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _write_resolved(path: Path, cfg: dict) -> None:
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _save_svg(path: Path, draw) -> None:
    try:
        import matplotlib
    except ImportError:
        raise ConfigError(
            "--svg needs matplotlib (install the 'plots' extra)") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "uamark"  # deterministic element ids
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    draw(ax)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# shared schema blocks


_LAB_SCHEMA = {
    "mu": ("float", 0.2 / 255),
    "sigma2": ("float", 0.04 / 255),
    "n_obs": ("int", 140),
    "lam": ("float", 0.84),
}

_COMMON = {
    "seed": ("int", 0),
    "out": ("str", "out"),
}


def _lab_from(cfg: dict) -> GaussianLabParams:
    lab = cfg["lab"]
    return GaussianLabParams(mu=lab["mu"], sigma2=lab["sigma2"],
                             n_obs=lab["n_obs"], lam=lab["lam"])


# ---------------------------------------------------------------------------
# strategies-1d


_STRATEGIES_SCHEMA = {
    **_COMMON,
    "lab": _LAB_SCHEMA,
    "sigma2_hat": ("float?", None),       # default: the lab variance
    "lam_prime": ("float?", None),        # default: lam * n_obs (even shrink)
    "alpha": ("float", 0.3),
    "mu_hat_half_width": ("float?", None),  # default: 4 SE of the mean
    "grid_points": ("int", 201),
}


def cmd_strategies_1d(cfg: dict, outdir: Path, svg: bool) -> None:
    p = _lab_from(cfg)
    s2h = cfg["sigma2_hat"] if cfg["sigma2_hat"] is not None else p.sigma2
    lam_prime = cfg["lam_prime"] if cfg["lam_prime"] is not None else p.lam * p.n_obs
    half = (cfg["mu_hat_half_width"] if cfg["mu_hat_half_width"] is not None
            else 4.0 * math.sqrt(p.sigma2 / p.n_obs))
    if cfg["grid_points"] < 2:
        raise ConfigError("grid_points: must be >= 2")
    grid = np.linspace(-half, half, cfg["grid_points"])
    rows = []
    for mh in grid:
        e = EstimatedGaussian(mu_hat=float(mh), sigma2_hat=s2h, n_obs=p.n_obs)
        rows.append((mh, plugin_action(e, p.lam),
                     ua_entropic_action(e, p.lam, lam_prime),
                     ua_cvar_action(e, p.lam, cfg["alpha"]),
                     oracle_action(p)))
    out = outdir / "strategies-1d.csv"
    _write_csv(out, cfg["seed"],
               ["mu_hat", "plugin", "ua_entropic", "ua_cvar", "oracle"], rows)
    if svg:
        data = np.array(rows)

        def draw(ax):
            for j, label in enumerate(["plug-in", "UA entropic", "UA CVaR", "oracle"]):
                ax.plot(data[:, 0], data[:, j + 1], label=label)
            ax.set_xlabel("estimated mean")
            ax.set_ylabel("action")
            ax.legend()

        _save_svg(outdir / "strategies-1d.svg", draw)


# ---------------------------------------------------------------------------
# oosp-frontier


_FRONTIER_SCHEMA = {
    **_COMMON,
    "lab": _LAB_SCHEMA,
    "lam_prime_values": ("floats?", None),  # default: the 400-point log grid
    "alpha_values": ("floats?", None),
}


def cmd_oosp_frontier(cfg: dict, outdir: Path, svg: bool) -> None:
    p = _lab_from(cfg)
    lps = np.asarray(cfg["lam_prime_values"] if cfg["lam_prime_values"] is not None
                     else LAMBDA_PRIME_GRID, dtype=float)
    als = np.asarray(cfg["alpha_values"] if cfg["alpha_values"] is not None
                     else ALPHA_GRID, dtype=float)
    plug, mix, orc = oosp_plugin(p), oosp_mixture(p), oosp_oracle(p)
    ent = np.asarray(oosp_ua_entropic(p, lps))
    cvr = np.asarray(oosp_ua_cvar(p, als))
    rows = [("entropic", lp, v, plug, mix, orc) for lp, v in zip(lps, ent)]
    rows += [("cvar", a, v, plug, mix, orc) for a, v in zip(als, cvr)]
    out = outdir / "oosp-frontier.csv"
    _write_csv(out, cfg["seed"],
               ["family", "aversion", "oosp_ua", "oosp_plugin", "oosp_mixture",
                "oosp_oracle"], rows)
    if svg:
        def draw(ax):
            ax.plot(lps, ent, label="UA entropic (vs lam')")
            ax.axhline(plug, color="tab:red", ls="--", label="plug-in")
            ax.axhline(mix, color="tab:orange", ls=":", label="mixture")
            ax.axhline(orc, color="tab:green", ls="-.", label="oracle")
            ax.set_xscale("log")
            ax.set_xlabel("uncertainty aversion lam'")
            ax.set_ylabel("out-of-sample score")
            ax.legend()

        _save_svg(outdir / "oosp-frontier-entropic.svg", draw)

        def draw_cvar(ax):
            ax.plot(als, cvr, label="UA CVaR (vs alpha)")
            ax.axhline(plug, color="tab:red", ls="--", label="plug-in")
            ax.axhline(mix, color="tab:orange", ls=":", label="mixture")
            ax.axhline(orc, color="tab:green", ls="-.", label="oracle")
            ax.set_xscale("log")
            ax.set_xlabel("tail level alpha")
            ax.set_ylabel("out-of-sample score")
            ax.legend()

        _save_svg(outdir / "oosp-frontier-cvar.svg", draw_cvar)


# ---------------------------------------------------------------------------
# optimal-aversion


_OPTIMAL_SCHEMA = {
    **_COMMON,
    "lab": _LAB_SCHEMA,
    "sweep": ("str", "mu"),          # "mu" or "sigma2"
    "values": ("floats?", None),     # default: log sweep around the lab value
}


def cmd_optimal_aversion(cfg: dict, outdir: Path, svg: bool) -> None:
    p0 = _lab_from(cfg)
    sweep = cfg["sweep"]
    if sweep not in ("mu", "sigma2"):
        raise ConfigError(f"sweep: must be 'mu' or 'sigma2', got {sweep!r}")
    if cfg["values"] is not None:
        values = np.asarray(cfg["values"], dtype=float)
    elif sweep == "mu":
        values = np.geomspace(1e-5, 4e-3, 25)
    else:
        values = np.geomspace(p0.sigma2 / 16, p0.sigma2 * 16, 25)
    rows = []
    for v in values:
        p = dataclasses.replace(p0, **{sweep: float(v)})
        best_lp = optimal_aversion(p, "entropic")
        best_al = optimal_aversion(p, "cvar")
        rows.append((sweep, v, best_lp, float(oosp_ua_entropic(p, best_lp)),
                     best_al, float(oosp_ua_cvar(p, best_al))))
    out = outdir / "optimal-aversion.csv"
    _write_csv(out, cfg["seed"],
               ["parameter", "value", "best_lam_prime", "oosp_at_best_lam_prime",
                "best_alpha", "oosp_at_best_alpha"], rows)
    if svg:
        data = np.array([r[1:] for r in rows], dtype=float)

        def draw(ax):
            ax.plot(data[:, 0], data[:, 1], label="best lam'")
            ax2 = ax.twinx()
            ax2.plot(data[:, 0], data[:, 3], color="tab:orange", label="best alpha")
            ax.set_xscale("log")
            ax.set_yscale("log")
            ax2.set_yscale("log")
            ax.set_xlabel(f"swept {sweep}")
            ax.set_ylabel("optimal lam'")
            ax2.set_ylabel("optimal alpha")

        _save_svg(outdir / "optimal-aversion.svg", draw)


# ---------------------------------------------------------------------------
# bootstrap-compare


_BOOTSTRAP_SCHEMA = {
    **_COMMON,
    "lab": _LAB_SCHEMA,
    # default grids stay inside the regime where the finite pool tracks the
    # analytic curves: lam' well below the worst-pool-member regime, alpha
    # not far below 1/sqrt(pool)
    "lam_prime_values": ("floats", [0.0, 0.01, 0.1, 1.0, 10.0, 50.0, 100.0,
                                    220.0, 500.0, 1000.0]),
    "alpha_values": ("floats", [0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 0.9, 1.0]),
    "subsample_size": ("int?", None),   # default: n_obs (full-size subsamples)
    "model_count": ("int", 2000),
    "draws": ("int", 4000),
}


def cmd_bootstrap_compare(cfg: dict, outdir: Path, svg: bool) -> None:
    p = _lab_from(cfg)
    scan = oosp_subsample_mc(
        p, Rng(seed=cfg["seed"], stream=31),
        lam_prime_values=cfg["lam_prime_values"],
        alpha_values=cfg["alpha_values"],
        subsample_size=cfg["subsample_size"],
        model_count=cfg["model_count"],
        draws=cfg["draws"],
    )
    rows = []
    for lp, mc, se in zip(scan.lam_prime_values, scan.entropic_scores,
                          scan.entropic_errors):
        rows.append(("entropic", lp, float(oosp_ua_entropic(p, lp)), mc, se))
    for a, mc, se in zip(scan.alpha_values, scan.cvar_scores, scan.cvar_errors):
        rows.append(("cvar", a, float(oosp_ua_cvar(p, a)), mc, se))
    out = outdir / "bootstrap-compare.csv"
    _write_csv(out, cfg["seed"],
               ["family", "aversion", "oosp_analytic", "oosp_mc", "mc_std_error"],
               rows)
    if svg:
        ent = [r for r in rows if r[0] == "entropic" and r[1] > 0]

        def draw(ax):
            x = [r[1] for r in ent]
            ax.plot(x, [r[2] for r in ent], label="analytic")
            ax.errorbar(x, [r[3] for r in ent], yerr=[3 * r[4] for r in ent],
                        fmt="o", ms=3, label="subsample MC (3 SE)")
            ax.set_xscale("log")
            ax.set_xlabel("uncertainty aversion lam'")
            ax.set_ylabel("out-of-sample score")
            ax.legend()

        _save_svg(outdir / "bootstrap-compare.svg", draw)


# ---------------------------------------------------------------------------
# var-adjust


_VAR_ADJUST_SCHEMA = {
    **_COMMON,
    "lab": _LAB_SCHEMA,
    "tau2_values": ("floats?", None),  # default: 0 plus a log sweep through
                                       # sigma2/n (the mixture-equivalent point)
}


def cmd_var_adjust(cfg: dict, outdir: Path, svg: bool) -> None:
    p = _lab_from(cfg)
    if cfg["tau2_values"] is not None:
        tau2s = np.asarray(cfg["tau2_values"], dtype=float)
    else:
        anchor = p.sigma2 / p.n_obs
        tau2s = np.concatenate([[0.0], anchor * np.geomspace(0.25, 4096.0, 15)])
    plug, mix = oosp_plugin(p), oosp_mixture(p)
    rows = [(t, float(oosp_var_adjusted(p, t)), plug, mix) for t in tau2s]
    out = outdir / "var-adjust.csv"
    _write_csv(out, cfg["seed"],
               ["tau2", "oosp_var_adjusted", "oosp_plugin", "oosp_mixture"], rows)
    if svg:
        def draw(ax):
            pos = [r for r in rows if r[0] > 0]
            ax.plot([r[0] for r in pos], [r[1] for r in pos], label="var-adjusted")
            ax.axhline(plug, color="tab:red", ls="--", label="plug-in (tau2=0)")
            ax.axhline(mix, color="tab:orange", ls=":", label="mixture (tau2=s2/n)")
            ax.set_xscale("log")
            ax.set_xlabel("variance adjustment tau2")
            ax.set_ylabel("out-of-sample score")
            ax.legend()

        _save_svg(outdir / "var-adjust.svg", draw)


# ---------------------------------------------------------------------------
# highdim


_HIGHDIM_SCHEMA = {
    **_COMMON,
    "instance": {
        "seed": ("int", 7),
        "dimension": ("int", 50),
        "n_obs": ("int", 30),
        "lam": ("float", 1.0),
        "signal": ("float", 3.0),
    },
    "alpha_values": ("floats", [0.1, 0.25, 0.5, 1.0]),
    "model_counts": ("ints", [50, 500]),
    "sgd": {
        "steps": ("int", 600),        # burn-in leg, constant step
        "step_size": ("float", 0.1),
        "tail_steps": ("int", 400),   # averaged tail leg at half the step
    },
}


def _plain_sgd(problem: DriftModelProblem, m: int, steps: int, step_size: float,
               seed: int, stream: int, initial: np.ndarray) -> OptimizeResult:
    """Reference mini-batch ascent (no retention logic), same stream layout."""
    base = Rng(seed=seed, stream=stream)
    params = np.asarray(initial, dtype=float).copy()
    accum = np.zeros_like(params)
    for t in range(1, steps + 1):
        srng = base.substream(t)
        models = [problem.sample_model(srng.substream(i)) for i in range(m)]
        grads = np.stack([problem.gradient(params, mod) for mod in models])
        params = params + step_size * grads.mean(axis=0)
        accum += params
    return OptimizeResult(average_iterate=accum / steps, final_params=params,
                          trace=[], k_clamp_count=0)


def _two_leg(problem, m: int, alpha: float, sgd: dict, seed: int,
             runner=None) -> OptimizeResult:
    """Constant-step burn-in, then an averaged tail leg at half the step."""
    if runner is None:
        def runner(steps, step_size, stream, initial):
            cfg = CvarSgdConfig(m=m, alpha=alpha, steps=steps, step_size=step_size,
                                seed=seed, stream=stream)
            return optimize(problem, cfg, initial=initial)
    leg1 = runner(sgd["steps"], sgd["step_size"], 9, None)
    if sgd["tail_steps"] < 1:
        return leg1
    return runner(sgd["tail_steps"], sgd["step_size"] / 2, 10, leg1.final_params)


def cmd_highdim(cfg: dict, outdir: Path, svg: bool) -> None:
    inst = cfg["instance"]
    p = synthetic_instance(seed=inst["seed"], d=inst["dimension"],
                           n_obs=inst["n_obs"], lam=inst["lam"],
                           signal=inst["signal"])
    problem = DriftModelProblem(p)
    sgd = cfg["sgd"]
    rows = []
    for m in cfg["model_counts"]:
        for alpha in cfg["alpha_values"]:
            target = hd_ua_cvar(p, alpha)
            tnorm = float(np.linalg.norm(target))
            if tnorm == 0.0:
                raise ConfigError(
                    f"alpha_values[{cfg['alpha_values'].index(alpha)}]: "
                    "closed-form action is identically zero (below the hinge "
                    "threshold); relative distance is undefined")
            res = _two_leg(problem, m, alpha, sgd, cfg["seed"])
            dist = float(np.linalg.norm(res.average_iterate - target)) / tnorm
            rows.append(("cvar_sgd", alpha, m, dist))
            if alpha == 1.0:
                # independent reference loop: must coincide with alpha=1 above
                def plain_runner(steps, step_size, stream, initial):
                    start = np.zeros(problem.dimension) if initial is None else initial
                    return _plain_sgd(problem, m, steps, step_size,
                                      cfg["seed"], stream, start)

                ref = _two_leg(problem, m, 1.0, sgd, cfg["seed"],
                               runner=plain_runner)
                dref = float(np.linalg.norm(ref.average_iterate - target)) / tnorm
                rows.append(("plain_sgd", 1.0, m, dref))
    out = outdir / "highdim.csv"
    _write_csv(out, cfg["seed"],
               ["method", "alpha", "model_count", "relative_distance"], rows)
    if svg:
        def draw(ax):
            for m in cfg["model_counts"]:
                pts = [(r[1], r[3]) for r in rows
                       if r[0] == "cvar_sgd" and r[2] == m]
                ax.plot([q[0] for q in pts], [q[1] for q in pts], "o-",
                        label=f"m={m}")
            ax.set_xlabel("tail level alpha")
            ax.set_ylabel("relative distance to closed form")
            ax.legend()

        _save_svg(outdir / "highdim.svg", draw)


# ---------------------------------------------------------------------------
# hedge


_HEDGE_SCHEMA = {
    **_COMMON,
    "problem": {
        "horizon": ("int", 120),
        "reset_period": ("int", 40),
        "premium": ("float", 0.0),
        "hidden": ("ints", [32, 32]),
    },
    "dist": {
        "spread": ("float", 0.2),
        "mode": ("str", "lognormal"),
    },
    "bundle_size": ("int", 16),
    "model_count": ("int", 8),
    "oracle_model_count": ("int?", None),  # default: 2x model_count
    "alphas": ("floats", [0.1, 0.25]),
    "steps": ("int", 400),
    "tail_steps": ("int", 100),
    "step_size": ("float", 0.01),
    "include_oracle": ("bool", True),
    "test_models": ("int", 32),
    "paths_per_model": ("int", 128),
}


def _hedge_two_leg(train, seed: int, steps: int, tail_steps: int,
                   step_size: float) -> tuple[np.ndarray, list]:
    cfg1 = CvarSgdConfig(m=1, alpha=1.0, steps=steps, step_size=step_size,
                         seed=seed, stream=5)
    leg1 = train(cfg1, None)
    if tail_steps < 1:
        return leg1.final_params, leg1.trace
    cfg2 = CvarSgdConfig(m=1, alpha=1.0, steps=tail_steps, step_size=step_size,
                         seed=seed, stream=6)
    leg2 = train(cfg2, leg1.final_params)
    return leg2.average_iterate, leg1.trace + leg2.trace


def cmd_hedge(cfg: dict, outdir: Path, svg: bool) -> None:
    prob_cfg = cfg["problem"]
    problem = HedgeProblem(
        horizon=prob_cfg["horizon"],
        reset_period=prob_cfg["reset_period"],
        mlp=Mlp((3, *prob_cfg["hidden"], 1)),
        premium=prob_cfg["premium"],
    )
    dist = TestDistribution(base=problem.params, spread=cfg["dist"]["spread"],
                            mode=cfg["dist"]["mode"])
    seed, bundle = cfg["seed"], cfg["bundle_size"]
    m = cfg["model_count"]
    m_oracle = cfg["oracle_model_count"]
    if m_oracle is None:
        m_oracle = 2 * m

    def cfg_with(base_cfg: CvarSgdConfig, m_: int) -> CvarSgdConfig:
        return dataclasses.replace(base_cfg, m=m_)

    jobs = [("plugin",
             lambda c, init: train_plugin(problem, bundle, cfg_with(c, m), init))]
    for alpha in cfg["alphas"]:
        jobs.append((f"ua_{alpha:g}",
                     lambda c, init, a=alpha: train_ua(
                         problem, bundle, m, a, cfg_with(c, m), init)))
    if cfg["include_oracle"]:
        jobs.append(("oracle",
                     lambda c, init: train_oracle_mixture(
                         problem, dist, bundle, cfg_with(c, m_oracle), init)))

    trace_header = ["step", "k", "retained_mean", "batch_mean", "step_size",
                    "peak_stored_gradients", "param_norm"]
    eval_header = ["draw", "kappa", "theta", "xi", "rho_c", "drift", "v0", "s0",
                   "objective"]
    eval_rng = Rng(seed=seed, stream=77)
    summary = []

    zero_policy = np.zeros(problem.mlp.param_count)
    ev = evaluate_on_test_distribution(problem, zero_policy, dist,
                                       cfg["test_models"],
                                       cfg["paths_per_model"], eval_rng)
    summary.append(("zero", ev.mean, ev.std, ev.rejections))
    traces = {}
    for name, train in jobs:
        policy, trace = _hedge_two_leg(train, seed, cfg["steps"],
                                       cfg["tail_steps"], cfg["step_size"])
        _write_csv(outdir / f"hedge-trace-{name}.csv", seed, trace_header,
                   [(d.step, d.k, d.retained_mean, d.batch_mean, d.step_size,
                     d.peak_stored_gradients, d.param_norm) for d in trace])
        ev = evaluate_on_test_distribution(problem, policy, dist,
                                           cfg["test_models"],
                                           cfg["paths_per_model"], eval_rng)
        _write_csv(outdir / f"hedge-eval-{name}.csv", seed, eval_header,
                   [(i, mp.kappa, mp.theta, mp.xi, mp.rho_c, mp.drift, mp.v0,
                     mp.s0, obj)
                    for i, (mp, obj) in enumerate(zip(ev.models, ev.objectives))])
        summary.append((name, ev.mean, ev.std, ev.rejections))
        traces[name] = [-d.retained_mean for d in trace]
    _write_csv(outdir / "hedge-summary.csv", seed,
               ["method", "mean_objective", "std_objective", "rejections"],
               summary)
    if svg:
        def draw(ax):
            for name, ys in traces.items():
                ax.plot(range(1, len(ys) + 1), ys, label=name, lw=0.8)
            ax.set_xlabel("training step")
            ax.set_ylabel("retained P&L std (lower is better)")
            ax.set_yscale("log")
            ax.legend()

        _save_svg(outdir / "hedge-traces.svg", draw)


# ---------------------------------------------------------------------------
# ingest-returns


_INGEST_SCHEMA = {
    **_COMMON,
    "path": ("str", _REQUIRED),
}


def cmd_ingest_returns(cfg: dict, outdir: Path, svg: bool) -> None:
    returns = read_returns_csv(cfg["path"])
    uncentered = estimate(returns, centered=False)
    centered = estimate(returns, centered=True)
    _write_csv(outdir / "returns-summary.csv", cfg["seed"],
               ["n_obs", "mu_hat", "sigma2_hat_uncentered", "sigma2_hat_centered"],
               [(uncentered.n_obs, uncentered.mu_hat, uncentered.sigma2_hat,
                 centered.sigma2_hat)])
    _write_csv(outdir / "returns-validated.csv", cfg["seed"], ["value"],
               [(v,) for v in returns])
    print(f"n_obs={uncentered.n_obs} mu_hat={uncentered.mu_hat!r} "
          f"sigma2_hat_uncentered={uncentered.sigma2_hat!r} "
          f"sigma2_hat_centered={centered.sigma2_hat!r}")


# ---------------------------------------------------------------------------
# driver


_COMMANDS = {
    "strategies-1d": (cmd_strategies_1d, _STRATEGIES_SCHEMA,
                      "Actions vs the estimated mean. CSV columns: mu_hat, "
                      "plugin, ua_entropic, ua_cvar, oracle."),
    "oosp-frontier": (cmd_oosp_frontier, _FRONTIER_SCHEMA,
                      "Out-of-sample score vs aversion for all strategies. CSV "
                      "columns: family (entropic|cvar), aversion, oosp_ua, "
                      "oosp_plugin, oosp_mixture, oosp_oracle."),
    "optimal-aversion": (cmd_optimal_aversion, _OPTIMAL_SCHEMA,
                         "Best aversion level vs a swept lab parameter. CSV "
                         "columns: parameter, value, best_lam_prime, "
                         "oosp_at_best_lam_prime, best_alpha, "
                         "oosp_at_best_alpha."),
    "bootstrap-compare": (cmd_bootstrap_compare, _BOOTSTRAP_SCHEMA,
                          "Analytic vs subsample-Monte-Carlo out-of-sample "
                          "score. CSV columns: family, aversion, oosp_analytic, "
                          "oosp_mc, mc_std_error (draw noise + pool noise, in "
                          "quadrature)."),
    "var-adjust": (cmd_var_adjust, _VAR_ADJUST_SCHEMA,
                   "Plug-in score under a manual variance adjustment. CSV "
                   "columns: tau2, oosp_var_adjusted, oosp_plugin, "
                   "oosp_mixture.  tau2=0 reproduces the plug-in row; "
                   "tau2=sigma2/n_obs reproduces the mixture row."),
    "highdim": (cmd_highdim, _HIGHDIM_SCHEMA,
                "Stochastic-optimizer approximation of the closed-form "
                "tail-robust portfolio. CSV columns: method (cvar_sgd|"
                "plain_sgd), alpha, model_count, relative_distance."),
    "hedge": (cmd_hedge, _HEDGE_SCHEMA,
              "Train and evaluate hedging policies (plugin, UA per alpha, "
              "oracle mixture). Emits hedge-trace-<method>.csv, "
              "hedge-eval-<method>.csv and hedge-summary.csv (method, "
              "mean_objective, std_objective, rejections; lower objective "
              "is better, zero-policy baseline row first)."),
    "ingest-returns": (cmd_ingest_returns, _INGEST_SCHEMA,
                       "Validate a single-column returns CSV (config key: "
                       "path) and write returns-summary.csv (n_obs, mu_hat, "
                       "both variance conventions) plus returns-validated.csv."),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uamark",
        description="Uncertainty-aware decision experiments.",
        epilog="Exit codes: 0 success, 2 config error, 3 numeric failure.",
    )
    sub = parser.add_subparsers(dest="command")
    for name, (_, _, doc) in _COMMANDS.items():
        sp = sub.add_parser(name, help=doc.split(".")[0], description=doc)
        sp.add_argument("--config", default=None,
                        help="JSON config file (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--out", default=None,
                        help="override the output directory")
        sp.add_argument("--svg", action="store_true",
                        help="also render SVG plots from the CSV data")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    handler, schema, _ = _COMMANDS[args.command]
    try:
        cfg = _resolve(_load_config(args.config), schema)
        if args.seed is not None:
            cfg["seed"] = int(args.seed)
        if args.out is not None:
            cfg["out"] = args.out
        outdir = Path(cfg["out"])
        outdir.mkdir(parents=True, exist_ok=True)
        _write_resolved(outdir / f"{args.command}-config.json", cfg)
        handler(cfg, outdir, svg=args.svg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        # bad input path from the config, unwritable --out, and friends
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except FactorizationError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
