"""CLI tests: config validation, exit codes, determinism, anchor values."""

import json
import math

import numpy as np
import pytest

from uamark.cli import ConfigError, _resolve, main
from uamark.gauss1d import GaussianLabParams, oosp_mixture, oosp_plugin


P0 = GaussianLabParams(mu=0.2 / 255, sigma2=0.04 / 255, n_obs=140, lam=0.84)


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# uamark "), "provenance line missing"
    header = lines[1].split(",")
    rows = [line.split(",") for line in lines[2:]]
    return header, rows


def run(tmp_path, command, config=None, extra=()):
    args = [command]
    if config is not None:
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(config))
        args += ["--config", str(cfg_path)]
    args += ["--out", str(tmp_path / "out")]
    args += list(extra)
    return main(args)


# ---------------------------------------------------------------------------
# config plumbing


def test_resolve_fills_defaults_and_rejects_unknown_paths():
    schema = {"a": ("int", 1), "grp": {"x": ("float", 0.5), "y": ("str", "s")}}
    out = _resolve({"grp": {"x": 2}}, schema)
    assert out == {"a": 1, "grp": {"x": 2.0, "y": "s"}}
    with pytest.raises(ConfigError, match="unknown config key: grp.z"):
        _resolve({"grp": {"z": 1}}, schema)
    with pytest.raises(ConfigError, match="unknown config key: b"):
        _resolve({"b": 1}, schema)
    with pytest.raises(ConfigError, match="grp.x: must be a number"):
        _resolve({"grp": {"x": "nope"}}, schema)
    with pytest.raises(ConfigError, match="a: must be an integer"):
        _resolve({"a": True}, schema)  # booleans are not integers here


def test_unknown_key_exit_code(tmp_path):
    assert run(tmp_path, "oosp-frontier", {"lab": {"nope": 1}}) == 2


def test_bad_json_exit_code(tmp_path):
    cfg = tmp_path / "broken.json"
    cfg.write_text("{not json")
    assert main(["oosp-frontier", "--config", str(cfg)]) == 2


def test_missing_command_exit_code(capsys):
    assert main([]) == 2


def test_domain_validation_maps_to_config_error(tmp_path):
    assert run(tmp_path, "oosp-frontier", {"lab": {"sigma2": -1.0}}) == 2


def test_flags_override_config(tmp_path):
    cfg = {"seed": 5, "lam_prime_values": [1.0], "alpha_values": [1.0]}
    assert run(tmp_path, "oosp-frontier", cfg, extra=["--seed", "9"]) == 0
    resolved = json.loads((tmp_path / "out" / "oosp-frontier-config.json").read_text())
    assert resolved["seed"] == 9
    first_line = (tmp_path / "out" / "oosp-frontier.csv").read_text().splitlines()[0]
    assert first_line.endswith("seed=9")


def test_resolved_config_copy_written(tmp_path):
    assert run(tmp_path, "strategies-1d", {"grid_points": 11}) == 0
    resolved = json.loads((tmp_path / "out" / "strategies-1d-config.json").read_text())
    assert resolved["grid_points"] == 11
    assert resolved["lab"]["n_obs"] == 140  # defaults recorded too


def test_rerun_is_bit_identical(tmp_path):
    cfg = {"grid_points": 21, "seed": 3}
    assert run(tmp_path, "strategies-1d", cfg) == 0
    first = (tmp_path / "out" / "strategies-1d.csv").read_bytes()
    assert run(tmp_path, "strategies-1d", cfg) == 0
    assert (tmp_path / "out" / "strategies-1d.csv").read_bytes() == first


# ---------------------------------------------------------------------------
# strategies-1d


def test_strategies_1d_columns(tmp_path):
    assert run(tmp_path, "strategies-1d", {"grid_points": 41, "alpha": 0.3}) == 0
    header, rows = read_csv(tmp_path / "out" / "strategies-1d.csv")
    assert header == ["mu_hat", "plugin", "ua_entropic", "ua_cvar", "oracle"]
    data = np.array(rows, dtype=float)
    mu_hat, plugin, ent, cvar, oracle = data.T
    # plug-in column is exactly linear in mu_hat
    slope = 1.0 / (P0.lam * P0.sigma2)
    np.testing.assert_allclose(plugin, slope * mu_hat, rtol=1e-12)
    # entropic column is a constant shrink of the plug-in column
    shrink = ent[mu_hat != 0] / plugin[mu_hat != 0]
    np.testing.assert_allclose(shrink, shrink[0], rtol=1e-12)
    assert 0.0 < shrink[0] < 1.0
    # CVaR column vanishes on a nonempty symmetric threshold interval
    inside = np.abs(mu_hat) < 1.1589 * math.sqrt(P0.sigma2 / P0.n_obs)
    assert inside.any()
    assert np.all(cvar[inside] == 0.0)
    assert np.all(cvar[~inside] != 0.0)
    # oracle column is constant
    assert np.unique(oracle).size == 1


# ---------------------------------------------------------------------------
# oosp-frontier


def test_oosp_frontier_values(tmp_path):
    cfg = {"lam_prime_values": [0.0, 100.0], "alpha_values": [0.25, 1.0]}
    assert run(tmp_path, "oosp-frontier", cfg) == 0
    header, rows = read_csv(tmp_path / "out" / "oosp-frontier.csv")
    assert header[:3] == ["family", "aversion", "oosp_ua"]
    assert [r[0] for r in rows] == ["entropic", "entropic", "cvar", "cvar"]
    plug = float(rows[0][3])
    mix = float(rows[0][4])
    assert plug == pytest.approx(oosp_plugin(P0), rel=1e-12)
    assert mix == pytest.approx(oosp_mixture(P0), rel=1e-12)
    assert plug < 0 and mix < 0
    # no-aversion ends collapse to the plug-in value
    assert float(rows[0][2]) == pytest.approx(plug, rel=1e-10)
    assert float(rows[3][2]) == pytest.approx(plug, rel=1e-10)


# ---------------------------------------------------------------------------
# optimal-aversion


def test_optimal_aversion_trend(tmp_path):
    # interior of the aversion grids: the trend is strict in both measures
    cfg = {"sweep": "mu", "values": [5e-4, 7.84e-4, 2e-3]}
    assert run(tmp_path, "optimal-aversion", cfg) == 0
    header, rows = read_csv(tmp_path / "out" / "optimal-aversion.csv")
    lam_primes = [float(r[2]) for r in rows]
    alphas = [float(r[4]) for r in rows]
    # lower drift -> more robustification: lam' decreasing in mu, alpha increasing
    assert lam_primes[0] > lam_primes[1] > lam_primes[2]
    assert alphas[0] < alphas[1] < alphas[2]


def test_optimal_aversion_zero_signal_hits_grid_bounds(tmp_path):
    cfg = {"sweep": "mu", "values": [1e-7]}
    assert run(tmp_path, "optimal-aversion", cfg) == 0
    _, rows = read_csv(tmp_path / "out" / "optimal-aversion.csv")
    assert float(rows[0][2]) == pytest.approx(1e6)     # top of the lam' grid
    assert float(rows[0][4]) == pytest.approx(1e-4)    # bottom of the alpha grid
    with pytest.raises(SystemExit):
        main(["optimal-aversion", "--badflag"])


def test_optimal_aversion_rejects_unknown_sweep(tmp_path):
    assert run(tmp_path, "optimal-aversion", {"sweep": "lam"}) == 2


# ---------------------------------------------------------------------------
# bootstrap-compare


def test_bootstrap_compare_schema_and_consistency(tmp_path):
    cfg = {"model_count": 300, "draws": 600,
           "lam_prime_values": [0.0, 50.0], "alpha_values": [0.5, 1.0],
           "seed": 2}
    assert run(tmp_path, "bootstrap-compare", cfg) == 0
    header, rows = read_csv(tmp_path / "out" / "bootstrap-compare.csv")
    assert header == ["family", "aversion", "oosp_analytic", "oosp_mc",
                      "mc_std_error"]
    # the mean outer measure is reached from both families: lam'=0 == alpha=1
    ent0 = [r for r in rows if r[0] == "entropic" and float(r[1]) == 0.0][0]
    cv1 = [r for r in rows if r[0] == "cvar" and float(r[1]) == 1.0][0]
    assert float(ent0[3]) == pytest.approx(float(cv1[3]), rel=1e-9)
    assert all(float(r[4]) > 0 for r in rows)


# ---------------------------------------------------------------------------
# var-adjust


def test_var_adjust_anchors(tmp_path):
    s2n = P0.sigma2 / P0.n_obs
    cfg = {"tau2_values": [0.0, s2n, 1e6]}
    assert run(tmp_path, "var-adjust", cfg) == 0
    _, rows = read_csv(tmp_path / "out" / "var-adjust.csv")
    vals = {float(r[0]): float(r[1]) for r in rows}
    plug = float(rows[0][2])
    mix = float(rows[0][3])
    assert vals[0.0] == plug                               # tau2=0 is the plug-in
    assert vals[s2n] == pytest.approx(mix, rel=1e-12)      # tau2=s2/n is the mixture
    assert abs(vals[1e6]) < 1e-12                          # huge tau2 kills the action


def test_var_adjust_default_grid_contains_anchor(tmp_path):
    assert run(tmp_path, "var-adjust") == 0
    _, rows = read_csv(tmp_path / "out" / "var-adjust.csv")
    taus = [float(r[0]) for r in rows]
    assert 0.0 in taus
    assert any(t == pytest.approx(P0.sigma2 / P0.n_obs, rel=1e-12) for t in taus)


# ---------------------------------------------------------------------------
# highdim


def test_highdim_claims_small_instance(tmp_path):
    cfg = {"instance": {"dimension": 8, "n_obs": 30},
           "alpha_values": [0.5, 1.0], "model_counts": [20, 100],
           "sgd": {"steps": 150, "step_size": 0.1, "tail_steps": 100}}
    assert run(tmp_path, "highdim", cfg) == 0
    header, rows = read_csv(tmp_path / "out" / "highdim.csv")
    assert header == ["method", "alpha", "model_count", "relative_distance"]
    dist = {(r[0], float(r[1]), int(r[2])): float(r[3]) for r in rows}
    # more models per step -> closer to the closed form
    assert dist[("cvar_sgd", 0.5, 100)] < dist[("cvar_sgd", 0.5, 20)]
    # alpha=1 coincides exactly with the independent plain-SGD reference
    assert dist[("plain_sgd", 1.0, 20)] == dist[("cvar_sgd", 1.0, 20)]
    assert dist[("plain_sgd", 1.0, 100)] == dist[("cvar_sgd", 1.0, 100)]


def test_highdim_below_hinge_threshold_is_config_error(tmp_path):
    # signal below kappa_alpha: the closed-form action is exactly zero
    cfg = {"instance": {"dimension": 4, "signal": 0.5},
           "alpha_values": [0.1], "model_counts": [10],
           "sgd": {"steps": 5, "step_size": 0.1, "tail_steps": 0}}
    assert run(tmp_path, "highdim", cfg) == 2


# ---------------------------------------------------------------------------
# hedge


def test_hedge_outputs(tmp_path):
    cfg = {"problem": {"horizon": 12, "reset_period": 4, "hidden": [8]},
           "bundle_size": 8, "model_count": 4, "alphas": [0.5],
           "steps": 25, "tail_steps": 5, "test_models": 5,
           "paths_per_model": 16, "seed": 1}
    assert run(tmp_path, "hedge", cfg) == 0
    out = tmp_path / "out"
    header, rows = read_csv(out / "hedge-summary.csv")
    assert header == ["method", "mean_objective", "std_objective", "rejections"]
    assert [r[0] for r in rows] == ["zero", "plugin", "ua_0.5", "oracle"]
    means = {r[0]: float(r[1]) for r in rows}
    assert all(v > 0 and math.isfinite(v) for v in means.values())
    # even a tiny training run beats the do-nothing baseline
    assert means["plugin"] < means["zero"]
    th, trows = read_csv(out / "hedge-trace-ua_0.5.csv")
    assert th[0] == "step" and len(trows) == 30
    # retained-set memory equals the drawn k on every step
    assert all(r[1] == r[5] for r in trows)
    eh, erows = read_csv(out / "hedge-eval-plugin.csv")
    assert eh[0] == "draw" and len(erows) == 5


def test_hedge_no_oracle(tmp_path):
    cfg = {"problem": {"horizon": 6, "reset_period": 2, "hidden": [4]},
           "bundle_size": 4, "model_count": 2, "alphas": [1.0],
           "steps": 4, "tail_steps": 0, "test_models": 2,
           "paths_per_model": 8, "include_oracle": False}
    assert run(tmp_path, "hedge", cfg) == 0
    out = tmp_path / "out"
    _, rows = read_csv(out / "hedge-summary.csv")
    assert [r[0] for r in rows] == ["zero", "plugin", "ua_1"]
    assert not (out / "hedge-eval-oracle.csv").exists()


def test_hedge_bad_mode_exit_code(tmp_path):
    cfg = {"dist": {"mode": "cauchy"}, "steps": 1, "tail_steps": 0,
           "problem": {"horizon": 4, "reset_period": 2, "hidden": [4]},
           "bundle_size": 2, "model_count": 2, "test_models": 2,
           "paths_per_model": 4}
    assert run(tmp_path, "hedge", cfg) == 2


# ---------------------------------------------------------------------------
# ingest-returns


def test_ingest_returns_summary(tmp_path, capsys):
    data = tmp_path / "r.csv"
    data.write_text("returns\n0.01\n0.02\n-0.005\n")
    assert run(tmp_path, "ingest-returns", {"path": str(data)}) == 0
    header, rows = read_csv(tmp_path / "out" / "returns-summary.csv")
    assert header == ["n_obs", "mu_hat", "sigma2_hat_uncentered",
                      "sigma2_hat_centered"]
    row = rows[0]
    assert int(row[0]) == 3
    x = np.array([0.01, 0.02, -0.005])
    assert float(row[1]) == pytest.approx(x.mean(), rel=1e-15)
    assert float(row[2]) == pytest.approx((x**2).sum() / 2, rel=1e-15)
    assert float(row[3]) == pytest.approx(x.var(ddof=1), rel=1e-15)
    _, vrows = read_csv(tmp_path / "out" / "returns-validated.csv")
    assert [float(r[0]) for r in vrows] == list(x)
    assert "n_obs=3" in capsys.readouterr().out


def test_ingest_returns_malformed_row_reports_line(tmp_path, capsys):
    data = tmp_path / "bad.csv"
    data.write_text("0.01\nbanana\n")
    assert run(tmp_path, "ingest-returns", {"path": str(data)}) == 2
    assert "line 2" in capsys.readouterr().err


def test_ingest_returns_empty_file(tmp_path):
    data = tmp_path / "empty.csv"
    data.write_text("")
    assert run(tmp_path, "ingest-returns", {"path": str(data)}) == 2


def test_ingest_returns_missing_file_exit_code(tmp_path, capsys):
    missing = tmp_path / "nowhere.csv"
    assert run(tmp_path, "ingest-returns", {"path": str(missing)}) == 2
    assert "config error" in capsys.readouterr().err


def test_ingest_returns_missing_path_key(tmp_path, capsys):
    assert run(tmp_path, "ingest-returns", {}) == 2
    assert "path" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# svg plots


def test_svg_outputs_deterministic(tmp_path):
    pytest.importorskip("matplotlib")
    cfg = {"grid_points": 11}
    assert run(tmp_path, "strategies-1d", cfg, extra=["--svg"]) == 0
    svg = tmp_path / "out" / "strategies-1d.svg"
    first = svg.read_bytes()
    assert first.startswith(b"<?xml")
    assert run(tmp_path, "strategies-1d", cfg, extra=["--svg"]) == 0
    assert svg.read_bytes() == first
