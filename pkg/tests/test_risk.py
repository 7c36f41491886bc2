"""Risk functional tests: frozen values, law consistency, order/translation properties."""

import itertools

import numpy as np
import pytest

from uamark.risk import (
    RiskAversion,
    Sample,
    cvar_lower_mean,
    cvar_normal,
    cvar_tail_coefficient,
    entropic,
    mean_variance,
    value_at_risk,
)

# Frozen anchors, mpmath at 30 digits.
ENTR_TWO_POINT = 0.37988549304172248  # -log((1 + e^{-1})/2)
KAPPA_HALF = 0.79788456080286536  # pdf(quantile(0.5)) / 0.5 = sqrt(2/pi)
KAPPA_015 = 1.5543918350245485


def unif(values):
    return Sample(np.asarray(values, dtype=float))


def test_entropic_constant_and_zero_aversion():
    s = unif([3.0, 3.0, 3.0])
    assert entropic(s, 2.5) == pytest.approx(3.0, abs=1e-12)
    t = unif([-1.0, 0.5, 4.0])
    assert entropic(t, 0.0) == pytest.approx(np.mean([-1.0, 0.5, 4.0]), abs=1e-14)
    with pytest.raises(ValueError):
        entropic(t, -0.1)


def test_entropic_two_point_frozen():
    assert entropic(unif([0.0, 1.0]), 1.0) == pytest.approx(ENTR_TWO_POINT, rel=1e-14)


def test_entropic_extreme_aversion_no_overflow():
    # log-sum-exp shift keeps huge aversions finite; limit is the minimum
    s = unif([-2.0, 0.0, 5.0])
    v = entropic(s, 5000.0)
    assert np.isfinite(v)
    assert v == pytest.approx(-2.0, abs=1e-2)


def test_entropic_normal_consistency():
    # N(0.1, 0.2^2) with lam=2: law value 0.1 - 2*0.04/2 = 0.06
    rng = np.random.default_rng(314)
    x = 0.1 + 0.2 * rng.standard_normal(1_000_000)
    lam = 2.0
    est = entropic(Sample(x), lam)
    # delta-method standard error of -(1/lam) log mean(exp(-lam X))
    e = np.exp(-lam * (x - x.mean()))
    se = e.std() / (lam * e.mean() * np.sqrt(x.size))
    assert abs(est - 0.06) <= 3.0 * se
    mv = mean_variance(Sample(x), lam)
    assert abs(est - mv) <= 3.0 * se


def test_mean_variance_values():
    s = unif([-1.0, 1.0])
    assert mean_variance(s, 2.0) == pytest.approx(-1.0, abs=1e-14)  # 0 - 1*1
    assert mean_variance(s, 0.0) == pytest.approx(0.0, abs=1e-14)
    assert mean_variance(unif([4.0]), 3.0) == pytest.approx(4.0, abs=1e-14)


def test_mean_variance_weighted():
    s = Sample(np.array([0.0, 10.0]), weights=np.array([0.9, 0.1]))
    # mean 1, second moment 10 => var 9
    assert mean_variance(s, 2.0) == pytest.approx(1.0 - 9.0, abs=1e-12)


def test_value_at_risk_quartet():
    s = unif([1.0, 2.0, 3.0, 4.0])
    assert value_at_risk(s, 0.5) == pytest.approx(2.0)
    assert value_at_risk(s, 0.25) == pytest.approx(1.0)
    assert value_at_risk(s, 1e-9) == pytest.approx(1.0)
    assert value_at_risk(s, 0.999999) == pytest.approx(4.0)
    for bad in (0.0, 1.0, -0.3, 1.7):
        with pytest.raises(ValueError):
            value_at_risk(s, bad)


def test_value_at_risk_weighted_matches_uniform():
    vals = np.array([5.0, -2.0, 0.5, 3.0])
    s_u = unif(vals)
    s_w = Sample(vals, weights=np.full(4, 0.25))
    for g in (0.2, 0.4, 0.5, 0.8):
        assert value_at_risk(s_w, g) == pytest.approx(value_at_risk(s_u, g))


def test_cvar_lower_mean_quartet():
    s = unif([1.0, 2.0, 3.0, 4.0])
    assert cvar_lower_mean(s, 0.5) == pytest.approx(1.5)
    assert cvar_lower_mean(s, 1.0) == pytest.approx(2.5)  # full mean
    assert cvar_lower_mean(s, 1e-9) == pytest.approx(1.0)  # essentially the min
    assert cvar_lower_mean(s, 0.25) == pytest.approx(1.0)


def test_cvar_lower_mean_fractional_atom():
    # weighted samples split the boundary atom: mass 0.25+0.25 from {1,2}
    # plus 0.1 of the atom at 3; unweighted samples use whole-atom ceil(alpha*n)
    vals = np.array([1.0, 2.0, 3.0, 4.0])
    s_w = Sample(vals, weights=np.full(4, 0.25))
    expect = (0.25 * 1.0 + 0.25 * 2.0 + 0.1 * 3.0) / 0.6
    assert cvar_lower_mean(s_w, 0.6) == pytest.approx(expect, rel=1e-12)
    assert cvar_lower_mean(unif(vals), 0.6) == pytest.approx(2.0, rel=1e-12)


def test_cvar_lower_mean_weighted_fractional():
    s = Sample(np.array([0.0, 10.0]), weights=np.array([0.3, 0.7]))
    # alpha=0.5: all of the 0.3 atom at 0, then 0.2 of the atom at 10
    assert cvar_lower_mean(s, 0.5) == pytest.approx((0.3 * 0.0 + 0.2 * 10.0) / 0.5)


def test_cvar_exhaustive_small_samples():
    # brute force at alpha = j/n for all n <= 12: mean of j smallest
    rng = np.random.default_rng(99)
    for n in range(1, 13):
        vals = rng.standard_normal(n)
        srt = np.sort(vals)
        s = Sample(vals)
        for j in range(1, n + 1):
            expect = srt[:j].mean()
            assert cvar_lower_mean(s, j / n) == pytest.approx(expect, rel=1e-12), (n, j)


def test_cvar_tail_coefficient_values():
    assert cvar_tail_coefficient(1.0) == 0.0
    assert cvar_tail_coefficient(0.5) == pytest.approx(KAPPA_HALF, rel=1e-13)
    assert cvar_tail_coefficient(0.15) == pytest.approx(KAPPA_015, rel=1e-13)
    arr = cvar_tail_coefficient(np.array([0.15, 0.5, 1.0]))
    assert arr == pytest.approx([KAPPA_015, KAPPA_HALF, 0.0], rel=1e-12)
    with pytest.raises(ValueError):
        cvar_tail_coefficient(0.0)
    with pytest.raises(ValueError):
        cvar_tail_coefficient(1.2)


def test_cvar_normal_values():
    assert cvar_normal(0.0, 1.0, 0.5) == pytest.approx(-KAPPA_HALF, rel=1e-13)
    assert cvar_normal(0.0, 1.0, 0.15) == pytest.approx(-KAPPA_015, rel=1e-13)
    assert cvar_normal(2.0, 0.0, 0.3) == 2.0
    assert cvar_normal(1.5, 3.0, 1.0) == 1.5
    assert cvar_normal(1.0, 2.0, 0.5) == pytest.approx(1.0 - 2.0 * KAPPA_HALF, rel=1e-12)


def test_cvar_normal_matches_sampling():
    # 1e6 draws of N(0.3, 0.8^2), alpha=0.25: sample tail mean within 3 SE
    rng = np.random.default_rng(2718)
    x = 0.3 + 0.8 * rng.standard_normal(1_000_000)
    alpha = 0.25
    k = int(np.ceil(alpha * x.size))
    tail = np.sort(x)[:k]
    se = tail.std(ddof=1) / np.sqrt(k)
    assert abs(cvar_normal(0.3, 0.8, alpha) - tail.mean()) <= 3.0 * se


def _random_sample(rng):
    n = int(rng.integers(1, 40))
    vals = rng.standard_normal(n) * rng.uniform(0.5, 3.0)
    if rng.random() < 0.5:
        w = rng.uniform(0.1, 1.0, n)
        return Sample(vals, weights=w / w.sum())
    return Sample(vals)


def test_translation_equivariance():
    # measure(X + c) = measure(X) + c, 100 random cases per functional
    rng = np.random.default_rng(1234)
    for _ in range(100):
        s = _random_sample(rng)
        c = float(rng.uniform(-5.0, 5.0))
        shifted = Sample(s.values + c, weights=s.weights)
        lam = float(rng.uniform(0.0, 4.0))
        alpha = float(rng.uniform(0.05, 1.0))
        gamma = float(rng.uniform(0.05, 0.95))
        assert entropic(shifted, lam) == pytest.approx(entropic(s, lam) + c, abs=1e-10)
        assert mean_variance(shifted, lam) == pytest.approx(
            mean_variance(s, lam) + c, abs=1e-10
        )
        assert cvar_lower_mean(shifted, alpha) == pytest.approx(
            cvar_lower_mean(s, alpha) + c, abs=1e-10
        )
        assert value_at_risk(shifted, gamma) == pytest.approx(
            value_at_risk(s, gamma) + c, abs=1e-10
        )


def test_monotonicity():
    # pointwise-dominating samples never score lower
    rng = np.random.default_rng(555)
    for _ in range(100):
        s = _random_sample(rng)
        bump = np.abs(rng.standard_normal(s.size)) * rng.uniform(0.0, 2.0)
        better = Sample(s.values + bump, weights=s.weights)
        lam = float(rng.uniform(0.0, 4.0))
        alpha = float(rng.uniform(0.05, 1.0))
        assert entropic(better, lam) >= entropic(s, lam) - 1e-12
        assert cvar_lower_mean(better, alpha) >= cvar_lower_mean(s, alpha) - 1e-12
        assert value_at_risk(better, 0.5) >= value_at_risk(s, 0.5) - 1e-12


def test_tail_functionals_bounded_by_mean():
    rng = np.random.default_rng(808)
    for _ in range(50):
        s = _random_sample(rng)
        w = s.effective_weights()
        mean = float(w @ s.values)
        assert entropic(s, float(rng.uniform(0.0, 5.0))) <= mean + 1e-12
        assert cvar_lower_mean(s, float(rng.uniform(0.05, 1.0))) <= mean + 1e-12


def test_cvar_monotone_in_alpha():
    s = unif([-3.0, -1.0, 0.5, 2.0, 4.0])
    alphas = np.linspace(0.05, 1.0, 25)
    vals = [cvar_lower_mean(s, a) for a in alphas]
    assert np.all(np.diff(vals) >= -1e-12)


def test_entropic_monotone_in_aversion():
    s = unif([-3.0, -1.0, 0.5, 2.0, 4.0])
    lams = np.linspace(0.0, 8.0, 30)
    vals = [entropic(s, lam) for lam in lams]
    assert np.all(np.diff(vals) <= 1e-12)


def test_sample_validation():
    with pytest.raises(ValueError):
        Sample(np.array([]))
    with pytest.raises(ValueError):
        Sample(np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        Sample(np.array([[1.0, 2.0]]))
    with pytest.raises(ValueError):
        Sample(np.array([1.0, 2.0]), weights=np.array([0.5]))
    with pytest.raises(ValueError):
        Sample(np.array([1.0, 2.0]), weights=np.array([-0.1, 1.1]))
    with pytest.raises(ValueError):
        Sample(np.array([1.0, 2.0]), weights=np.array([0.6, 0.6]))  # off by 0.2
    # near-normalized weights are accepted and renormalized
    s = Sample(np.array([1.0, 2.0]), weights=np.array([0.5 + 2e-10, 0.5 - 2e-10]))
    assert s.effective_weights().sum() == pytest.approx(1.0, abs=1e-15)


def test_risk_aversion_validation():
    r = RiskAversion(lam=0.84, lam_prime=117.6, alpha=0.15)
    assert r.lam == 0.84
    with pytest.raises(ValueError):
        RiskAversion(lam=0.0)
    with pytest.raises(ValueError):
        RiskAversion(lam=1.0, lam_prime=-0.5)
    with pytest.raises(ValueError):
        RiskAversion(lam=1.0, alpha=0.0)
    with pytest.raises(ValueError):
        RiskAversion(lam=1.0, alpha=1.5)


def test_cvar_permutation_invariance():
    vals = np.array([3.0, -2.0, 7.0, 0.0, 1.5])
    s = unif(vals)
    for perm in itertools.permutations(range(5)):
        sp = unif(vals[list(perm)])
        assert cvar_lower_mean(sp, 0.4) == pytest.approx(cvar_lower_mean(s, 0.4))
        assert value_at_risk(sp, 0.4) == pytest.approx(value_at_risk(s, 0.4))
