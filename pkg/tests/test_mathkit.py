"""Tests for the numerical kernel: normal functions, Cholesky, counter-based RNG."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from uamark.mathkit import (
    FactorizationError,
    Rng,
    SpdMatrix,
    cholesky,
    erf,
    erfc,
    mvn_sample,
    norm_cdf,
    norm_pdf,
    norm_quantile,
)

# Frozen anchors, mpmath at 30 digits.
PDF_0 = 0.39894228040143268
PDF_1 = 0.24197072451914335
CDF_15 = 0.93319279873114193
Q_975 = 1.9599639845400542
ERF_05 = 0.52049987781304654
ERF_1 = 0.84270079294971487
ERF_2 = 0.99532226501895273
ERFC_3 = 2.2090496998585441e-05


def test_norm_pdf_anchors():
    assert norm_pdf(0.0) == pytest.approx(PDF_0, rel=1e-14)
    assert norm_pdf(1.0) == pytest.approx(PDF_1, rel=1e-14)
    assert norm_pdf(-1.0) == norm_pdf(1.0)
    assert norm_pdf(40.0) == 0.0


def test_norm_cdf_anchors():
    assert norm_cdf(0.0) == pytest.approx(0.5, abs=1e-16)
    assert norm_cdf(1.5) == pytest.approx(CDF_15, rel=1e-14)
    assert norm_cdf(-8.0) + norm_cdf(8.0) == pytest.approx(1.0, abs=1e-15)


def test_norm_cdf_monotone_grid():
    x = np.linspace(-8.0, 8.0, 10_000)
    c = norm_cdf(x)
    assert np.all(np.diff(c) >= 0.0)
    assert 0.0 <= c[0] and c[-1] <= 1.0


def test_norm_quantile_anchors():
    assert norm_quantile(0.5) == pytest.approx(0.0, abs=1e-15)
    assert norm_quantile(0.975) == pytest.approx(Q_975, rel=1e-12)
    assert norm_quantile(0.025) == pytest.approx(-Q_975, rel=1e-12)


def test_quantile_cdf_roundtrip():
    # contract: |cdf(quantile(p)) - p| <= 1e-10 across [1e-8, 1 - 1e-8]
    p = np.concatenate(
        [
            np.logspace(-8, -1, 200),
            np.linspace(0.1, 0.9, 200),
            1.0 - np.logspace(-8, -1, 200),
        ]
    )
    back = norm_cdf(norm_quantile(p))
    assert np.max(np.abs(back - p)) <= 1e-10


def test_norm_quantile_rejects_boundary():
    for bad in (0.0, 1.0, -0.2, 1.3, np.nan):
        with pytest.raises(ValueError):
            norm_quantile(bad)
    with pytest.raises(ValueError):
        norm_quantile(np.array([0.2, 1.0]))


def test_erf_anchors_and_complement():
    assert erf(0.5) == pytest.approx(ERF_05, rel=1e-14)
    assert erf(1.0) == pytest.approx(ERF_1, rel=1e-14)
    assert erf(2.0) == pytest.approx(ERF_2, rel=1e-14)
    assert erfc(3.0) == pytest.approx(ERFC_3, rel=1e-13)
    x = np.linspace(-1.0, 1.0, 501)
    npt.assert_allclose(erfc(x), 1.0 - erf(x), atol=1e-14)
    # independent route: C library implementation
    for v in np.linspace(-3, 3, 61):
        assert erf(float(v)) == pytest.approx(math.erf(v), abs=1e-14)


def test_cholesky_known_factor():
    # hand algebra: [[4,2],[2,3]] = L L^T with L = [[2,0],[1,sqrt(2)]]
    lower = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    npt.assert_allclose(lower, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], rtol=1e-14)


def test_cholesky_identity():
    npt.assert_allclose(cholesky(np.eye(5)), np.eye(5), atol=0.0)


def test_cholesky_matches_numpy():
    rng = np.random.default_rng(7)
    for _ in range(25):
        d = int(rng.integers(1, 8))
        a = rng.standard_normal((d, d))
        m = a @ a.T + d * np.eye(d)
        npt.assert_allclose(cholesky(m), np.linalg.cholesky(m), rtol=1e-9, atol=1e-12)


def test_cholesky_roundtrip_property():
    # 100 random lower-triangular factors; reconstruct within 1e-10
    rng = np.random.default_rng(11)
    for _ in range(100):
        d = int(rng.integers(1, 7))
        lower = np.tril(rng.uniform(-1.0, 1.0, (d, d)))
        lower[np.diag_indices(d)] = rng.uniform(0.5, 2.0, d)
        npt.assert_allclose(cholesky(lower @ lower.T), lower, rtol=1e-10, atol=1e-12)


def test_cholesky_reconstruction_tolerance():
    rng = np.random.default_rng(13)
    a = rng.standard_normal((40, 40))
    m = a @ a.T + 40 * np.eye(40)
    lower = cholesky(m)
    rel = np.linalg.norm(lower @ lower.T - m) / np.linalg.norm(m)
    assert rel <= 1e-10


def test_cholesky_rejects_indefinite():
    with pytest.raises(FactorizationError) as exc:
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))  # eigenvalues -1, 3
    assert exc.value.pivot_index == 1
    assert "pivot index 1" in str(exc.value)

    with pytest.raises(FactorizationError) as exc:
        cholesky(np.array([[-1.0, 0.0], [0.0, 1.0]]))
    assert exc.value.pivot_index == 0


def test_cholesky_rejects_bad_shapes():
    with pytest.raises(ValueError):
        cholesky(np.ones((2, 3)))
    with pytest.raises(ValueError):
        cholesky(np.array([[1.0, np.nan], [np.nan, 1.0]]))


def test_spd_matrix_solve_and_whiten():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((6, 6))
    m = a @ a.T + 6 * np.eye(6)
    spd = SpdMatrix(m)
    b = rng.standard_normal(6)
    npt.assert_allclose(spd.solve(b), np.linalg.solve(m, b), rtol=1e-10)
    w = spd.whiten(b)
    # whiten(b) solves L w = b
    npt.assert_allclose(spd.chol_lower @ w, b, rtol=1e-10)
    assert spd.dim == 6


def test_spd_matrix_rejects_asymmetric():
    with pytest.raises(ValueError):
        SpdMatrix(np.array([[1.0, 0.5], [0.2, 1.0]]))


def test_rng_reproducible_streams():
    # identical key/counter => bitwise-equal draws, 1e5 of them
    a = Rng(seed=123, stream=7).generator().standard_normal(100_000)
    b = Rng(seed=123, stream=7).generator().standard_normal(100_000)
    assert np.array_equal(a, b)


def test_rng_streams_differ():
    base = Rng(seed=123)
    x = base.substream(1).generator().standard_normal(1000)
    y = base.substream(2).generator().standard_normal(1000)
    z = Rng(seed=123, stream=1).generator().standard_normal(1000)
    assert not np.array_equal(x, y)
    assert not np.array_equal(x, z)


def test_rng_substream_nesting():
    r = Rng(seed=5).substream(1, 2)
    assert r.path == (1, 2)
    deep = r.substream(3)
    assert deep.path == (1, 2, 3)
    with pytest.raises(ValueError):
        deep.substream(4)  # counter words exhausted
    with pytest.raises(ValueError):
        Rng(seed=-1)
    with pytest.raises(ValueError):
        Rng(seed=2**64)
    with pytest.raises(ValueError):
        Rng(seed=1).substream(-3)


def test_mvn_sample_moments():
    cov = np.array([[2.0, 0.6, 0.0], [0.6, 1.0, -0.3], [0.0, -0.3, 0.5]])
    mean = np.array([1.0, -2.0, 0.25])
    draws = mvn_sample(Rng(seed=42), mean, cov, 200_000)
    assert draws.shape == (200_000, 3)
    npt.assert_allclose(draws.mean(axis=0), mean, atol=0.02)
    npt.assert_allclose(np.cov(draws.T), cov, atol=0.03)


def test_mvn_sample_degenerate_and_reproducible():
    mean = np.array([3.0, -1.0])
    tiny = 1e-30 * np.eye(2)
    draws = mvn_sample(Rng(seed=9), mean, tiny, 100)
    npt.assert_allclose(draws, np.broadcast_to(mean, (100, 2)), atol=1e-12)
    again = mvn_sample(Rng(seed=9), mean, tiny, 100)
    assert np.array_equal(draws, again)


def test_mvn_sample_shape_mismatch():
    with pytest.raises(ValueError):
        mvn_sample(Rng(seed=1), np.zeros(3), np.eye(2), 10)
