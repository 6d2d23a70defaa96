from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbmsampling import fbm
from fbmsampling.errors import ConditioningError, InvalidInputError, SynthesisError


def test_covariance_basic_identities():
    t = np.array([0.3, 1.0, 2.5])
    for h in (0.1, 0.5, 0.9):
        assert np.allclose(fbm.covariance(t, t, h), t ** (2 * h))
        c = fbm.covariance_matrix(t, h)
        assert np.allclose(c, c.T)
        assert np.all(np.linalg.eigvalsh(c) > 0)
    # Brownian motion: Cov = min(t, s)
    assert np.allclose(fbm.covariance(t[:, None], t[None, :], 0.5), np.minimum.outer(t, t))
    assert fbm.covariance(0.0, 3.0, 0.3) == 0.0


def test_covariance_rejects_negative_times():
    with pytest.raises(InvalidInputError):
        fbm.covariance(-1.0, 1.0, 0.5)


@pytest.mark.parametrize("h", [0.0, 1.0, -0.2, 1.2, float("nan")])
def test_hurst_range(h):
    with pytest.raises(InvalidInputError, match="Hurst"):
        fbm.check_hurst(h)


def test_increment_autocorrelation():
    assert fbm.increment_autocorrelation(1, 0.5) == pytest.approx(0.0)
    assert fbm.increment_autocorrelation(1, 0.7) == pytest.approx(0.5 * (2**1.4 - 2))
    assert fbm.increment_autocorrelation(3, 0.3) < 0
    assert fbm.increment_autocorrelation(3, 0.8) > 0
    with pytest.raises(InvalidInputError):
        fbm.increment_autocorrelation(0, 0.5)


def test_simulate_paths_shape_and_origin():
    p = fbm.simulate_paths(0.3, 2.0, 64, 5, seed=1)
    assert p.shape == (5, 65)
    assert np.all(p[:, 0] == 0.0)
    assert np.all(np.isfinite(p))


def test_simulate_paths_deterministic_and_sliceable():
    a = fbm.simulate_paths(0.7, 5.0, 128, 9, seed=3, stream=2)
    b = fbm.simulate_paths(0.7, 5.0, 128, 9, seed=3, stream=2)
    assert np.array_equal(a, b)
    # any sub-range of path indices reproduces the same rows
    c = fbm.simulate_paths(0.7, 5.0, 128, 4, seed=3, stream=2, start=3)
    assert np.array_equal(a[3:7], c)
    d = fbm.simulate_paths(0.7, 5.0, 128, 9, seed=4, stream=2)
    assert not np.allclose(a, d)
    e = fbm.simulate_paths(0.7, 5.0, 128, 9, seed=3, stream=5)
    assert not np.allclose(a, e)


def test_simulate_path_object_and_csv():
    path = fbm.simulate_path(0.4, 1.0, 16, seed=2, index=5)
    assert path.dt == pytest.approx(1 / 16)
    assert path.times[-1] == pytest.approx(1.0)
    lines = path.to_csv().splitlines()
    assert lines[0] == "time,value"
    assert len(lines) == 18
    row = np.array(fbm.simulate_paths(0.4, 1.0, 16, 1, seed=2, start=5)[0])
    assert np.array_equal(path.values, row)


def test_single_precision_tracks_double():
    d = fbm.simulate_paths(0.6, 20.0, 256, 4, seed=0, precision="double")
    s = fbm.simulate_paths(0.6, 20.0, 256, 4, seed=0, precision="single")
    assert s.dtype == np.float64
    assert np.std(s) == pytest.approx(np.std(d), rel=0.5)


def test_invalid_synthesis_requests():
    with pytest.raises(InvalidInputError):
        fbm.simulate_paths(0.5, 1.0, 1)
    with pytest.raises(InvalidInputError):
        fbm.simulate_paths(0.5, 0.0, 16)
    with pytest.raises(SynthesisError):
        fbm.simulate_paths(0.5, 1.0, fbm.MAX_GRID_N * 2)
    with pytest.raises(InvalidInputError):
        fbm.simulate_paths(0.5, 1.0, 16, precision="half")


@pytest.mark.parametrize("h", [0.2, 0.5, 0.8])
@pytest.mark.parametrize("method", ["circulant", "cholesky"])
def test_empirical_covariance_matches_theory(h, method):
    """Sample covariances at a few grid times lie within 3 standard errors."""
    m, n, t_end = 4000, 64 if method == "cholesky" else 256, 4.0
    paths = fbm.simulate_paths(h, t_end, n, m, seed=11, method=method)
    idx = np.array([n // 4, n // 2, n])
    t = idx * t_end / n
    x = paths[:, idx]
    theory = fbm.covariance(t[:, None], t[None, :], h)
    emp = x.T @ x / m
    # standard error of a mean of products x_i x_j (zero-mean Gaussian)
    se = np.sqrt((np.diag(theory)[:, None] * np.diag(theory)[None, :] + theory**2) / m)
    assert np.all(np.abs(emp - theory) < 3.5 * se)


def test_increments_stationary_correlation():
    h, n, m = 0.75, 256, 3000
    paths = fbm.simulate_paths(h, float(n), n, m, seed=5)
    inc = np.diff(paths, axis=1)
    lag1 = np.mean(inc[:, :-1] * inc[:, 1:])
    assert lag1 == pytest.approx(fbm.increment_autocorrelation(1, h), abs=0.02)


def test_simulate_at_times_variance():
    times = [0.5, 1.7, 3.0]
    draws = fbm.simulate_at_times(times, 0.3, 5000, seed=2)
    assert draws.shape == (5000, 3)
    v = draws.var(axis=0)
    assert np.allclose(v, np.array(times) ** 0.6, rtol=0.08)


# ---------------------------------------------------------------------------
# conditioning


def test_predictor_interpolates_samples():
    times = np.array([1.0, 2.5, 4.0])
    values = np.array([0.3, -0.2, 1.1])
    cond = fbm.ConditioningSet(times, values)
    assert fbm.predict(cond, 4.0, 0.35) == pytest.approx(1.1, abs=1e-10)


def test_brownian_predictor_is_last_value():
    cond = fbm.ConditioningSet([1.0, 2.0, 3.0], [0.5, -1.0, 2.0])
    assert np.allclose(fbm.predict(cond, np.array([3.0, 5.0, 9.0]), 0.5), 2.0)


def test_predict_rejects_earlier_time():
    cond = fbm.ConditioningSet([1.0, 2.0], [0.0, 1.0])
    with pytest.raises(InvalidInputError):
        fbm.predict(cond, 1.5, 0.5)


def test_conditioning_set_validation():
    with pytest.raises(InvalidInputError):
        fbm.ConditioningSet([], [])
    with pytest.raises(InvalidInputError):
        fbm.ConditioningSet([2.0, 1.0], [0.0, 0.0])
    with pytest.raises(InvalidInputError):
        fbm.ConditioningSet([1.0], [0.0, 1.0])


def test_singular_conditioning_raises():
    with pytest.raises(ConditioningError):
        fbm.conditioning_weights([1.0, 1.0 + 1e-13], 2.0, 0.5)
    with pytest.raises(ConditioningError):
        fbm.two_sample_coefficients(1.0, 1.0, 2.0, 0.4)


def test_one_sample_weight_closed_form():
    # single sample: w = Cov(B_t, B_tau) / tau^{2H}
    w = fbm.conditioning_weights([2.0], [3.0], 0.3)
    assert w[0, 0] == pytest.approx(fbm.covariance(3.0, 2.0, 0.3) / 2.0**0.6)


@settings(max_examples=60, deadline=None)
@given(
    h=st.floats(0.05, 0.7),
    gaps=st.lists(st.floats(0.05, 5.0), min_size=4, max_size=4),
)
def test_closed_form_matches_solve(h, gaps):
    t1, t2, t3 = np.cumsum(gaps[:3])
    t = t3 + gaps[3]
    w2 = fbm.two_sample_weights(t1, t2, t, h)
    ref2 = fbm.conditioning_weights([t1, t2], [t], h)[0]
    assert np.max(np.abs(w2 - ref2)) < 1e-8
    w3 = fbm.three_sample_weights(t1, t2, t3, t, h)
    ref3 = fbm.conditioning_weights([t1, t2, t3], [t], h)[0]
    assert np.max(np.abs(w3 - ref3)) < 1e-8


def test_coefficient_objects_evaluate_predictor():
    samples = np.array([0.4, -0.3, 0.9])
    coef = fbm.three_sample_coefficients(1.0, 2.0, 3.5, 4.0, 0.6)
    ref = fbm.predict(fbm.ConditioningSet([1.0, 2.0, 3.5], samples), 4.0, 0.6)
    assert coef.value(samples) == pytest.approx(ref, abs=1e-9)
    coef2 = fbm.two_sample_coefficients(1.0, 2.0, 4.0, 0.6)
    ref2 = fbm.predict(fbm.ConditioningSet([1.0, 2.0], samples[:2]), 4.0, 0.6)
    assert coef2.value(samples[:2]) == pytest.approx(ref2, abs=1e-9)
    with pytest.raises(InvalidInputError):
        fbm.two_sample_coefficients(1.0, 2.0, 1.5, 0.6)
