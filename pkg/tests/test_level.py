from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbmsampling import fbm
from fbmsampling.distortion import SamplingSchedule, baseline, distortion_multi
from fbmsampling.errors import InvalidInputError
from fbmsampling.level import (
    ThresholdPolicy,
    bracket,
    bracket_expanded,
    bracket_table,
    empirical_distortion,
    modified_observations,
    observed_distortion_one,
    observed_modified_distortion,
    one_sample_observations,
    schedule_gain_observations,
    threshold_exponent,
    trigger_indices,
    trigger_times,
)
from fbmsampling.quadrature import quad

T = 20.0


def _direct_bracket(tau, h, end):
    p = 2 * h
    scale = tau ** (2 * p)
    f = lambda s: (s**p + tau**p - np.abs(s - tau) ** p) ** 2 / scale  # noqa: E731
    return quad(f, tau, end)


def test_threshold_exponent():
    assert threshold_exponent(0.5) == pytest.approx(0.5)
    assert threshold_exponent(0.1) == pytest.approx(0.3)


def test_policy_validation_and_thresholds():
    pol = ThresholdPolicy([0.5, 0.8], 0.5, 16.0)
    assert pol.n == 2
    assert np.allclose(pol.thresholds([0.0, 12.0]), [0.5 * 4.0, 0.8 * 2.0])
    assert ThresholdPolicy.from_eta(4.0, 0.5, 16.0).q[0] == pytest.approx(1.0)
    for bad in ([], [0.0], [-1.0], [np.inf]):
        with pytest.raises(InvalidInputError):
            ThresholdPolicy(bad, 0.5, 16.0)


def test_trigger_indices_crafted_path():
    # T = 4, grid 4 so dt = 1 and T^{1/2} = 2 at H = 0.5
    path = np.array([[0.0, 0.5, 1.2, 0.3, 0.2]])
    idx, cens = trigger_indices(path, [0.5, 0.6], 0.5, 4.0)
    # first threshold 1.0: crossed at k = 2; second 0.6 * sqrt(2): |0.3 - 1.2| at k = 3
    assert idx.tolist() == [[2, 3]]
    assert cens.tolist() == [[False, False]]
    idx, cens = trigger_indices(path, [0.5, 5.0, 0.1], 0.5, 4.0)
    assert idx.tolist() == [[2, 4, 4]]
    assert cens.tolist() == [[False, True, True]]


def test_trigger_times_outcome():
    path = fbm.simulate_path(0.6, T, 512, seed=3)
    out = trigger_times(path, ThresholdPolicy([0.3, 0.3, 0.3], 0.6, T))
    assert np.all(np.diff(out.times[~out.censored]) > 0)
    assert np.all(np.isnan(out.values[out.censored]))
    csv_lines = out.to_csv().splitlines()
    assert csv_lines[0] == "sample,time,value,censored" and len(csv_lines) == 4
    huge = trigger_times(path, ThresholdPolicy([1e3], 0.6, T))
    assert huge.censored.all() and huge.times[0] == pytest.approx(T)
    with pytest.raises(InvalidInputError):
        trigger_times(path, ThresholdPolicy([0.3], 0.5, T))


@settings(max_examples=30, deadline=None)
@given(h=st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9]), u=st.floats(1e-3, 0.999), v=st.floats(0.0, 1.0))
def test_bracket_matches_direct_quadrature(h, u, v):
    tau = u * T
    end = tau + v * (T - tau)
    got = bracket(tau, h, end)
    ref = _direct_bracket(tau, h, end) if end > tau else 0.0
    assert got == pytest.approx(ref, rel=1e-8, abs=1e-12)


def test_bracket_expansion_agrees_away_from_origin():
    for h in (0.2, 0.5, 0.8):
        assert bracket_expanded(4.0, h, T) == pytest.approx(bracket(4.0, h, T), rel=1e-8)


def test_bracket_table_and_validation():
    tab = bracket_table(0.4, T, 64)
    assert np.isnan(tab[0]) and tab[-1] == 0.0
    assert tab[10] == pytest.approx(bracket(10 * T / 64, 0.4, T), rel=1e-14)
    with pytest.raises(InvalidInputError):
        bracket(0.0, 0.5, 1.0)


def test_one_sample_observation_equals_integral():
    """h = int_tau^T Bhat^2 with the sample replaced by the threshold."""
    h, eta = 0.35, 1.7
    path = fbm.simulate_path(h, T, 1024, seed=8)
    out = trigger_times(path, ThresholdPolicy.from_eta(eta, h, T))
    tau = out.times[0]
    assert not out.censored[0]
    ref = 0.25 * eta**2 * _direct_bracket(tau, h, T)
    assert observed_distortion_one(eta, path) == pytest.approx(ref, rel=1e-8)
    assert observed_distortion_one(1e6, path) == 0.0
    with pytest.raises(InvalidInputError):
        observed_distortion_one(0.0, path)


def test_one_sample_observations_shared_paths():
    paths = fbm.simulate_paths(0.5, T, 256, 50, seed=1)
    etas = [0.5, 2.0, 4.0]
    obs = one_sample_observations(paths, etas, 0.5, T)
    assert obs.shape == (3, 50)
    single = one_sample_observations(paths, [2.0], 0.5, T)[0]
    assert np.array_equal(obs[1], single)


def _direct_full_gain(times, values, start, end, h):
    f = lambda t: (fbm.conditioning_weights(times, t, h) @ values) ** 2  # noqa: E731
    return quad(f, start, end)


@pytest.mark.parametrize("mode", ["full", "truncated"])
def test_modified_observation_matches_direct_integral(mode):
    h = 0.6
    path = fbm.simulate_path(h, T, 2048, seed=21)
    pol = ThresholdPolicy([0.4, 0.5, 0.6], h, T)
    out = trigger_times(path, pol)
    ends = np.append(out.times[1:], T)
    ref = 0.0
    for i in np.flatnonzero(~out.censored):
        if mode == "truncated":
            ref += _direct_full_gain(out.times[i : i + 1], out.values[i : i + 1], out.times[i], ends[i], h)
        else:
            ref += _direct_full_gain(out.times[: i + 1], out.values[: i + 1], out.times[i], ends[i], h)
    got = observed_modified_distortion(pol, path, mode)
    assert got == pytest.approx(ref, rel=1e-7)


def test_modified_full_rejects_long_policies():
    paths = fbm.simulate_paths(0.5, T, 64, 2)
    with pytest.raises(InvalidInputError):
        modified_observations(paths, [0.5] * 4, 0.5, T, "full")
    assert modified_observations(paths, [0.5] * 4, 0.5, T, "truncated").shape == (2,)


def test_schedule_gain_observation_mean():
    sched = SamplingSchedule([6.0, 13.0], T)
    vals = fbm.simulate_at_times(sched.times, 0.4, 20000, seed=4)
    obs = schedule_gain_observations(sched, vals, 0.4, "full")
    target = baseline(0.4, T) - distortion_multi(sched, 0.4, "full").value
    se = obs.std(ddof=1) / np.sqrt(obs.size)
    assert abs(obs.mean() - target) < 3 * se


@pytest.mark.parametrize(
    "h, times, mode",
    [(0.5, [10.0], "full"), (0.3, [5.0, 12.0], "full"), (0.7, [4.0, 9.0, 15.0], "truncated")],
)
def test_empirical_oracle_matches_closed_form(h, times, mode):
    sched = SamplingSchedule(times, T)
    rep = empirical_distortion(sched, h, T, 3000, seed=2, estimator_mode=mode)
    exact = distortion_multi(sched, h, mode).value
    assert abs(rep.value - exact) < 3 * rep.std_error


def test_empirical_oracle_censored_policy_is_baseline():
    pol = ThresholdPolicy([1e4], 0.5, T)
    rep = empirical_distortion(pol, 0.5, T, 400, seed=0, grid_n=512)
    assert abs(rep.value - baseline(0.5, T)) < 3 * rep.std_error


def test_empirical_oracle_validation():
    sched = SamplingSchedule([5.0], T)
    with pytest.raises(InvalidInputError):
        empirical_distortion(sched, 0.5, T, 1)
    with pytest.raises(InvalidInputError):
        empirical_distortion(sched, 0.5, 10.0, 100)
    with pytest.raises(InvalidInputError):
        empirical_distortion(ThresholdPolicy([1.0], 0.4, T), 0.5, T, 100)
    with pytest.raises(InvalidInputError):
        empirical_distortion([5.0], 0.5, T, 100)
