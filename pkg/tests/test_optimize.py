from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fbmsampling.errors import InvalidInputError
from fbmsampling.optimize import (
    GRAD_TOL,
    free_from_schedule,
    optimize_multi,
    optimize_one,
    schedule_from_free,
)

T = 20.0


@given(st.lists(st.floats(-8.0, 8.0), min_size=1, max_size=6))
def test_free_coordinates_round_trip(z):
    times = schedule_from_free(z, T)
    assert np.all(np.diff(times) > 0) and 0 < times[0] and times[-1] < T
    back = free_from_schedule(times, T)
    assert np.allclose(schedule_from_free(back, T), times, rtol=1e-9, atol=1e-9)


def test_free_from_schedule_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        free_from_schedule([5.0, 4.0], T)
    with pytest.raises(InvalidInputError):
        free_from_schedule([T], T)


@pytest.mark.parametrize("h, tau, j", [(0.1, 5.658, 23.433), (0.5, 10.0, 100.0), (0.9, 7.854, 290.634)])
def test_single_sample_optimum(h, tau, j):
    res = optimize_one(h, T)
    assert res.converged and res.gradient_norm < GRAD_TOL
    assert res.schedule.times[0] == pytest.approx(tau, abs=0.02)
    assert res.distortion.value == pytest.approx(j, rel=2e-3)


@pytest.mark.parametrize("mode", ["full", "truncated"])
def test_brownian_optimum_is_uniform(mode):
    res = optimize_multi(0.5, T, 3, mode)
    assert np.allclose(res.schedule.times, [5.0, 10.0, 15.0], atol=1e-3)
    assert res.distortion.value == pytest.approx(50.0, abs=1e-3)
    assert res.converged


def test_two_sample_full_reference():
    res = optimize_multi(0.4, T, 2, "full")
    assert np.allclose(res.schedule.times, [6.569, 13.264], atol=0.05)
    assert res.distortion.value == pytest.approx(50.108, rel=5e-3)


def test_optimizer_is_deterministic():
    a = optimize_multi(0.3, T, 2, "truncated", seed=4)
    b = optimize_multi(0.3, T, 2, "truncated", seed=4)
    assert np.array_equal(a.schedule.times, b.schedule.times)
    assert a.to_dict() == b.to_dict()


def test_budget_monotone_in_n():
    vals = [optimize_multi(0.7, T, n, "full").distortion.value for n in (1, 2, 3)]
    assert vals[0] > vals[1] > vals[2]


@pytest.mark.parametrize("n", [0, -1, 1.5])
def test_invalid_sample_count(n):
    with pytest.raises(InvalidInputError):
        optimize_multi(0.5, T, n)


def test_invalid_mode_and_hurst():
    with pytest.raises(InvalidInputError):
        optimize_multi(0.5, T, 2, "partial")
    with pytest.raises(InvalidInputError, match="Hurst"):
        optimize_multi(1.2, T, 2)
