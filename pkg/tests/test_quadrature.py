from __future__ import annotations

import numpy as np
import pytest
from scipy import integrate

from fbmsampling.errors import InvalidInputError, QuadratureError
from fbmsampling.quadrature import QuadratureSpec, graded_legendre, graded_nodes, quad


def test_polynomial_exact():
    assert quad(lambda x: 3 * x**2, 0.0, 2.0) == pytest.approx(8.0, rel=1e-12)


def test_endpoint_power_singularity():
    for p in (0.2, 0.6, 1.4):
        got = quad(lambda x, p=p: x**p, 0.0, 3.0)
        assert got == pytest.approx(3.0 ** (p + 1) / (p + 1), rel=1e-9)


def test_interior_kink_breakpoint():
    f = lambda x: np.abs(x - 1.3) ** 0.4  # noqa: E731
    exact = (1.3**1.4 + 1.7**1.4) / 1.4
    assert quad(f, 0.0, 3.0, points=[1.3]) == pytest.approx(exact, rel=1e-9)


def test_agrees_with_scipy():
    f = lambda x: np.exp(-x) * np.sin(3 * x)  # noqa: E731
    ref, _ = integrate.quad(f, 0.0, 5.0, epsabs=1e-13, epsrel=1e-13)
    assert quad(f, 0.0, 5.0) == pytest.approx(ref, rel=1e-10)


def test_empty_and_reversed_ranges():
    assert quad(np.sin, 1.0, 1.0) == 0.0
    with pytest.raises(InvalidInputError):
        quad(np.sin, 2.0, 1.0)


def test_non_finite_integrand_raises():
    with np.errstate(divide="ignore"), pytest.raises(QuadratureError):
        quad(lambda x: 1.0 / (x - 0.5), 0.0, 1.0)


def test_budget_exhaustion_reports_estimate():
    spec = QuadratureSpec(rel_tol=1e-14, abs_tol=1e-16, max_subdivisions=20)
    with pytest.raises(QuadratureError) as info:
        quad(lambda x: np.sin(50 * x) ** 2, 0.0, 10.0, spec)
    assert np.isfinite(info.value.estimate)


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        QuadratureSpec(rel_tol=0.0)


def test_graded_rule_batched():
    a = np.array([0.0, 1.0, 2.0])
    b = np.array([1.0, 3.0, 2.5])
    got = graded_legendre(lambda x: np.sqrt(x - a[:, None]) + x, a, b)
    exact = (b - a) ** 1.5 / 1.5 + (b**2 - a**2) / 2
    assert np.allclose(got, exact, rtol=1e-11)
    x, w = graded_nodes(a, b, levels=10, order=4)
    assert x.shape == w.shape == (3, 44)
    assert np.allclose(w.sum(axis=-1), b - a)
