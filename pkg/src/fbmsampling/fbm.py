"""Fractional Brownian motion kernel.

Covariance, increment correlation, exact path synthesis and the Gaussian
conditioning predictor.  The predictor comes in two flavours: a general
linear solve against the sample covariance, and the explicit two- and
three-sample coefficient formulas, which are kept as fast paths and checked
against the solve in the test suite.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from .errors import ConditioningError, InvalidInputError, SynthesisError

__all__ = [
    "DEFAULT_GRID_N",
    "MAX_GRID_N",
    "ConditioningSet",
    "FbmPath",
    "PredictorCoefficients",
    "check_horizon",
    "check_hurst",
    "conditioning_weights",
    "covariance",
    "covariance_matrix",
    "increment_autocorrelation",
    "predict",
    "simulate_at_times",
    "simulate_path",
    "simulate_paths",
    "three_sample_coefficients",
    "two_sample_coefficients",
]

DEFAULT_GRID_N = 2**12
MAX_GRID_N = 2**22
# Relative pivot floor for the Cholesky solve of the sample covariance.
PIVOT_RTOL = 1e-12
_UINT64 = (1 << 64) - 1
_CHUNK_BYTES = 4 << 20


def check_hurst(h: float) -> float:
    h = float(h)
    if not 0.0 < h < 1.0 or not np.isfinite(h):
        raise InvalidInputError(f"Hurst parameter must lie in (0, 1), got {h}")
    return h


def check_horizon(t_end: float) -> float:
    t_end = float(t_end)
    if not t_end > 0.0 or not np.isfinite(t_end):
        raise InvalidInputError(f"horizon must be positive, got {t_end}")
    return t_end


def _pow(x, h):
    """``|x|**(2h)`` that is exactly zero at zero."""
    return np.abs(x) ** (2.0 * h)


def covariance(t, s, h: float):
    """Cov(B_t, B_s) = (t^2H + s^2H - |t - s|^2H) / 2.

    Broadcasts over array arguments.
    """
    h = check_hurst(h)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise InvalidInputError("covariance is defined for non-negative times only")
    out = 0.5 * (_pow(t, h) + _pow(s, h) - _pow(t - s, h))
    return float(out) if out.ndim == 0 else out


def covariance_matrix(times: Sequence[float], h: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    return covariance(times[:, None], times[None, :], h)


def increment_autocorrelation(n: int, h: float) -> float:
    """Correlation between unit increments ``n`` steps apart."""
    h = check_hurst(h)
    if int(n) != n or n < 1:
        raise InvalidInputError(f"lag must be a positive integer, got {n}")
    n = float(n)
    return 0.5 * ((n + 1) ** (2 * h) + (n - 1) ** (2 * h) - 2 * n ** (2 * h))


# ---------------------------------------------------------------------------
# path synthesis


@dataclass(frozen=True)
class FbmPath:
    """A discretised fBm trajectory on the uniform grid ``k * t_end / grid_n``."""

    h: float
    t_end: float
    grid_n: int
    values: np.ndarray = field(repr=False)
    seed: int = 0
    index: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid_n + 1,):
            raise InvalidInputError(
                f"expected {self.grid_n + 1} values, got shape {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dt(self) -> float:
        return self.t_end / self.grid_n

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.grid_n + 1) * self.dt

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["time", "value"])
        for t, v in zip(self.times, self.values):
            writer.writerow([f"{t:.10g}", f"{v:.17g}"])
        return buf.getvalue()


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    # One independent generator per (seed, stream, index) key, so a batch
    # can be split or reordered without changing any individual path.
    ss = np.random.SeedSequence(
        entropy=int(seed) & _UINT64, spawn_key=(int(stream) & _UINT64, int(index))
    )
    return np.random.Generator(np.random.PCG64(ss))


def _fgn_autocovariance(h: float, n: int) -> np.ndarray:
    k = np.arange(n + 1, dtype=float)
    return 0.5 * ((k + 1) ** (2 * h) - 2 * k ** (2 * h) + np.abs(k - 1) ** (2 * h))


@lru_cache(maxsize=64)
def _circulant_scale(h: float, n: int) -> np.ndarray | None:
    """sqrt(eigenvalues / M) of the circulant embedding of unit-step fGn.

    Returns ``None`` when the embedding has materially negative eigenvalues,
    which signals the Cholesky fallback.
    """
    gamma = _fgn_autocovariance(h, n)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    lam = np.fft.fft(row).real
    if lam.min() < -1e-10 * lam.max():
        return None
    lam = np.clip(lam, 0.0, None)
    scale = np.sqrt(lam / row.size)
    scale.setflags(write=False)
    return scale


@lru_cache(maxsize=8)
def _increment_cholesky(h: float, n: int) -> np.ndarray:
    gamma = _fgn_autocovariance(h, n)[:n]
    idx = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    return np.linalg.cholesky(gamma[idx])


def _validate_grid(grid_n: int) -> int:
    if int(grid_n) != grid_n or grid_n < 2:
        raise InvalidInputError(f"grid_n must be an integer >= 2, got {grid_n}")
    if grid_n > MAX_GRID_N:
        raise SynthesisError(f"grid_n={grid_n} exceeds the synthesis limit {MAX_GRID_N}")
    return int(grid_n)


def simulate_paths(
    h: float,
    t_end: float,
    grid_n: int = DEFAULT_GRID_N,
    n_paths: int = 1,
    seed: int = 0,
    stream: int = 0,
    start: int = 0,
    method: str = "auto",
    precision: str = "double",
) -> np.ndarray:
    """Exact-law fBm paths on a uniform grid, one row per path.

    Path ``start + i`` of ``(seed, stream)`` is the same array no matter how
    the batch is sliced.  Circulant embedding produces two independent paths
    per complex Gaussian draw (real and imaginary parts), so paths are keyed
    in pairs.

    Parameters
    ----------
    method : {"auto", "circulant", "cholesky"}
        ``auto`` uses circulant embedding and falls back to a Cholesky factor
        of the increment covariance when the embedding is not non-negative.
    precision : {"double", "single"}
        ``single`` draws normals and runs the FFT in float32 (about twice as
        fast); increments are accumulated in float64 either way.  The two
        settings give different paths for the same key.
    """
    h = check_hurst(h)
    t_end = check_horizon(t_end)
    n = _validate_grid(grid_n)
    if n_paths < 0:
        raise InvalidInputError("n_paths must be non-negative")
    if precision not in ("double", "single"):
        raise InvalidInputError(f"precision must be 'double' or 'single', got {precision!r}")
    out = np.empty((n_paths, n + 1))
    out[:, 0] = 0.0
    if n_paths == 0:
        return out
    step_scale = (t_end / n) ** h

    scale = None if method == "cholesky" else _circulant_scale(h, n)
    if scale is None and method == "circulant":
        raise SynthesisError("circulant embedding is not non-negative definite")

    if scale is not None:
        real = np.float32 if precision == "single" else np.float64
        cplx = np.complex64 if precision == "single" else np.complex128
        scale = (scale * step_scale).astype(real)
        m = scale.size
        first, last = start // 2, (start + n_paths - 1) // 2
        rows = max(1, _CHUNK_BYTES // (16 * m))
        for lo in range(first, last + 1, rows):
            hi = min(lo + rows, last + 1)
            z = np.empty((hi - lo, m), dtype=cplx)
            flat = z.view(real)
            for row, pair in enumerate(range(lo, hi)):
                _rng(seed, stream, pair).standard_normal(out=flat[row], dtype=real)
            z *= scale
            y = sfft.fft(z, axis=1, overwrite_x=True)[:, :n]
            incr = np.empty((2 * (hi - lo), n))
            incr[0::2] = y.real
            incr[1::2] = y.imag
            # global path indices covered by this chunk, clipped to the request
            g0 = max(2 * lo, start)
            g1 = min(2 * hi, start + n_paths)
            np.cumsum(incr[g0 - 2 * lo : g1 - 2 * lo], axis=1, out=out[g0 - start : g1 - start, 1:])
    else:
        chol = _increment_cholesky(h, n) * step_scale
        draws = np.stack(
            [_rng(seed, stream, start + i).standard_normal(n) for i in range(n_paths)]
        )
        np.cumsum(draws @ chol.T, axis=1, out=out[:, 1:])
    return out


def simulate_path(
    h: float,
    t_end: float,
    grid_n: int = DEFAULT_GRID_N,
    seed: int = 0,
    index: int = 0,
    stream: int = 0,
) -> FbmPath:
    values = simulate_paths(h, t_end, grid_n, 1, seed=seed, stream=stream, start=index)[0]
    return FbmPath(h=h, t_end=t_end, grid_n=grid_n, values=values, seed=seed, index=index)


def simulate_at_times(
    times: Sequence[float],
    h: float,
    n_paths: int,
    seed: int = 0,
    stream: int = 0,
) -> np.ndarray:
    """Joint draws of B at arbitrary positive times via a Cholesky factor.

    Used where the observation times do not sit on a uniform grid.
    """
    h = check_hurst(h)
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise InvalidInputError("times must be positive and strictly increasing")
    chol = np.linalg.cholesky(covariance_matrix(times, h))
    draws = np.stack(
        [_rng(seed, stream, i).standard_normal(times.size) for i in range(n_paths)]
    )
    return draws @ chol.T


# ---------------------------------------------------------------------------
# conditioning


@dataclass(frozen=True)
class ConditioningSet:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if times.ndim != 1 or times.size == 0:
            raise InvalidInputError("conditioning set needs at least one time")
        if values.shape != times.shape:
            raise InvalidInputError("times and values must have equal length")
        if times[0] <= 0 or np.any(np.diff(times) <= 0):
            raise InvalidInputError("conditioning times must be positive and strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)


def _checked_cholesky(sigma: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("sample covariance is not positive definite") from exc
    pivots = np.diag(chol) ** 2
    if np.any(pivots < PIVOT_RTOL * np.diag(sigma)):
        raise ConditioningError("sample covariance is numerically singular")
    return chol


def _covariance_ext(t, s, h: float) -> np.ndarray:
    """Covariance in extended precision (``np.longdouble``)."""
    t = np.asarray(t, dtype=np.longdouble)
    s = np.asarray(s, dtype=np.longdouble)
    p = np.longdouble(2.0 * h)
    return 0.5 * (np.abs(t) ** p + np.abs(s) ** p - np.abs(t - s) ** p)


def _cholesky_solve(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))


def conditioning_weights(times: Sequence[float], t, h: float) -> np.ndarray:
    """Weights w(t) = Sigma_22^{-1} Sigma_21(t), one row per query time.

    The predictor at ``t`` is ``w(t) @ values``.  One step of iterative
    refinement with an extended-precision residual keeps the weights accurate
    when sample times nearly coincide and the covariance is ill-conditioned.
    """
    h = check_hurst(h)
    times = np.asarray(times, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    chol = _checked_cholesky(covariance_matrix(times, h))
    w = _cholesky_solve(chol, covariance(times[:, None], t[None, :], h))
    resid = _covariance_ext(times[:, None], t[None, :], h) - _covariance_ext(
        times[:, None], times[None, :], h
    ) @ w.astype(np.longdouble)
    w += _cholesky_solve(chol, resid.astype(float))
    return w.T


def predict(cond: ConditioningSet, t, h: float):
    """E[B_t | B at the conditioning times], for ``t`` at or after the last time."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < cond.times[-1]):
        raise InvalidInputError("query time precedes the last conditioning time")
    out = conditioning_weights(cond.times, t_arr, h) @ cond.values
    return float(out[0]) if t_arr.ndim == 0 else out


# ---------------------------------------------------------------------------
# closed-form coefficients


@dataclass(frozen=True)
class PredictorCoefficients:
    """Predictor ``scale * sum(weights * samples)``.

    Signs of the original estimator expressions live in ``weights``.
    """

    scale: float
    weights: np.ndarray

    def value(self, samples: Sequence[float]) -> float:
        return float(self.scale * np.dot(self.weights, np.asarray(samples, dtype=float)))


def _two_terms(t1, t2, t, h):
    p = lambda x: _pow(x, h)  # noqa: E731
    T1, T2, tt = p(t1), p(t2), p(t)
    d12, e1, e2 = p(t2 - t1), p(t - t1), p(t - t2)
    scale = 1.0 / (T1 * T1 + (T2 - d12) ** 2 - 2 * T1 * (T2 + d12))
    a1 = (
        2 * e1 * T2 - e2 * T2 + T2 * T2 + e2 * d12 - T2 * d12
        - T1 * (e2 + T2) + tt * (T1 - T2 - d12)
    )
    a2 = (
        -T1 * T1 + e1 * (T2 - d12) + tt * (T1 - T2 + d12)
        + T1 * (e1 - 2 * e2 + T2 + d12)
    )
    return scale, a1, -a2


def _three_terms(t1, t2, t3, t, h):
    p = lambda x: _pow(x, h)  # noqa: E731
    T1, T2, T3, tt = p(t1), p(t2), p(t3), p(t)
    d12, d13, d23 = p(t2 - t1), p(t3 - t1), p(t3 - t2)
    e1, e2, e3 = p(t - t1), p(t - t2), p(t - t3)
    scale = 1.0 / (2 * (
        T2 * T2 * d13
        + d12 * (T3 * T3 + d13 * d23 + T3 * (d12 - d13 - d23))
        + T1 * T1 * d23
        + T1 * (T2 * (d12 - d13 - d23) - d23 * (d12 + d13 - d23) - T3 * (d12 - d13 + d23))
        - T2 * (T3 * (d12 + d13 - d23) + d13 * (d12 - d13 + d23))
    ))
    a1 = (
        -tt * d12 * T3 + 2 * e2 * d12 * T3 - d12 * e3 * T3 - e1 * T3 * T3 + e2 * T3 * T3
        + d12 * T3 * T3 + tt * T3 * d13 - e2 * T3 * d13 - tt * d12 * d23 + d12 * e3 * d23
        - tt * T3 * d23 + 2 * e1 * T3 * d23 - e2 * T3 * d23 - d12 * T3 * d23
        - tt * d13 * d23 + e2 * d13 * d23 + tt * d23 * d23 - e1 * d23 * d23
        + T2 * T2 * (-e1 + e3 + d13)
        + T1 * (T2 * (e2 - e3 - d23) + d23 * (2 * tt - e2 - e3 + d23) - T3 * (e2 - e3 + d23))
        - T2 * (
            d12 * e3 + e2 * d13 - 2 * e3 * d13 - 2 * e1 * d23 + e3 * d23 + d13 * d23
            + T3 * (-2 * e1 + e2 + d12 + e3 + d13 - 2 * d23) + tt * (-d12 + d13 + d23)
        )
    )
    a2 = -(
        tt * d12 * T3 - 2 * e1 * d12 * T3 + d12 * e3 * T3 - e1 * T3 * T3 + e2 * T3 * T3
        - d12 * T3 * T3 + tt * d12 * d13 - d12 * e3 * d13 + tt * T3 * d13 + e1 * T3 * d13
        - 2 * e2 * T3 * d13 + d12 * T3 * d13 - tt * d13 * d13 + e2 * d13 * d13
        - tt * T3 * d23 + e1 * T3 * d23 + tt * d13 * d23 - e1 * d13 * d23
        + T1 * T1 * (e2 - e3 - d23)
        + T2 * (d13 * (-2 * tt + e1 + e3 - d13) + T3 * (e1 - e3 + d13))
        + T1 * (
            d12 * e3 + e1 * T3 - 2 * e2 * T3 + d12 * T3 + e3 * T3 - 2 * e2 * d13 + e3 * d13
            - 2 * T3 * d13 + e1 * d23 - 2 * e3 * d23 + T3 * d23 + d13 * d23
            + T2 * (-e1 + e3 + d13) + tt * (-d12 + d13 + d23)
        )
    )
    a3 = (
        T2 * T2 * (e1 - e3 + d13) + T1 * T1 * (e2 - e3 + d23)
        + d12 * (-d12 * e3 - (e1 + e2 - d12) * T3 + e2 * d13 + e1 * d23
                 + tt * (d12 + 2 * T3 - d13 - d23))
        - T2 * (e1 * d12 - 2 * d12 * e3 + (e1 - e2 + d12) * T3 - 2 * e1 * d13 + e2 * d13
                + d12 * d13 + e1 * d23 + tt * (d12 + d13 - d23))
        - T1 * (e2 * d12 - 2 * d12 * e3 - e1 * T3 + e2 * T3 + d12 * T3 + e2 * d13 + e1 * d23
                - 2 * e2 * d23 + d12 * d23 + tt * (d12 - d13 + d23)
                + T2 * (e1 + e2 - 2 * d12 - 2 * e3 + d13 + d23))
    )
    return scale, a1, a2, a3


def two_sample_weights(t1, t2, t, h: float) -> np.ndarray:
    """Vectorised effective weights ``scale * weights``, shape ``(..., 2)``.

    Double precision; loses digits when samples nearly coincide at large H.
    """
    scale, a1, a2 = _two_terms(t1, t2, t, h)
    return np.stack(np.broadcast_arrays(scale * a1, scale * a2), axis=-1)


def three_sample_weights(t1, t2, t3, t, h: float) -> np.ndarray:
    """Vectorised effective weights ``scale * weights``, shape ``(..., 3)``."""
    scale, a1, a2, a3 = _three_terms(t1, t2, t3, t, h)
    return np.stack(np.broadcast_arrays(scale * a1, scale * a2, scale * a3), axis=-1)


def _ordered(times: Sequence[float], t: float) -> None:
    if times[0] <= 0 or any(b <= a for a, b in zip(times, times[1:])):
        raise ConditioningError("sample times must be positive and distinct (singular configuration)")
    if t < times[-1]:
        raise InvalidInputError("query time precedes the last sample time")


def _ext(*xs):
    return [np.longdouble(x) for x in xs]


def two_sample_coefficients(tau1: float, tau2: float, t: float, h: float) -> PredictorCoefficients:
    """Explicit two-sample predictor, evaluated in extended precision."""
    h = check_hurst(h)
    _ordered((tau1, tau2), t)
    scale, a1, a2 = _two_terms(*_ext(tau1, tau2, t), h)
    return PredictorCoefficients(float(scale), np.array([a1, a2], dtype=float))


def three_sample_coefficients(
    tau1: float, tau2: float, tau3: float, t: float, h: float
) -> PredictorCoefficients:
    """Explicit three-sample predictor, evaluated in extended precision."""
    h = check_hurst(h)
    _ordered((tau1, tau2, tau3), t)
    scale, a1, a2, a3 = _three_terms(*_ext(tau1, tau2, tau3, t), h)
    return PredictorCoefficients(float(scale), np.array([a1, a2, a3], dtype=float))
