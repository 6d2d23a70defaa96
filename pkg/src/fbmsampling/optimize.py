"""Optimal deterministic sampling schedules.

One sample: a coarse scan followed by bounded Brent on the best bracket.
Several samples: Nelder-Mead over unconstrained coordinates ``z`` mapped to
ordered times by

    tau_i = T * S_i / (S_N + 1),    S_i = sum_{j <= i} softplus(z_j),

which is a bijection from R^N onto ordered schedules in (0, T).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize as sopt

from . import fbm
from .distortion import (
    MIN_TAU_FRACTION,
    DistortionReport,
    SamplingSchedule,
    baseline,
    distortion_multi,
)
from .errors import InvalidInputError

__all__ = [
    "GRAD_TOL",
    "OptimizeResult",
    "optimize_multi",
    "optimize_one",
    "schedule_from_free",
    "free_from_schedule",
]

# Stationarity threshold on the scaled gradient d(J/J0)/d(tau/T).
GRAD_TOL = 1e-4
N_RESTARTS = 8
_SCAN_POINTS = 16
_FD_STEP = 1e-5


@dataclass(frozen=True)
class OptimizeResult:
    schedule: SamplingSchedule
    distortion: DistortionReport
    evaluations: int
    converged: bool
    gradient_norm: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "times": self.schedule.times.tolist(),
            "horizon": self.schedule.horizon,
            "distortion": self.distortion.to_dict(),
            "evaluations": self.evaluations,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
        }


def _softplus(z):
    return np.logaddexp(0.0, z)


def _softplus_inv(d):
    d = np.asarray(d, dtype=float)
    # log(expm1(d)) without overflow for large d
    return np.where(d > 30.0, d + np.log1p(-np.exp(-np.minimum(d, 700.0))), np.log(np.expm1(np.minimum(d, 30.0))))


def schedule_from_free(z, horizon: float) -> np.ndarray:
    s = np.cumsum(_softplus(np.asarray(z, dtype=float)))
    return horizon * s / (s[-1] + 1.0)


def free_from_schedule(times, horizon: float) -> np.ndarray:
    r = np.asarray(times, dtype=float) / horizon
    if np.any(r <= 0) or np.any(r >= 1) or np.any(np.diff(r) <= 0):
        raise InvalidInputError("schedule must be strictly increasing inside (0, T)")
    s_n = r[-1] / (1.0 - r[-1])
    s = r * (s_n + 1.0)
    return _softplus_inv(np.diff(np.concatenate([[0.0], s])))


class _Counter:
    """Scaled objective u = tau/T -> J/J0, with an evaluation count."""

    def __init__(self, h, horizon, mode, method):
        self.h, self.horizon, self.mode, self.method = h, horizon, mode, method
        self.base = baseline(h, horizon)
        self.calls = 0

    def __call__(self, u) -> float:
        self.calls += 1
        times = np.asarray(u, dtype=float) * self.horizon
        if times[0] < MIN_TAU_FRACTION * self.horizon or np.any(np.diff(times) <= 0) or times[-1] > self.horizon:
            return np.inf
        sched = SamplingSchedule(times, self.horizon)
        return distortion_multi(sched, self.h, self.mode, method=self.method).value / self.base


def _scaled_gradient(obj: _Counter, u: np.ndarray) -> np.ndarray:
    """Central differences, one-sided against the box edges."""
    lo = MIN_TAU_FRACTION
    g = np.empty(u.size)
    for i in range(u.size):
        up, dn = u.copy(), u.copy()
        up[i] = min(u[i] + _FD_STEP, 1.0)
        dn[i] = max(u[i] - _FD_STEP, lo)
        g[i] = (obj(up) - obj(dn)) / (up[i] - dn[i])
    return g


def optimize_one(h: float, horizon: float, method: str = "adaptive") -> OptimizeResult:
    """Best single sampling time on ``[1e-6 T, T]``."""
    h = fbm.check_hurst(h)
    horizon = fbm.check_horizon(horizon)
    obj = _Counter(h, horizon, "full", method)
    lo = MIN_TAU_FRACTION
    grid = np.linspace(lo, 1.0, _SCAN_POINTS)
    vals = np.array([obj(np.array([u])) for u in grid])
    j = int(np.argmin(vals))
    left, right = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
    res = sopt.minimize_scalar(
        lambda u: obj(np.array([u])),
        bounds=(left, right),
        method="bounded",
        options={"xatol": 1e-7},
    )
    u = np.array([float(res.x)]) if res.fun <= vals[j] else np.array([grid[j]])
    return _finish(obj, u)


def _finish(obj: _Counter, u: np.ndarray) -> OptimizeResult:
    grad = _scaled_gradient(obj, u)
    # a minimum on the upper edge only needs the inward derivative to be non-negative
    at_top = np.isclose(u, 1.0, rtol=0, atol=1e-9)
    proj = np.where(at_top & (grad <= 0), 0.0, grad)
    gnorm = float(np.linalg.norm(proj))
    sched = SamplingSchedule(u * obj.horizon, obj.horizon)
    report = distortion_multi(sched, obj.h, obj.mode)
    return OptimizeResult(sched, report, obj.calls, gnorm < GRAD_TOL, gnorm)


def _starts(n: int, horizon: float, rng: np.random.Generator) -> list[np.ndarray]:
    uniform = np.arange(1, n + 1) / (n + 1)
    out = [uniform]
    for _ in range(N_RESTARTS - 1):
        jitter = uniform + rng.uniform(-0.35, 0.35, n) / (n + 1)
        out.append(np.sort(np.clip(jitter, 1e-3, 1 - 1e-3)))
    return [free_from_schedule(u * horizon, horizon) for u in out]


def optimize_multi(
    h: float,
    horizon: float,
    n: int,
    mode: str = "full",
    seed: int = 0,
    method: str = "graded",
) -> OptimizeResult:
    """Best ``n``-sample schedule by multi-start Nelder-Mead.

    ``method`` selects the quadrature used while searching; the reported
    distortion is always recomputed with the adaptive rule.
    """
    h = fbm.check_hurst(h)
    horizon = fbm.check_horizon(horizon)
    if int(n) != n or n < 1:
        raise InvalidInputError(f"number of samples must be a positive integer, got {n}")
    if mode not in ("full", "truncated"):
        raise InvalidInputError(f"mode must be 'full' or 'truncated', got {mode!r}")
    if n == 1:
        return optimize_one(h, horizon)

    obj = _Counter(h, horizon, mode, method)
    rng = np.random.default_rng(seed)
    candidates = []
    for z0 in _starts(n, horizon, rng):
        res = sopt.minimize(
            lambda z: obj(schedule_from_free(z, 1.0)),
            z0,
            method="Nelder-Mead",
            options={"xatol": 1e-7, "fatol": 1e-9, "maxfev": 1000 * n, "adaptive": True},
        )
        u = schedule_from_free(res.x, 1.0)
        candidates.append((round(float(res.fun), 11), tuple(np.round(u, 12)), u))
    candidates.sort(key=lambda c: (c[0], c[1]))
    return _finish(obj, candidates[0][2])
