"""Level-triggered sampling on simulated fBm paths.

Sample ``i`` fires at the first grid time after the previous sample where the
path has moved by at least ``eta_i`` since that sample.  Thresholds follow

    eta_i = q_i * (T - tau_{i-1})^{(2H+1)/4},    tau_0 = 0,

and a threshold never reached before ``T`` censors the sample (and every later
one) at ``T``.  The per-path observables are

* ``h``: the one-sample integrated squared estimate with the trigger value
  replaced by the threshold, so ``J(eta) = J0 - E[h]``;
* ``h*``: the integrated squared estimate over all segments, using the actual
  trigger values, so the modified distortion is ``J* = J0 - E[h*]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import fbm
from .distortion import DistortionMode, DistortionReport, SamplingSchedule, baseline
from .errors import InvalidInputError
from .quadrature import graded_legendre, graded_nodes, quad

__all__ = [
    "ThresholdPolicy",
    "TriggerOutcome",
    "bracket",
    "bracket_expanded",
    "bracket_table",
    "empirical_distortion",
    "modified_observations",
    "observed_distortion_one",
    "observed_modified_distortion",
    "one_sample_observations",
    "schedule_gain_observations",
    "threshold_exponent",
    "trigger_indices",
    "trigger_times",
]


def threshold_exponent(h: float) -> float:
    """Exponent ``(2H+1)/4`` of the remaining horizon in the threshold law."""
    return (2.0 * h + 1.0) / 4.0


@dataclass(frozen=True)
class ThresholdPolicy:
    q: np.ndarray
    h: float
    horizon: float

    def __post_init__(self):
        h = fbm.check_hurst(self.h)
        horizon = fbm.check_horizon(self.horizon)
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if q.ndim != 1 or q.size == 0:
            raise InvalidInputError("a threshold policy needs at least one coefficient")
        if not np.all(np.isfinite(q)) or np.any(q <= 0):
            raise InvalidInputError(f"threshold coefficients must be positive, got {q.tolist()}")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "horizon", horizon)

    @classmethod
    def from_eta(cls, eta: float, h: float, horizon: float) -> "ThresholdPolicy":
        """Single-sample policy with first threshold ``eta``."""
        return cls(np.array([eta / horizon ** threshold_exponent(h)]), h, horizon)

    @property
    def n(self) -> int:
        return int(self.q.size)

    def thresholds(self, previous_times: Sequence[float]) -> np.ndarray:
        """Realised thresholds given ``(tau_0=0, tau_1, ..., tau_{N-1})``."""
        prev = np.asarray(previous_times, dtype=float)
        return self.q * np.clip(self.horizon - prev, 0.0, None) ** threshold_exponent(self.h)


@dataclass(frozen=True)
class TriggerOutcome:
    times: np.ndarray
    values: np.ndarray
    censored: np.ndarray
    indices: np.ndarray

    def to_csv(self) -> str:
        lines = ["sample,time,value,censored"]
        for i, (t, v, c) in enumerate(zip(self.times, self.values, self.censored), start=1):
            lines.append(f"{i},{t:.10g},{v:.17g},{int(c)}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# trigger detection


def trigger_indices(paths: np.ndarray, q, h: float, t_end: float):
    """First-passage grid indices for a batch of paths sharing one policy.

    Returns ``(idx, censored)``, both of shape ``(m, N)``.  Censored entries
    carry index ``grid_n`` (time ``T``).  ``q`` may contain zeros, which fire
    on the first grid point after the previous sample.
    """
    paths = np.atleast_2d(paths)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    m, n1 = paths.shape
    n = n1 - 1
    dt = t_end / n
    expo = threshold_exponent(h)
    rows = np.arange(m)
    grid = np.arange(n1)

    idx = np.full((m, q.size), n, dtype=np.int64)
    censored = np.ones((m, q.size), dtype=bool)
    prev = np.zeros(m, dtype=np.int64)
    alive = np.ones(m, dtype=bool)
    for i, qi in enumerate(q):
        if not alive.any():
            break
        eta = qi * np.clip(t_end - prev * dt, 0.0, None) ** expo
        base = paths[rows, prev]
        hit = np.abs(paths - base[:, None]) >= eta[:, None]
        hit &= grid[None, :] > prev[:, None]
        k = np.argmax(hit, axis=1)
        fired = alive & hit[rows, k]
        idx[fired, i] = k[fired]
        censored[fired, i] = False
        alive = fired
        prev = np.where(fired, k, n)
    return idx, censored


def trigger_times(path: fbm.FbmPath, policy: ThresholdPolicy) -> TriggerOutcome:
    if not np.isclose(path.h, policy.h) or not np.isclose(path.t_end, policy.horizon):
        raise InvalidInputError("path and policy must share the Hurst parameter and horizon")
    idx, cens = trigger_indices(path.values[None, :], policy.q, policy.h, policy.horizon)
    idx, cens = idx[0], cens[0]
    times = idx * path.dt
    values = np.where(cens, np.nan, path.values[idx])
    return TriggerOutcome(times, values, cens, idx)


# ---------------------------------------------------------------------------
# the one-sample bracket


def _mu_integral(x, h: float):
    """int_1^x (mu^{2H} - (mu - 1)^{2H})^2 dmu, elementwise over ``x >= 1``."""
    p = 2.0 * h

    def g(mu):
        with np.errstate(divide="ignore"):
            d = -(mu**p) * np.expm1(p * np.log1p(-1.0 / mu))
        return d * d

    return graded_legendre(g, np.ones_like(np.asarray(x, dtype=float)), x, levels=48, order=8)


def _power_gap(x, r):
    """x^r - (x - 1)^r for x >= 1 without cancellation."""
    with np.errstate(divide="ignore"):
        return -(x**r) * np.expm1(r * np.log1p(-1.0 / x))


def bracket(tau, h: float, end):
    """(1/tau^{4H}) int_tau^end (s^{2H} + tau^{2H} - (s - tau)^{2H})^2 ds.

    Evaluated through ``mu = s / tau`` in a regrouped form that stays accurate
    when ``tau`` is small relative to ``end``.
    """
    h = fbm.check_hurst(h)
    tau = np.asarray(tau, dtype=float)
    end = np.asarray(end, dtype=float)
    tau, end = np.broadcast_arrays(tau, end)
    if np.any(tau <= 0):
        raise InvalidInputError("bracket needs a positive sample time")
    x = np.maximum(end / tau, 1.0)
    r = 2.0 * h + 1.0
    lin = 2.0 * (_power_gap(x, r) - 1.0) / r
    out = tau * ((x - 1.0) + lin + _mu_integral(x, h))
    out = np.where(end > tau, out, 0.0)
    return float(out) if out.ndim == 0 else out


def bracket_expanded(tau: float, h: float, t_end: float) -> float:
    """Six-term expansion of :func:`bracket` with ``end = T``.

    Algebraically identical to :func:`bracket` but loses roughly
    ``4H log10(T/tau)`` digits to cancellation; kept as a cross-check.
    """
    h = fbm.check_hurst(h)
    T, t = float(t_end), float(tau)
    a, b = 2 * h + 1, 4 * h + 1
    tp, tp2 = t ** (2 * h), t ** (4 * h)
    cross = quad(lambda mu: mu ** (2 * h) * (mu - 1) ** (2 * h), 1.0, T / t)
    return (
        (T - t)
        + (T**b / tp2 - t) / b
        + 2 * (T**a - t**a) / tp / a
        + (T - t) ** b / tp2 / b
        - 2 * (T - t) ** a / tp / a
        - 2 * t * cross
    )


@lru_cache(maxsize=32)
def bracket_table(h: float, t_end: float, grid_n: int) -> np.ndarray:
    """``bracket(k dt, h, T)`` for ``k = 0..grid_n`` (entry 0 is unused)."""
    k = np.arange(1, grid_n + 1)
    tau = k * (t_end / grid_n)
    out = np.empty(grid_n + 1)
    out[0] = np.nan
    out[1:] = bracket(tau, h, np.full(grid_n, float(t_end)))
    out[-1] = 0.0
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# per-path observables


def one_sample_observations(paths: np.ndarray, etas, h: float, t_end: float) -> np.ndarray:
    """``h(eta, path)`` for every threshold in ``etas`` and every path.

    Returns shape ``(len(etas), m)``.  Paths are shared across thresholds.
    """
    paths = np.atleast_2d(paths)
    etas = np.atleast_1d(np.asarray(etas, dtype=float))
    n = paths.shape[1] - 1
    table = bracket_table(float(h), float(t_end), n)
    running = np.maximum.accumulate(np.abs(paths[:, 1:]), axis=1)
    last = running[:, -1]
    out = np.zeros((etas.size, paths.shape[0]))
    for j, eta in enumerate(etas):
        fired = last >= eta
        k = np.argmax(running >= eta, axis=1) + 1
        out[j] = np.where(fired, 0.25 * eta * eta * table[k], 0.0)
    return out


def observed_distortion_one(eta: float, path: fbm.FbmPath) -> float:
    if not eta > 0:
        raise InvalidInputError(f"threshold must be positive, got {eta}")
    return float(one_sample_observations(path.values[None, :], [eta], path.h, path.t_end)[0, 0])


def _segment_gain_full(tk: list, bk: list, start, end, h: float) -> np.ndarray:
    """int_start^end Bhat_t^2 dt for k = 2 or 3 conditioning samples (batched)."""
    x, w = graded_nodes(start, end)
    cols = [t[:, None] for t in tk]
    if len(tk) == 2:
        wt = fbm.two_sample_weights(*cols, x, h)
    else:
        wt = fbm.three_sample_weights(*cols, x, h)
    pred = np.einsum("mkj,mj->mk", wt, np.stack(bk, axis=1))
    return np.sum(w * pred * pred, axis=1)


def modified_observations(
    paths: np.ndarray, q, h: float, t_end: float, mode: str = "full"
) -> np.ndarray:
    """``h*(q, path)`` for each path, shape ``(m,)``."""
    if mode not in ("full", "truncated"):
        raise InvalidInputError(f"mode must be 'full' or 'truncated', got {mode!r}")
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if mode == "full" and q.size > 3:
        raise InvalidInputError("full-history observables are available for at most 3 samples")
    paths = np.atleast_2d(paths)
    m, n1 = paths.shape
    n = n1 - 1
    dt = t_end / n
    idx, cens = trigger_indices(paths, q, h, t_end)
    rows = np.arange(m)
    vals = paths[rows[:, None], idx]
    times = idx * dt
    ends = np.concatenate([times[:, 1:], np.full((m, 1), float(t_end))], axis=1)
    table = bracket_table(float(h), float(t_end), n)

    total = np.zeros(m)
    for i in range(q.size):
        live = ~cens[:, i] & (ends[:, i] > times[:, i])
        if not live.any():
            break
        r = rows[live]
        if i == 0 or mode == "truncated":
            at_end = idx[r, i + 1] == n if i + 1 < q.size else np.ones(r.size, dtype=bool)
            br = np.where(at_end, table[idx[r, i]], 0.0)
            mid = ~at_end
            if mid.any():
                br[mid] = bracket(times[r[mid], i], h, ends[r[mid], i])
            total[r] += 0.25 * vals[r, i] ** 2 * br
        else:
            tk = [times[r, j] for j in range(i + 1)]
            bk = [vals[r, j] for j in range(i + 1)]
            total[r] += _segment_gain_full(tk, bk, times[r, i], ends[r, i], h)
    return total


def observed_modified_distortion(
    policy: ThresholdPolicy, path: fbm.FbmPath, mode: str = "full"
) -> float:
    if not np.isclose(path.h, policy.h) or not np.isclose(path.t_end, policy.horizon):
        raise InvalidInputError("path and policy must share the Hurst parameter and horizon")
    return float(modified_observations(path.values[None, :], policy.q, policy.h, policy.horizon, mode)[0])


def schedule_gain_observations(
    sched: SamplingSchedule, values: np.ndarray, h: float, mode: str = "full"
) -> np.ndarray:
    """Pathwise int Bhat_t^2 dt for a deterministic schedule.

    ``values`` holds the sampled B at the schedule times, shape ``(m, N)``.
    The mean over paths estimates ``J0 - J`` for that schedule.
    """
    from .distortion import one_sample_gain

    values = np.atleast_2d(values)
    edges = sched.boundaries()
    total = np.zeros(values.shape[0])
    for i in range(sched.n):
        a, b = edges[i], edges[i + 1]
        if b <= a:
            continue
        if mode == "truncated" or i == 0:
            g = one_sample_gain(a, b, h) / a ** (2 * h)
            total += values[:, i] ** 2 * g
            continue
        times = sched.times[: i + 1]
        x, w = graded_nodes(a, b)
        wt = fbm.conditioning_weights(times, x, h)
        gram = (wt * w[:, None]).T @ wt
        v = values[:, : i + 1]
        total += np.einsum("mi,ij,mj->m", v, gram, v)
    return total


# ---------------------------------------------------------------------------
# Monte Carlo oracle


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def _trapezoid_rows(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    dt = np.diff(t)
    return 0.5 * np.sum((y[:, 1:] + y[:, :-1]) * dt, axis=1)


def _schedule_grid(sched: SamplingSchedule, h: float, base_n: int) -> np.ndarray:
    T = sched.horizon
    pts = [np.linspace(0.0, T, base_n + 1)[1:], sched.times]
    if h < 0.5:
        # the error variance has a |t - tau|^{2H} cusp after each sample
        step = T / base_n
        for tau in sched.times:
            pts.append(tau + step * 2.0 ** -np.arange(1, 7))
    grid = np.unique(np.concatenate(pts))
    grid = grid[(grid > 0) & (grid <= T)]
    # drop points closer than 1e-9 T to a neighbour other than the sample times
    keep = np.concatenate([[True], np.diff(grid) > 1e-9 * T])
    grid = np.union1d(grid[keep], sched.times)
    return np.concatenate([[0.0], grid])


def _schedule_errors(sched, h, n_paths, seed, mode, base_n, chunk=2000):
    grid = _schedule_grid(sched, h, base_n)
    pos = np.searchsorted(grid, sched.times)
    edges = np.append(pos, grid.size)
    # estimator weights on every grid point, per segment
    W = np.zeros((grid.size, max(sched.n, 1)))
    for i in range(sched.n):
        seg = slice(edges[i], edges[i + 1])
        t = grid[seg]
        if mode == "truncated":
            W[seg, i] = fbm.covariance(sched.times[i], t, h) / sched.times[i] ** (2 * h)
        else:
            W[seg, : i + 1] = fbm.conditioning_weights(sched.times[: i + 1], t, h)
    out = np.empty(n_paths)
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        B = np.zeros((hi - lo, grid.size))
        B[:, 1:] = _simulate_at(grid[1:], h, lo, hi, seed)
        est = B[:, pos] @ W[:, : sched.n].T if sched.n else 0.0
        out[lo:hi] = _trapezoid_rows((B - est) ** 2, grid)
    return out


def _simulate_at(times, h, lo, hi, seed):
    chol = _cached_cholesky(tuple(times), h)
    draws = np.stack([fbm._rng(seed, 1, i).standard_normal(times.size) for i in range(lo, hi)])
    return draws @ chol.T


@lru_cache(maxsize=8)
def _cached_cholesky(times: tuple, h: float) -> np.ndarray:
    sigma = fbm.covariance_matrix(np.array(times), h)
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(sigma)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _policy_errors(policy, n_paths, seed, mode, grid_n, chunk=500):
    h, T = policy.h, policy.horizon
    out = np.empty(n_paths)
    t = np.arange(grid_n + 1) * (T / grid_n)
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        paths = fbm.simulate_paths(h, T, grid_n, hi - lo, seed=seed, stream=2, start=lo)
        idx, cens = trigger_indices(paths, policy.q, h, T)
        for j in range(hi - lo):
            b = paths[j]
            est = np.zeros_like(b)
            k = idx[j][~cens[j]]
            bounds = np.append(k, grid_n + 1)
            for i in range(k.size):
                seg = slice(bounds[i], bounds[i + 1])
                if mode == "truncated":
                    w = fbm.covariance(t[k[i]], t[seg], h) / t[k[i]] ** (2 * h)
                    est[seg] = w * b[k[i]]
                else:
                    wts = fbm.conditioning_weights(t[k[: i + 1]], t[seg], h)
                    est[seg] = wts @ b[k[: i + 1]]
            out[lo + j] = _trapezoid_rows(((b - est) ** 2)[None, :], t)[0]
    return out


def empirical_distortion(
    design: SamplingSchedule | ThresholdPolicy,
    h: float,
    horizon: float,
    n_paths: int,
    seed: int = 0,
    estimator_mode: str = "full",
    grid_n: int = fbm.DEFAULT_GRID_N,
    schedule_grid_n: int = 512,
) -> DistortionReport:
    """Monte Carlo estimate of E int_0^T (B_t - Bhat_t)^2 dt.

    Deterministic schedules are simulated exactly at the union of a uniform
    grid and the sample times (Cholesky), so off-grid times are honoured.
    Threshold policies run on circulant-embedding grid paths.
    """
    h = fbm.check_hurst(h)
    horizon = fbm.check_horizon(horizon)
    if int(n_paths) != n_paths or n_paths < 2:
        raise InvalidInputError("empirical distortion needs at least 2 paths")
    if estimator_mode not in ("full", "truncated"):
        raise InvalidInputError(f"mode must be 'full' or 'truncated', got {estimator_mode!r}")
    if isinstance(design, ThresholdPolicy):
        if not np.isclose(design.h, h) or not np.isclose(design.horizon, horizon):
            raise InvalidInputError("policy does not match the requested H and horizon")
        if estimator_mode == "full" and design.n > 8:
            raise InvalidInputError("full-history oracle supports at most 8 samples")
        errs = _policy_errors(design, int(n_paths), seed, estimator_mode, grid_n)
    elif isinstance(design, SamplingSchedule):
        if not np.isclose(design.horizon, horizon):
            raise InvalidInputError("schedule horizon does not match")
        errs = _schedule_errors(design, h, int(n_paths), seed, estimator_mode, schedule_grid_n)
    else:
        raise InvalidInputError(f"unsupported design type {type(design).__name__}")
    mean, se = _mean_se(errs)
    return DistortionReport(mean, DistortionMode.EMPIRICAL, se)
