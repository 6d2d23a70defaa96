"""Kiefer-Wolfowitz stochastic approximation for threshold policies.

The iterate is the vector of threshold coefficients ``q`` (one sample:
``eta = q T^{(2H+1)/4}``), and the objective being *maximised* is the mean
observable ``E[h]`` (or ``E[h*]``) divided by the zero-sample baseline, so the
default tuning constants do not depend on ``H`` or ``T``.

Tuning sequences are ``a_k(n) = alpha_k / (n + beta_k)`` and
``c_k(n) = gamma_k / n^{1/4}``.  :func:`adapt_tuning` rescales and shifts them
during a warm-up phase.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import fbm
from .distortion import DistortionMode, DistortionReport, baseline
from .errors import InvalidInputError, ObservableError
from .level import ThresholdPolicy, modified_observations, one_sample_observations, threshold_exponent

__all__ = [
    "KwConfig",
    "KwProblem",
    "KwResult",
    "KwState",
    "ModifiedObjective",
    "OneSampleObjective",
    "TuningSequences",
    "adapt_tuning",
    "initial_state",
    "kw_optimize",
    "kw_step_1d",
    "kw_step_multi",
]

# objective(points (m, d), batch, key) -> observations (m, batch); one key
# means one set of paths shared by every point in the call
Objective = Callable[[np.ndarray, int, int], np.ndarray]

_FINAL_KEY = 1 << 40
_RESAMPLE_SLOT = 32


@dataclass(frozen=True)
class TuningSequences:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.int64))
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if not (alpha.shape == beta.shape == gamma.shape):
            raise InvalidInputError("alpha, beta and gamma must have one entry per dimension")
        if np.any(alpha <= 0) or np.any(gamma <= 0) or np.any(beta < 0):
            raise InvalidInputError("need alpha > 0, gamma > 0 and beta >= 0")
        for name, v in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def constant(cls, dim: int, alpha=1.0, beta=10, gamma=0.5) -> "TuningSequences":
        return cls(np.full(dim, alpha), np.full(dim, beta), np.full(dim, gamma))

    def a(self, n: int) -> np.ndarray:
        return self.alpha / (n + self.beta)

    def c(self, n: int) -> np.ndarray:
        return self.gamma / n**0.25


@dataclass(frozen=True)
class KwState:
    iterate: np.ndarray
    n: int
    tuning: TuningSequences
    batch_size: int
    gradient_estimate: np.ndarray
    trace: tuple = ()
    lower: float = 0.01
    upper: float = 10.0
    noise: np.ndarray = field(default=None)  # standard error of the last Y
    last_step: np.ndarray = field(default=None)  # unprojected a * Y
    signs: tuple = ()  # recent sign(Y) vectors, newest last
    gamma_cap: np.ndarray = field(default=None)
    trace_len: int = 200

    @property
    def dim(self) -> int:
        return int(self.iterate.size)

    def moving_range(self) -> np.ndarray:
        if not self.trace:
            return np.full(self.dim, np.inf)
        arr = np.asarray(self.trace)
        return arr.max(axis=0) - arr.min(axis=0)


def initial_state(
    init,
    batch_size: int = 100,
    tuning: Optional[TuningSequences] = None,
    lower: float = 0.01,
    upper: float = 10.0,
    trace_len: int = 200,
    gamma_cap: float = 2.0,
) -> KwState:
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    if int(batch_size) != batch_size or batch_size < 1:
        raise InvalidInputError("batch_size must be a positive integer")
    if not lower < upper:
        raise InvalidInputError("feasible box must have lower < upper")
    if np.any(x < lower) or np.any(x > upper):
        raise InvalidInputError(f"initial iterate {x.tolist()} lies outside [{lower}, {upper}]")
    tuning = tuning or TuningSequences.constant(x.size)
    if tuning.alpha.size != x.size:
        raise InvalidInputError("tuning dimension does not match the iterate")
    x.setflags(write=False)
    return KwState(
        iterate=x,
        n=1,
        tuning=tuning,
        batch_size=int(batch_size),
        gradient_estimate=np.zeros(x.size),
        trace=(),
        lower=float(lower),
        upper=float(upper),
        noise=np.zeros(x.size),
        last_step=np.zeros(x.size),
        signs=(),
        gamma_cap=gamma_cap * tuning.gamma,
        trace_len=int(trace_len),
    )


def _observe(objective: Objective, points, batch: int, key: int) -> np.ndarray:
    """Evaluate, resampling once on non-finite output."""
    out = np.asarray(objective(points, batch, key), dtype=float)
    if np.all(np.isfinite(out)):
        return out
    out = np.asarray(objective(points, batch, key + _RESAMPLE_SLOT), dtype=float)
    if np.all(np.isfinite(out)):
        return out
    raise ObservableError("objective returned non-finite observations twice")


def _key(n: int, slot: int) -> int:
    return n * 64 + slot


def _advance(state: KwState, y: np.ndarray, se: np.ndarray) -> KwState:
    a = state.tuning.a(state.n)
    step = a * y
    x = np.clip(state.iterate + step, state.lower, state.upper)
    x.setflags(write=False)
    trace = (state.trace + (x,))[-state.trace_len :]
    # only estimates that stand out of their own noise count towards oscillation
    signs = (state.signs + (np.sign(y) * (np.abs(y) > se),))[-4:]
    return replace(
        state,
        iterate=x,
        n=state.n + 1,
        gradient_estimate=y,
        trace=trace,
        noise=se,
        last_step=step,
        signs=signs,
    )


def _pair(state: KwState, c: np.ndarray, k: int):
    """Perturbed coordinates, pulled inside the box."""
    x = state.iterate
    lo = max(x[k] - c[k], state.lower)
    hi = min(x[k] + c[k], state.upper)
    return lo, hi


def kw_step_1d(state: KwState, objective: Objective, crn: bool = True) -> KwState:
    """One central-difference step on a scalar iterate.

    With ``crn`` both sides of the difference share one batch of paths.
    """
    if state.dim != 1:
        raise InvalidInputError("kw_step_1d needs a one-dimensional iterate")
    c = state.tuning.c(state.n)
    lo, hi = _pair(state, c, 0)
    width = hi - lo
    b = state.batch_size
    if crn:
        obs = _observe(objective, np.array([[hi], [lo]]), b, _key(state.n, 0))
        diff = (obs[0] - obs[1]) / width
        y = np.array([diff.mean()])
        se = np.array([diff.std(ddof=1) / np.sqrt(b)]) if b > 1 else np.zeros(1)
    else:
        up = _observe(objective, np.array([[hi]]), b, _key(state.n, 0))[0]
        dn = _observe(objective, np.array([[lo]]), b, _key(state.n, 1))[0]
        y = np.array([(up.mean() - dn.mean()) / width])
        var = (up.var(ddof=1) + dn.var(ddof=1)) / b if b > 1 else 0.0
        se = np.array([np.sqrt(var) / width])
    return _advance(state, y, se)


def kw_step_multi(state: KwState, objective: Objective, crn: bool = False) -> KwState:
    """One step with a one-sided difference in every coordinate.

    Without ``crn`` each direction uses its own independent pair of batches.
    """
    d = state.dim
    if d < 2:
        raise InvalidInputError("kw_step_multi needs at least two dimensions")
    c = state.tuning.c(state.n)
    x = state.iterate
    b = state.batch_size
    y = np.empty(d)
    se = np.empty(d)
    shifted = np.repeat(x[None, :], d, axis=0)
    widths = np.empty(d)
    for k in range(d):
        top = min(x[k] + c[k], state.upper)
        if top <= x[k]:  # iterate on the upper edge: difference backwards
            top = x[k] - c[k]
        shifted[k, k] = top
        widths[k] = top - x[k]
    if crn:
        obs = _observe(objective, np.vstack([shifted, x[None, :]]), b, _key(state.n, 0))
        diffs = (obs[:d] - obs[d][None, :]) / widths[:, None]
        y[:] = diffs.mean(axis=1)
        se[:] = diffs.std(axis=1, ddof=1) / np.sqrt(b) if b > 1 else 0.0
    else:
        for k in range(d):
            up = _observe(objective, shifted[k : k + 1], b, _key(state.n, 2 * k))[0]
            base = _observe(objective, x[None, :], b, _key(state.n, 2 * k + 1))[0]
            y[k] = (up.mean() - base.mean()) / widths[k]
            var = (up.var(ddof=1) + base.var(ddof=1)) / b if b > 1 else 0.0
            se[k] = np.sqrt(var) / abs(widths[k])
    return _advance(state, y, se)


def adapt_tuning(state: KwState, gamma_factor: float = 1.5) -> KwState:
    """Scale and shift the tuning sequences from the latest step.

    * sign flips in four consecutive gradient estimates, each larger than its
      standard error: ``beta_k`` becomes ``n + 2 beta_k``, which halves
      ``a_k(n)``;
    * a proposal that leaves the box by more than the box width scales
      ``alpha_k`` by ``width / overshoot``;
    * ``|Y_k|`` below its own standard error multiplies ``gamma_k`` by
      ``gamma_factor`` (up to the cap held in the state).
    """
    if state.n < 2:
        raise InvalidInputError("adapt_tuning needs at least one completed step")
    alpha = state.tuning.alpha.copy()
    beta = state.tuning.beta.copy()
    gamma = state.tuning.gamma.copy()
    signs = state.signs
    width = state.upper - state.lower
    n = state.n

    if len(signs) == 4:
        s = np.asarray(signs)
        flips = np.all(s[1:] * s[:-1] < 0, axis=0)
        if flips.any():
            beta = np.where(flips, n + 2 * beta, beta)
            signs = ()

    prev = np.asarray(state.trace[-2]) if len(state.trace) >= 2 else None
    if prev is not None and state.last_step is not None:
        proposal = prev + state.last_step
        over = np.maximum(proposal - state.upper, state.lower - proposal)
        big = over > width
        if big.any():
            alpha = np.where(big, alpha * width / np.where(big, over, 1.0), alpha)

    if state.noise is not None:
        quiet = np.abs(state.gradient_estimate) < state.noise
        if quiet.any():
            cap = state.gamma_cap if state.gamma_cap is not None else np.full_like(gamma, np.inf)
            gamma = np.where(quiet, np.minimum(gamma * gamma_factor, cap), gamma)

    tuning = TuningSequences(alpha, beta, gamma)
    return replace(state, tuning=tuning, signs=signs)


# ---------------------------------------------------------------------------
# objectives built on simulated paths


@dataclass(frozen=True)
class OneSampleObjective:
    """``h(q T^{(2H+1)/4}, path) / J0`` on shared keyed batches."""

    h: float
    horizon: float
    grid_n: int = fbm.DEFAULT_GRID_N
    seed: int = 0
    precision: str = "single"

    def __call__(self, points, batch: int, key: int) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1)
        paths = fbm.simulate_paths(
            self.h, self.horizon, self.grid_n, batch, seed=self.seed, stream=key, precision=self.precision
        )
        scale = self.horizon ** threshold_exponent(self.h)
        obs = one_sample_observations(paths, pts * scale, self.h, self.horizon)
        return obs / baseline(self.h, self.horizon)


@dataclass(frozen=True)
class ModifiedObjective:
    """``h*(q, path) / J0`` on shared keyed batches."""

    h: float
    horizon: float
    mode: str = "full"
    grid_n: int = fbm.DEFAULT_GRID_N
    seed: int = 0
    precision: str = "single"

    def __call__(self, points, batch: int, key: int) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        paths = fbm.simulate_paths(
            self.h, self.horizon, self.grid_n, batch, seed=self.seed, stream=key, precision=self.precision
        )
        base = baseline(self.h, self.horizon)
        return np.stack(
            [modified_observations(paths, q, self.h, self.horizon, self.mode) / base for q in pts]
        )


# ---------------------------------------------------------------------------
# driver


@dataclass(frozen=True)
class KwProblem:
    kind: str  # "one-sample", "multi-full" or "multi-truncated"
    h: float
    horizon: float
    n: int = 1
    grid_n: int = fbm.DEFAULT_GRID_N

    def __post_init__(self):
        fbm.check_hurst(self.h)
        fbm.check_horizon(self.horizon)
        if self.kind not in ("one-sample", "multi-full", "multi-truncated"):
            raise InvalidInputError(f"unknown problem kind {self.kind!r}")
        if int(self.n) != self.n or self.n < 1:
            raise InvalidInputError("number of samples must be a positive integer")
        if self.kind == "one-sample" and self.n != 1:
            raise InvalidInputError("one-sample problems have n = 1")
        if self.kind == "multi-full" and self.n > 3:
            raise InvalidInputError("full-history level sampling supports at most 3 samples")

    @property
    def dim(self) -> int:
        return int(self.n)

    @property
    def mode(self) -> str:
        return "truncated" if self.kind == "multi-truncated" else "full"


@dataclass(frozen=True)
class KwConfig:
    batch_size: int = 100
    max_iter: int = 3000
    seed: int = 0
    init: Optional[tuple] = None
    alpha: float = 1.0
    beta: int = 10
    gamma: float = 0.5
    lower: float = 0.01
    upper: float = 10.0
    window: int = 200
    range_tol: float = 1e-3
    final_paths: int = 100_000
    crn: Optional[bool] = None  # None: on for one dimension, off otherwise
    adapt: bool = True
    adapt_until: int = 100

    def validate(self) -> None:
        if self.batch_size < 1 or self.max_iter < 1 or self.final_paths < 2:
            raise InvalidInputError("batch_size, max_iter >= 1 and final_paths >= 2 required")
        if self.window < 2 or self.range_tol <= 0:
            raise InvalidInputError("window >= 2 and range_tol > 0 required")


@dataclass(frozen=True)
class KwResult:
    policy: ThresholdPolicy
    distortion: DistortionReport
    state: KwState
    converged: bool
    history: tuple = field(repr=False, default=())

    @property
    def eta(self) -> float:
        """First threshold ``q_1 T^{(2H+1)/4}``."""
        return float(self.policy.q[0] * self.policy.horizon ** threshold_exponent(self.policy.h))

    def trace_csv(self) -> str:
        d = self.policy.n
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            ["n"]
            + [f"iterate_{k + 1}" for k in range(d)]
            + [f"Y_{k + 1}" for k in range(d)]
            + [f"a_{k + 1}" for k in range(d)]
            + [f"c_{k + 1}" for k in range(d)]
        )
        for row in self.history:
            w.writerow([row[0]] + [f"{v:.10g}" for v in row[1:]])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "q": self.policy.q.tolist(),
            "eta_1": self.eta,
            "h": self.policy.h,
            "horizon": self.policy.horizon,
            "distortion": self.distortion.to_dict(),
            "iterations": self.state.n - 1,
            "converged": self.converged,
        }


def _objective_for(problem: KwProblem, seed: int) -> Objective:
    if problem.kind == "one-sample":
        return OneSampleObjective(problem.h, problem.horizon, problem.grid_n, seed)
    return ModifiedObjective(problem.h, problem.horizon, problem.mode, problem.grid_n, seed)


def final_distortion(
    problem: KwProblem, q, n_paths: int, seed: int, chunk: int = 2000
) -> DistortionReport:
    """``J0 (1 - mean observable)`` on a batch disjoint from the optimisation paths."""
    objective = _objective_for(problem, seed)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    parts = []
    for lo in range(0, n_paths, chunk):
        size = min(chunk, n_paths - lo)
        parts.append(objective(q[None, :], size, _FINAL_KEY + lo // chunk)[0])
    obs = np.concatenate(parts)
    base = baseline(problem.h, problem.horizon)
    value = base * (1.0 - obs.mean())
    se = base * obs.std(ddof=1) / np.sqrt(obs.size)
    mode = {
        "one-sample": DistortionMode.LEVEL_FULL,
        "multi-full": DistortionMode.LEVEL_FULL,
        "multi-truncated": DistortionMode.LEVEL_TRUNCATED,
    }[problem.kind]
    return DistortionReport(float(value), mode, float(se))


def kw_optimize(
    problem: KwProblem,
    config: KwConfig = KwConfig(),
    objective: Optional[Objective] = None,
) -> KwResult:
    """Maximise the mean observable over threshold coefficients.

    Stops after ``max_iter`` steps or once every coordinate's range over the
    last ``window`` iterates is below ``range_tol``.
    """
    config.validate()
    d = problem.dim
    init = np.full(d, 0.7) if config.init is None else np.asarray(config.init, dtype=float)
    if init.size != d:
        raise InvalidInputError(f"init has {init.size} entries, problem has {d}")
    tuning = TuningSequences.constant(d, config.alpha, config.beta, config.gamma)
    state = initial_state(init, config.batch_size, tuning, config.lower, config.upper, config.window)
    objective = objective or _objective_for(problem, config.seed)
    crn = (d == 1) if config.crn is None else config.crn

    history = []
    converged = False
    while state.n <= config.max_iter:
        n = state.n
        a, c = state.tuning.a(n), state.tuning.c(n)
        if d == 1:
            state = kw_step_1d(state, objective, crn)
        else:
            state = kw_step_multi(state, objective, crn)
        history.append((n, *state.iterate, *state.gradient_estimate, *a, *c))
        if config.adapt and state.n <= config.adapt_until + 1:
            state = adapt_tuning(state)
        if len(state.trace) >= config.window and np.all(state.moving_range() < config.range_tol):
            converged = True
            break

    policy = ThresholdPolicy(state.iterate, problem.h, problem.horizon)
    report = final_distortion(problem, state.iterate, config.final_paths, config.seed)
    return KwResult(policy, report, state, converged, tuple(history))
