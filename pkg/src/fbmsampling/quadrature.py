"""Numerical integration used by the distortion formulas.

``quad`` is a vectorised adaptive Simpson rule with global error control:
every pass evaluates the integrand on all open panels at once and splits the
panels whose error estimate is too large.  Global (rather than per-panel)
control matters because several integrands here behave like ``|s - tau|^{2H}``
near an endpoint, where a per-panel tolerance proportional to width is never
met.

``graded_legendre`` is a fixed rule for many short integrals evaluated in a
batch, with panels refined geometrically toward the left endpoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, QuadratureError

__all__ = ["QuadratureSpec", "DEFAULT_SPEC", "quad", "graded_legendre", "graded_nodes"]


@dataclass(frozen=True)
class QuadratureSpec:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_subdivisions: int = 2**16

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise InvalidInputError("quadrature tolerances must be positive")
        if int(self.max_subdivisions) < 1:
            raise InvalidInputError("max_subdivisions must be at least 1")


DEFAULT_SPEC = QuadratureSpec()
_INITIAL_PANELS = 8


def _simpson_pair(a, b, f0, f1, f2, f3, f4):
    """Coarse and refined Simpson estimates on panels sampled at five points."""
    w = b - a
    coarse = w / 6.0 * (f0 + 4.0 * f2 + f4)
    fine = w / 12.0 * (f0 + 4.0 * f1 + 2.0 * f2 + 4.0 * f3 + f4)
    return coarse, fine


def _panel_values(f, a, b):
    x = np.linspace(0.0, 1.0, 5)[None, :] * (b - a)[:, None] + a[:, None]
    x[:, -1] = b
    y = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
    return y


def quad(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    spec: QuadratureSpec = DEFAULT_SPEC,
    points: Sequence[float] = (),
) -> float:
    """Integrate a vectorised ``f`` over ``[a, b]``.

    ``points`` are interior breakpoints (kinks) that become panel boundaries.
    Raises :class:`QuadratureError` with the best estimate when the tolerance
    is not met within ``spec.max_subdivisions`` panels.
    """
    a, b = float(a), float(b)
    if b < a:
        raise InvalidInputError(f"integration limits out of order: [{a}, {b}]")
    if a == b:
        return 0.0

    edges = [a] + sorted(p for p in points if a < p < b) + [b]
    lo = np.concatenate(
        [np.linspace(l, r, _INITIAL_PANELS + 1)[:-1] for l, r in zip(edges, edges[1:])]
    )
    hi = np.concatenate(
        [np.linspace(l, r, _INITIAL_PANELS + 1)[1:] for l, r in zip(edges, edges[1:])]
    )
    y = _panel_values(f, lo, hi)

    done_value = 0.0
    done_error = 0.0
    n_panels = lo.size
    while True:
        if not np.all(np.isfinite(y)):
            raise QuadratureError("integrand is not finite on the integration range", np.nan, np.inf)
        coarse, fine = _simpson_pair(lo, hi, *y.T)
        # no Richardson step: near |x - a|^p endpoints the error does not
        # shrink by 16 per halving, so the raw difference is the safer bound
        err = np.abs(fine - coarse)
        value = fine
        total = done_value + value.sum()
        tol = max(spec.abs_tol, spec.rel_tol * abs(total))
        total_err = done_error + err.sum()
        if total_err <= tol:
            return float(total)

        # split only panels carrying more than their share of the budget
        split = err > tol / (2.0 * (n_panels + 1))
        # panels too narrow to split in floating point are frozen
        mid = 0.5 * (lo + hi)
        frozen = split & ((mid <= lo) | (mid >= hi))
        if frozen.any():
            split &= ~frozen
        keep = ~split
        done_value += value[keep].sum()
        done_error += err[keep].sum()
        if not split.any():
            raise QuadratureError(
                f"tolerance {tol:.3g} not reached (error estimate {total_err:.3g})",
                float(total),
                float(total_err),
            )
        n_panels += int(split.sum())
        if n_panels > spec.max_subdivisions:
            raise QuadratureError(
                f"exceeded {spec.max_subdivisions} panels (error estimate {total_err:.3g})",
                float(total),
                float(total_err),
            )

        ys, l, r = y[split], lo[split], hi[split]
        m = 0.5 * (l + r)
        # children reuse three of the parent's five samples
        xl = np.stack([l + 0.25 * (m - l), l + 0.75 * (m - l)], axis=1)
        xr = np.stack([m + 0.25 * (r - m), m + 0.75 * (r - m)], axis=1)
        new = np.asarray(f(np.concatenate([xl, xr], axis=1).ravel()), dtype=float)
        new = new.reshape(-1, 4)
        left = np.column_stack([ys[:, 0], new[:, 0], ys[:, 1], new[:, 1], ys[:, 2]])
        right = np.column_stack([ys[:, 2], new[:, 2], ys[:, 3], new[:, 3], ys[:, 4]])
        lo = np.concatenate([l, m])
        hi = np.concatenate([m, r])
        y = np.concatenate([left, right])


@lru_cache(maxsize=16)
def _reference_nodes(levels: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1], panels [2^-(k+1), 2^-k] plus [0, 2^-levels]."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    edges = np.concatenate([[0.0], 2.0 ** -np.arange(levels, -1, -1, dtype=float)])
    width = np.diff(edges)
    nodes = (edges[:-1, None] + width[:, None] * x[None, :]).ravel()
    weights = (width[:, None] * w[None, :]).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def graded_nodes(a, b, levels: int = 40, order: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes and weights for many intervals at once.

    ``a`` and ``b`` broadcast to a common shape ``S``; the result has shape
    ``S + (levels + 1) * order``.  Panels halve in width toward ``a``, which
    suits integrands with an ``(x - a)^p`` endpoint behaviour.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    u, w = _reference_nodes(levels, order)
    width = (b - a)[..., None]
    return a[..., None] + width * u, width * w


def graded_legendre(f, a, b, levels: int = 40, order: int = 8) -> np.ndarray:
    """Batch integral of ``f`` over ``[a, b]`` (elementwise over broadcast limits).

    ``f`` receives node arrays of shape ``S + (nodes,)`` and must return the
    same shape.
    """
    x, w = graded_nodes(a, b, levels, order)
    return np.sum(f(x) * w, axis=-1)
