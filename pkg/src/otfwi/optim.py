"""Projected limited-memory BFGS with box constraints.

Bounds are enforced by projecting every trial point onto the box; the
quasi-Newton direction is computed by the usual two-loop recursion and
restricted to the free variables. Iteration stops when the relative decrease

    (J_k - J_{k+1}) / max(J_k, J_{k+1}, 1)

of an accepted step falls below ``stop_tol``.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

CURVATURE_EPS = 1e-10


class IterationRecord(NamedTuple):
    iter: int
    value: float
    grad_norm: float
    step: float
    x: np.ndarray


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings of :func:`minimize`; ``lower``/``upper`` are scalars or per-variable arrays."""

    memory: int = 10
    lower: object = -np.inf
    upper: object = np.inf
    max_iters: int = 100
    stop_tol: float = 1e-5
    c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 20

    def __post_init__(self):
        if self.memory < 1 or self.max_iters < 0 or self.max_backtracks < 1:
            raise ValueError("memory and max_backtracks must be >= 1, max_iters >= 0")
        if not self.stop_tol > 0:
            raise ValueError(f"stop_tol must be positive, got {self.stop_tol}")
        if not (0 < self.c1 < 1 and 0 < self.backtrack < 1):
            raise ValueError("c1 and backtrack must lie in (0, 1)")
        if np.any(np.asarray(self.lower) >= np.asarray(self.upper)):
            raise ValueError("every lower bound must be below its upper bound")


@dataclass
class OptimizationResult:
    x: object
    value: float
    status: str
    history: list = field(default_factory=list)

    @property
    def n_iters(self):
        return len(self.history) - 1


def relative_decrease(j_old, j_new):
    return (j_old - j_new) / max(j_old, j_new, 1.0)


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        q += (a - rho * (y @ q)) * s
    return q


def _checked(fun, x, wrap):
    value, grad = fun(wrap(x))
    value = float(value)
    grad = np.asarray(grad, dtype=float).ravel()
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))
        raise FloatingPointError(
            f"objective returned value={value} and {bad.size} non-finite gradient entries "
            f"(first at {bad[:5].tolist()})"
        )
    if grad.size != x.size:
        raise ValueError(f"gradient has {grad.size} entries for {x.size} variables")
    return value, grad


def _bound(b, n):
    b = np.asarray(b, dtype=float)
    b = np.full(n, float(b)) if b.ndim == 0 else b.ravel()
    if b.size != n:
        raise ValueError(f"bounds have {b.size} entries for {n} variables")
    return b


def minimize(x0, fun, cfg=OptimizerConfig(), callback=None):
    """Minimize ``fun`` over the box ``[cfg.lower, cfg.upper]``.

    ``fun(x)`` returns ``(value, gradient)``. ``x0`` may be an array or a
    model object with ``.m`` and ``.with_m``; ``fun`` then receives and the
    result holds the same kind of object. ``callback(record)`` is called on
    every accepted iterate. The result's ``status`` is one of
    ``"converged"``, ``"stationary"``, ``"max_iters"`` or ``"line_search"``.
    """
    if hasattr(x0, "with_m"):
        template = x0
        x = np.asarray(x0.m, dtype=float).ravel().copy()

        def wrap(v):
            return template.with_m(v)
    else:
        shape = np.shape(x0)
        x = np.asarray(x0, dtype=float).ravel().copy()

        def wrap(v):
            return v.reshape(shape)

    lo = _bound(cfg.lower, x.size)
    hi = _bound(cfg.upper, x.size)
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("initial point lies outside the bounds")

    f, g = _checked(fun, x, wrap)
    history = [IterationRecord(0, f, float(np.abs(g).max()), 0.0, wrap(x.copy()))]
    if callback:
        callback(history[-1])
    pairs = deque(maxlen=cfg.memory)
    status = "max_iters"

    for it in range(1, cfg.max_iters + 1):
        # variables pinned at a bound with the gradient pushing outward stay fixed
        pinned = ((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0))
        g_free = np.where(pinned, 0.0, g)
        if not np.any(g_free):
            status = "stationary"
            break
        d = -_two_loop(g_free, list(pairs))
        d[pinned] = 0.0
        if g_free @ d >= 0:
            pairs.clear()
            d = -g_free
        step = 1.0 / np.abs(g_free).max() if it == 1 else 1.0

        for _ in range(cfg.max_backtracks):
            x_new = np.clip(x + step * d, lo, hi)
            f_new, g_new = _checked(fun, x_new, wrap)
            if f_new <= f + cfg.c1 * (g @ (x_new - x)) and np.any(x_new != x):
                break
            step *= cfg.backtrack
        else:
            status = "line_search"
            break

        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > CURVATURE_EPS:
            pairs.append((s, y, 1.0 / sy))
        decrease = relative_decrease(f, f_new)
        x, f, g = x_new, f_new, g_new
        history.append(IterationRecord(it, f, float(np.abs(g).max()), step, wrap(x.copy())))
        if callback:
            callback(history[-1])
        if decrease < cfg.stop_tol:
            status = "converged"
            break

    return OptimizationResult(wrap(x), f, status, history)
