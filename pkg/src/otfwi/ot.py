"""Quadratic Wasserstein transport between discrete traces on the real line.

Traces are point masses sitting on the nodes of a uniform time grid. The
default transport scheme is exact for point masses (it agrees with the
coupling LP); the interpolated scheme reads the CDF as piecewise linear
between nodes. Every routine runs in a single sweep over the samples.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

MASS_TOL = 1e-12

__all__ = [
    "TimeGrid",
    "cdf",
    "pseudo_inverse_compose",
    "transport_cost",
    "transport_gradient",
    "transport_cost_and_gradient",
    "w1_distance",
    "displacement_interpolation",
    "lp_oracle_cost",
    "check_mass",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling ``t_k = t0 + k * dt`` for ``k = 0 .. nt-1``."""

    nt: int
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        if self.nt < 2:
            raise ValueError(f"nt must be >= 2, got {self.nt}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def nodes(self):
        return self.t0 + self.dt * np.arange(self.nt)

    @classmethod
    def from_nodes(cls, t):
        t = np.asarray(t, dtype=float)
        return cls(nt=t.size, dt=float(t[1] - t[0]), t0=float(t[0]))


def _nodes(t):
    if isinstance(t, TimeGrid):
        return t.nodes
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ValueError("time nodes must be a 1-D array with at least 2 entries")
    if np.any(np.diff(t) <= 0):
        raise ValueError("time nodes must be strictly increasing")
    return t


def check_mass(p, name="p", tol=MASS_TOL):
    """Validate a point-mass trace and return it as a float array."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{name} contains non-finite values")
    if np.any(p < 0):
        raise ValueError(f"{name} has negative mass at index {int(np.argmin(p))}")
    total = p.sum()
    if abs(total - 1.0) > tol * max(1, p.size):
        raise ValueError(f"{name} is not normalized: total mass {total!r}")
    return p


def _pair(p0, p1, t):
    t = _nodes(t)
    p0 = check_mass(p0, "p0")
    p1 = check_mass(p1, "p1")
    if p0.shape != t.shape or p1.shape != t.shape:
        raise ValueError(
            f"grid mismatch: p0 {p0.shape}, p1 {p1.shape}, nodes {t.shape}"
        )
    return p0, p1, t


def cdf(p):
    """Running sum of a point-mass trace. The last entry is 1 to within 1e-12."""
    p = check_mass(p)
    return np.cumsum(p)


@njit(cache=True)
def _pseudo_inverse(f0, f1, t):
    # Two-pointer merge; also returns d(phi)/d(f1) on each branch.
    n = t.size
    phi = np.empty(n)
    slope = np.zeros(n)
    m = 0
    for k in range(n):
        ft = min(max(f1[k], 0.0), 1.0)
        while m < n - 1 and f0[m] < ft:
            m += 1
        if m == 0:
            phi[k] = t[0]
        elif m == n - 1 and f0[m] < ft:
            phi[k] = t[m]
        else:
            df = f0[m] - f0[m - 1]
            if df > 0.0:
                a = (ft - f0[m - 1]) / df
                slope[k] = (t[m] - t[m - 1]) / df
            else:
                # flat CDF segment: inf convention picks the left endpoint
                a = 0.0
            phi[k] = (1.0 - a) * t[m - 1] + a * t[m]
    return phi, slope


def pseudo_inverse_compose(f0, f1, t):
    """Evaluate ``f0^[-1](f1(t_k))`` at every node (the monotone transport map).

    ``f0`` and ``f1`` are CDF values on the nodes ``t``. Ties on flat
    segments of ``f0`` resolve to the left end of the segment.
    """
    t = _nodes(t)
    f0 = np.ascontiguousarray(f0, dtype=float)
    f1 = np.ascontiguousarray(f1, dtype=float)
    if f0.shape != t.shape or f1.shape != t.shape:
        raise ValueError("CDFs and nodes must share one grid")
    return _pseudo_inverse(f0, f1, t)[0]


@njit(cache=True)
def _quantile_merge(f0, f1, t):
    # Merge the jump levels of both step CDFs; on each level interval the
    # quantiles are t[i] and t[j]. Potentials follow complementary slackness
    # along the staircase support of the monotone coupling.
    n = t.size
    phi = np.empty(n)
    psi = np.empty(n)
    i = 0
    j = 0
    prev = 0.0
    cost = 0.0
    psi[0] = 0.0
    phi[0] = 0.0
    while True:
        a = 1.0 if i == n - 1 else f0[i]
        b = 1.0 if j == n - 1 else f1[j]
        level = min(a, b)
        if level > prev:
            cost += (level - prev) * (t[i] - t[j]) ** 2
            prev = level
        if i == n - 1 and j == n - 1:
            break
        if a == b and i < n - 1 and j < n - 1:
            # degenerate level: average the two one-sided potentials
            c_right = (t[i + 1] - t[j + 1]) ** 2
            via_i = c_right - ((t[i + 1] - t[j]) ** 2 - psi[j])
            via_j = (t[i] - t[j + 1]) ** 2 - phi[i]
            i += 1
            j += 1
            psi[j] = 0.5 * (via_i + via_j)
            phi[i] = c_right - psi[j]
        elif a <= b and i < n - 1:
            i += 1
            phi[i] = (t[i] - t[j]) ** 2 - psi[j]
        else:
            j += 1
            psi[j] = (t[i] - t[j]) ** 2 - phi[i]
    return cost, phi, psi


def transport_cost(p0, p1, t, scheme="quantile"):
    """Quadratic transport cost between two point-mass traces, in time units squared.

    ``scheme="quantile"`` integrates ``(Q0(s) - Q1(s))^2`` over ``s in [0, 1]``
    with the exact (step) quantile functions, which is the optimal coupling
    cost for point masses. ``scheme="interpolated"`` maps every sample of
    ``p1`` through the linearly interpolated ``f0^[-1](f1(t_k))`` and returns
    ``sum_k p1_k (T(t_k) - t_k)^2``; it is not symmetric and only
    approximates the coupling optimum.
    """
    p0, p1, t = _pair(p0, p1, t)
    f0, f1 = np.cumsum(p0), np.cumsum(p1)
    if scheme == "quantile":
        return float(_quantile_merge(f0, f1, t)[0])
    if scheme == "interpolated":
        phi, _ = _pseudo_inverse(f0, f1, t)
        return float(np.sum(p1 * (phi - t) ** 2))
    raise ValueError(f"unknown scheme {scheme!r}")


@njit(cache=True)
def _integration_helper(u, phi, t):
    # xi_k = int_{u_k}^{t_end} (s - phi(s)) ds with trapezoids.
    n = t.size
    g = t - phi
    xi = np.empty(n)
    m = n - 2
    s = 0.0
    for k in range(n - 1, -1, -1):
        ft = u[k]
        while t[m] > ft and m > 0:
            s += 0.5 * (g[m] + g[m + 1]) * (t[m + 1] - t[m])
            m -= 1
        a = (ft - t[m]) / (t[m + 1] - t[m])
        xi[k] = s + 0.5 * ((1.0 - a) * g[m] + (1.0 + a) * g[m + 1]) * (t[m + 1] - ft)
    return xi


def transport_gradient(p0, p1, t, scheme="quantile"):
    """First variation of :func:`transport_cost` with respect to ``p1``.

    The result is defined up to an additive constant; only its pairing with
    zero-sum perturbations is meaningful.

    Parameters
    ----------
    p0, p1 : array_like
        Normalized point-mass traces on the nodes ``t``.
    t : array_like or TimeGrid
        Time nodes.
    scheme : {"quantile", "interpolated", "trapezoid"}
        ``"quantile"`` returns the Kantorovich potential of ``p1`` for the
        point-mass problem, which is the exact derivative of the default
        cost. ``"interpolated"`` differentiates the interpolated cost
        exactly. ``"trapezoid"`` evaluates the continuous formula
        ``(T(t) - t)^2 + 2 int_{T(t)}^{t_end} (s - S(s)) ds`` with the
        trapezoid rule (``S`` is the inverse map); it is only first-order
        accurate in ``dt`` against either discrete cost.
    """
    return transport_cost_and_gradient(p0, p1, t, scheme)[1]


def transport_cost_and_gradient(p0, p1, t, scheme="quantile"):
    """Return ``(cost, gradient)`` sharing one sweep; see :func:`transport_gradient`."""
    p0, p1, t = _pair(p0, p1, t)
    f0, f1 = np.cumsum(p0), np.cumsum(p1)
    if scheme == "quantile":
        cost, _, psi = _quantile_merge(f0, f1, t)
        return float(cost), psi
    phi0, slope = _pseudo_inverse(f0, f1, t)
    cost = float(np.sum(p1 * (phi0 - t) ** 2))
    if scheme == "interpolated":
        # d/dp1_j of sum_k p1_k (phi_k - t_k)^2 where phi_k depends on f1_k
        tail = 2.0 * p1 * (phi0 - t) * slope
        return cost, (phi0 - t) ** 2 + np.cumsum(tail[::-1])[::-1]
    if scheme == "trapezoid":
        phi1, _ = _pseudo_inverse(f1, f0, t)
        xi = _integration_helper(phi0, phi1, t)
        return cost, (phi0 - t) ** 2 + 2.0 * xi
    raise ValueError(f"unknown scheme {scheme!r}")


def w1_distance(p0, p1, t):
    """W1 distance, ``sum_k |F0_k - F1_k| (t_{k+1} - t_k)``."""
    p0, p1, t = _pair(p0, p1, t)
    gap = np.abs(np.cumsum(p0) - np.cumsum(p1))[:-1]
    return float(np.sum(gap * np.diff(t)))


def _quantile_knots(f, t):
    # Knots (s, Q(s)) of the quantile function of the piecewise-linear CDF.
    s = np.concatenate(([0.0], f[:-1], [1.0]))
    s = np.minimum(s, 1.0)
    q = np.concatenate(([t[0]], t))
    return s, q


def _cdf_from_quantile(s, q, t):
    idx = np.searchsorted(q, t, side="right")
    out = np.ones_like(t)
    inner = (idx > 0) & (idx < q.size)
    i = idx[inner]
    dq = q[i] - q[i - 1]
    frac = np.where(dq > 0, (t[inner] - q[i - 1]) / np.where(dq > 0, dq, 1.0), 0.0)
    out[inner] = s[i - 1] + frac * (s[i] - s[i - 1])
    out[idx == 0] = 0.0
    return out


def displacement_interpolation(p0, p1, t, alpha):
    """Point masses of the W2 geodesic between ``p0`` and ``p1`` at ``alpha``.

    The interpolant's quantile function is ``(1-alpha) Q0 + alpha Q1``; its
    CDF is sampled at the nodes and differenced back into point masses.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    p0, p1, t = _pair(p0, p1, t)
    s0, q0 = _quantile_knots(np.cumsum(p0), t)
    s1, q1 = _quantile_knots(np.cumsum(p1), t)
    s = np.union1d(s0, s1)
    s = s[(s >= 0) & (s <= 1)]
    q = (1 - alpha) * _quantile_at(s0, q0, s) + alpha * _quantile_at(s1, q1, s)
    q = np.maximum.accumulate(q)
    f = _cdf_from_quantile(s, q, t)
    f[-1] = 1.0
    return np.diff(f, prepend=0.0)


def _quantile_at(s_knots, q_knots, s):
    # Left-continuous quantile: on a jump pick the lowest matching time.
    idx = np.searchsorted(s_knots, s, side="left")
    idx = np.clip(idx, 1, s_knots.size - 1)
    ds = s_knots[idx] - s_knots[idx - 1]
    frac = np.where(ds > 0, (s - s_knots[idx - 1]) / np.where(ds > 0, ds, 1.0), 1.0)
    out = q_knots[idx - 1] + frac * (q_knots[idx] - q_knots[idx - 1])
    return np.where(s <= s_knots[0], q_knots[0], out)


def lp_oracle_cost(p0, p1, t, exponent=2, solver="monotone"):
    """Optimal coupling cost with ground cost ``|x - y|**exponent`` (test oracle).

    ``solver="monotone"`` runs the greedy north-west-corner matching, which is
    optimal on the line for convex costs. ``solver="linprog"`` solves the
    dense coupling LP with HiGHS and is restricted to ``nt <= 64``.
    """
    if exponent not in (1, 2):
        raise ValueError("exponent must be 1 or 2")
    p0, p1, t = _pair(p0, p1, t)
    n = t.size
    if n > 64:
        raise ValueError(f"lp_oracle_cost is capped at nt <= 64, got {n}")
    if solver == "monotone":
        return _monotone_cost(p0, p1, t, exponent)
    if solver == "linprog":
        return _linprog_cost(p0, p1, t, exponent)
    raise ValueError(f"unknown solver {solver!r}")


def _monotone_cost(p0, p1, t, exponent):
    a, b = p0.copy(), p1.copy()
    i = j = 0
    total = 0.0
    while i < a.size and j < b.size:
        w = min(a[i], b[j])
        total += w * abs(t[i] - t[j]) ** exponent
        a[i] -= w
        b[j] -= w
        if a[i] <= 0 and i < a.size - 1:
            i += 1
        elif b[j] <= 0 and j < b.size - 1:
            j += 1
        elif a[i] <= 0 or b[j] <= 0:
            break
    return float(total)


def _linprog_cost(p0, p1, t, exponent):
    from scipy.optimize import linprog

    n = t.size
    cost = np.abs(t[:, None] - t[None, :]) ** exponent
    rows = np.kron(np.eye(n), np.ones((1, n)))
    cols = np.kron(np.ones((1, n)), np.eye(n))
    res = linprog(
        cost.ravel(),
        A_eq=np.vstack([rows, cols]),
        b_eq=np.concatenate([p0, p1]),
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if not res.success:
        raise RuntimeError(f"coupling LP failed: {res.message}")
    return float(res.fun)
