"""2D constant-density acoustic finite differences, forward and adjoint.

The model is indexed ``m[ix, iz]`` with ``z`` pointing down; row ``iz = 0``
is the free surface. Absorbing layers pad the left, right and bottom edges.
Time stepping is second order, the Laplacian fourth order. In the layers
the equation carries a damping term,

    m u_tt + m sigma u_t - lap(u) = f,

discretized as ``A u[n+1] = B u[n] - C u[n-1] + q[n]`` with diagonal ``A``
and ``C`` and symmetric ``B``. The adjoint of that recursion is the same
recursion run backwards in time, which is what :func:`simulate_adjoint`
does, so forward and adjoint agree to round-off in the dot-product test.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .ot import TimeGrid

CFL_SAFETY = 0.9
DEFAULT_PML = 40
# damping strength is tied to a fixed velocity so the objective depends on m
# only through the wave operator
PML_VELOCITY = 3000.0
# 4th-order second-derivative stencil: (c2, c1, c0, c1, c2) / h^2
C0, C1, C2 = -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0


class CFLError(ValueError):
    pass


class GeometryError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


def ricker(f_peak, grid, delay=0.0):
    """Ricker wavelet with unit peak at ``t = delay``."""
    if not f_peak > 0:
        raise ValueError(f"peak frequency must be positive, got {f_peak}")
    t = grid.nodes if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    a = (np.pi * f_peak * (t - delay)) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


def bandpass_response(freqs, lo, hi):
    """Cosine-tapered pass band: 1 on ``[1.25 lo, hi / 1.25]``, 0 outside ``(lo, hi)``."""
    f = np.abs(np.asarray(freqs, dtype=float))
    lo_full, hi_full = 1.25 * lo, hi / 1.25
    h = np.zeros_like(f)
    h[(f >= lo_full) & (f <= hi_full)] = 1.0
    rise = (f > lo) & (f < lo_full)
    h[rise] = 0.5 * (1.0 - np.cos(np.pi * (f[rise] - lo) / (lo_full - lo)))
    fall = (f > hi_full) & (f < hi)
    h[fall] = 0.5 * (1.0 + np.cos(np.pi * (f[fall] - hi_full) / (hi - hi_full)))
    return h


def bandpass(trace, dt, lo, hi):
    """Zero-phase band-pass along the last axis (circular, no padding).

    The filter is a real symmetric operator, so it is its own adjoint.
    """
    nyquist = 0.5 / dt
    if not 0 < lo < hi < nyquist:
        raise ValueError(f"band ({lo}, {hi}) Hz must satisfy 0 < lo < hi < {nyquist} Hz")
    trace = np.asarray(trace, dtype=float)
    n = trace.shape[-1]
    spec = np.fft.rfft(trace, axis=-1)
    spec *= bandpass_response(np.fft.rfftfreq(n, dt), lo, hi)
    return np.fft.irfft(spec, n=n, axis=-1)


@dataclass
class SlownessModel:
    """Squared slowness ``m = 1/c^2`` (s^2/m^2) on an ``(nx, nz)`` grid."""

    m: np.ndarray
    dx: float
    dz: float

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        if self.m.ndim != 2:
            raise ValueError("model must be a 2-D array indexed [ix, iz]")
        if not (np.all(np.isfinite(self.m)) and np.all(self.m > 0)):
            raise ValueError("squared slowness must be finite and strictly positive")
        if not (self.dx > 0 and self.dz > 0):
            raise ValueError("grid spacings must be positive")

    @classmethod
    def from_velocity(cls, v, dx, dz):
        return cls(1.0 / np.asarray(v, dtype=float) ** 2, dx, dz)

    @property
    def shape(self):
        return self.m.shape

    @property
    def velocity(self):
        return 1.0 / np.sqrt(self.m)

    def check_bounds(self, vmin=1000.0, vmax=6000.0):
        v = self.velocity
        if v.min() < vmin or v.max() > vmax:
            raise ValueError(
                f"velocity range [{v.min():.1f}, {v.max():.1f}] m/s outside [{vmin}, {vmax}]"
            )

    def with_m(self, m):
        return SlownessModel(np.asarray(m, dtype=float).reshape(self.shape), self.dx, self.dz)


def max_stable_dt(model, safety=CFL_SAFETY):
    """Largest time step allowed for the 4th-order leapfrog scheme.

    The smaller of the usual ``min(dx, dz) / (sqrt(2) c_max)`` rule and the
    von Neumann limit of this stencil, both scaled by ``safety``. The first
    alone is not sufficient: with a 4th-order Laplacian the scheme goes
    unstable at about 0.61 h / c on a square grid.
    """
    c_max = model.velocity.max()
    rule = min(model.dx, model.dz) / (np.sqrt(2.0) * c_max)
    # |lap| <= (16/3)(1/dx^2 + 1/dz^2) for the 4th-order stencil
    exact = (np.sqrt(3.0) / 2.0) / (c_max * np.sqrt(1 / model.dx**2 + 1 / model.dz**2))
    return safety * min(rule, exact)


@dataclass
class Acquisition:
    """Sources, receivers and the source time function.

    ``wavelet`` is sampled at the simulation step ``dt``; its length sets the
    number of time levels. Gathers are recorded every ``record_stride`` steps.
    Positions are ``(x, z)`` in meters inside the physical domain.
    """

    sources: np.ndarray
    receivers: np.ndarray
    wavelet: np.ndarray
    dt: float
    record_stride: int = 1

    def __post_init__(self):
        self.sources = np.atleast_2d(np.asarray(self.sources, dtype=float))
        self.receivers = np.atleast_2d(np.asarray(self.receivers, dtype=float))
        self.wavelet = np.asarray(self.wavelet, dtype=float)
        if self.sources.shape[1] != 2 or self.receivers.shape[1] != 2:
            raise GeometryError("positions must be (x, z) pairs")
        if self.wavelet.ndim != 1 or self.wavelet.size < 3:
            raise ValueError("wavelet must be a 1-D array with at least 3 samples")
        if not self.dt > 0 or self.record_stride < 1:
            raise ValueError("dt must be positive and record_stride >= 1")

    @property
    def n_steps(self):
        return self.wavelet.size

    @property
    def record_grid(self):
        nt = (self.n_steps - 1) // self.record_stride + 1
        return TimeGrid(nt=nt, dt=self.dt * self.record_stride)

    @property
    def record_t(self):
        return (self.n_steps - 1) * self.dt

    def validate(self, model):
        lx = (model.shape[0] - 1) * model.dx
        lz = (model.shape[1] - 1) * model.dz
        for label, pts in (("source", self.sources), ("receiver", self.receivers)):
            bad = (pts[:, 0] < 0) | (pts[:, 0] > lx) | (pts[:, 1] < 0) | (pts[:, 1] > lz)
            if np.any(bad):
                i = int(np.flatnonzero(bad)[0])
                raise GeometryError(
                    f"{label} {i} at {tuple(pts[i])} lies outside the domain [0, {lx}] x [0, {lz}]"
                )
        limit = max_stable_dt(model)
        if self.dt > limit:
            raise CFLError(f"dt = {self.dt:.3e} s exceeds the stability limit {limit:.3e} s")


@njit(cache=True)
def _step(u, u_prev, a1, a2, a3, q, idx2, idz2, periodic, out):
    """One leapfrog update into ``out``; same stencil as ``WaveSolver.laplacian``."""
    nx, nz = u.shape
    for i in range(nx):
        for k in range(nz):
            c = u[i, k]
            lx = C0 * c
            lz = C0 * c
            for off, w in ((1, C1), (2, C2)):
                if periodic:
                    lx += w * (u[(i - off) % nx, k] + u[(i + off) % nx, k])
                    lz += w * (u[i, (k - off) % nz] + u[i, (k + off) % nz])
                    continue
                if i - off >= 0:
                    lx += w * u[i - off, k]
                if i + off < nx:
                    lx += w * u[i + off, k]
                if k + off < nz:
                    lz += w * u[i, k + off]
                if k - off >= 0:
                    lz += w * u[i, k - off]
                else:
                    # odd reflection about the free surface row
                    lz -= w * u[i, off - k]
            out[i, k] = a1[i, k] * c - a2[i, k] * u_prev[i, k] + a3[i, k] * (
                lx * idx2 + lz * idz2 + q[i, k])
    if not periodic:
        for i in range(nx):
            out[i, 0] = 0.0


@dataclass
class Wavefield:
    """Pressure snapshots (every ``snap_stride`` steps) and the recorded gather.

    ``snapshots[k]`` holds time level ``k * snap_stride`` on the padded grid.
    """

    gather: np.ndarray
    snapshots: np.ndarray = None
    snap_stride: int = 1
    solver: "WaveSolver" = field(default=None, repr=False)


class WaveSolver:
    """Finite-difference propagator for one model and acquisition geometry.

    Parameters
    ----------
    model : SlownessModel
    acq : Acquisition
    pml : int
        Absorbing layer width in cells (left, right and bottom).
    pml_velocity : float
        Velocity used to size the quadratic damping profile.
    boundary : {"pml", "periodic"}
        ``"periodic"`` drops the absorbing layers and the free surface and
        wraps the stencil in both directions (lossless, for reversibility
        checks).
    """

    def __init__(
        self, model, acq, pml=DEFAULT_PML, boundary="pml", reflection=1e-3,
        pml_velocity=PML_VELOCITY,
    ):
        if boundary not in ("pml", "periodic"):
            raise ValueError(f"unknown boundary {boundary!r}")
        acq.validate(model)
        self.model = model
        self.acq = acq
        self.boundary = boundary
        self.pml = pml if boundary == "pml" else 0
        self.dt = acq.dt
        nx, nz = model.shape
        p = self.pml
        self.shape = (nx + 2 * p, nz + p)
        self.interior = (slice(p, p + nx), slice(0, nz))
        self.m = np.pad(model.m, ((p, p), (0, p)), mode="edge")
        self.sigma = self._damping(reflection, pml_velocity)
        dt = self.dt
        a = self.m / dt**2 + self.m * self.sigma / (2 * dt)
        c = self.m / dt**2 - self.m * self.sigma / (2 * dt)
        self._a1 = 2 * self.m / dt**2 / a
        self._a2 = c / a
        self._a3 = 1.0 / a
        self._src = [self._weights(x, z) for x, z in acq.sources]
        self._rec = [self._weights(x, z) for x, z in acq.receivers]
        self._rec_idx, self._rec_w = self._flatten(self._rec)

    def _damping(self, reflection, velocity):
        nxp, nzp = self.shape
        p = self.pml
        if p == 0:
            return np.zeros(self.shape)
        width = p * min(self.model.dx, self.model.dz)
        sigma_max = 3.0 * velocity * np.log(1.0 / reflection) / (2.0 * width)
        ix = np.arange(nxp)
        iz = np.arange(nzp)
        dxl = np.clip(np.maximum(p - ix, ix - (nxp - 1 - p)), 0, None) / p
        dzl = np.clip(iz - (nzp - 1 - p), 0, None) / p
        return sigma_max * (dxl[:, None] ** 2 + dzl[None, :] ** 2)

    def _weights(self, x, z):
        # bilinear weights on the padded grid: (ix array, iz array, w array)
        nx, nz = self.model.shape
        fx, fz = x / self.model.dx, z / self.model.dz
        i0 = min(int(np.floor(fx)), max(nx - 2, 0))
        k0 = min(int(np.floor(fz)), max(nz - 2, 0))
        wx, wz = fx - i0, fz - k0
        ix = np.array([i0, i0 + 1, i0, i0 + 1]) + self.pml
        iz = np.array([k0, k0, k0 + 1, k0 + 1])
        w = np.array([(1 - wx) * (1 - wz), wx * (1 - wz), (1 - wx) * wz, wx * wz])
        keep = w != 0
        if self.boundary == "periodic":
            ix %= self.shape[0]
            iz %= self.shape[1]
        return ix[keep], iz[keep], w[keep]

    def _flatten(self, weights):
        # (n, 4) flat indices into the padded grid and matching weights
        idx = np.zeros((len(weights), 4), dtype=np.int64)
        w = np.zeros((len(weights), 4))
        for r, (ix, iz, wr) in enumerate(weights):
            idx[r, : wr.size] = np.ravel_multi_index((ix, iz), self.shape)
            w[r, : wr.size] = wr
        return idx, w

    @property
    def cell_area(self):
        return self.model.dx * self.model.dz

    def laplacian(self, u):
        """4th-order Laplacian with the solver's boundary treatment."""
        dx2, dz2 = self.model.dx**2, self.model.dz**2
        if self.boundary == "periodic":
            out = C0 * u * (1 / dx2 + 1 / dz2)
            for k, c in ((1, C1), (2, C2)):
                out += c * (np.roll(u, k, 0) + np.roll(u, -k, 0)) / dx2
                out += c * (np.roll(u, k, 1) + np.roll(u, -k, 1)) / dz2
            return out
        g = np.zeros((u.shape[0] + 4, u.shape[1] + 4))
        g[2:-2, 2:-2] = u
        # free surface at iz = 0: odd reflection about the surface row
        g[2:-2, 1] = -u[:, 1]
        g[2:-2, 0] = -u[:, 2]
        c = g[2:-2, 2:-2]
        out = C0 * c * (1 / dx2 + 1 / dz2)
        out += (C1 * (g[1:-3, 2:-2] + g[3:-1, 2:-2]) + C2 * (g[:-4, 2:-2] + g[4:, 2:-2])) / dx2
        out += (C1 * (g[2:-2, 1:-3] + g[2:-2, 3:-1]) + C2 * (g[2:-2, :-4] + g[2:-2, 4:])) / dz2
        return out

    def _run(self, inject, n_steps, record=None, store_stride=None, on_step=None):
        """Generic recursion ``A w[k+1] = B w[k] - C w[k-1] + q[k]`` from rest.

        ``inject(k, q)`` adds the step-``k`` source into ``q``; ``record`` is a
        pair of flat indices and weights, sampled at every level. ``on_step(k, w)`` sees
        each new level ``k >= 1``.
        """
        u_prev = np.zeros(self.shape)
        u = np.zeros(self.shape)
        traces = None if record is None else np.zeros((record[0].shape[0], n_steps))
        snaps = None
        if store_stride:
            snaps = np.zeros(((n_steps - 1) // store_stride + 1,) + self.shape)
        q = np.zeros(self.shape)
        u_next = np.zeros(self.shape)
        periodic = self.boundary == "periodic"
        idx2, idz2 = 1.0 / self.model.dx**2, 1.0 / self.model.dz**2
        for k in range(n_steps - 1):
            q.fill(0.0)
            inject(k, q)
            _step(u, u_prev, self._a1, self._a2, self._a3, q, idx2, idz2, periodic, u_next)
            u_prev, u, u_next = u, u_next, u_prev
            level = k + 1
            if traces is not None:
                traces[:, level] = np.einsum("ij,ij->i", u.ravel()[record[0]], record[1])
            if snaps is not None and level % store_stride == 0:
                snaps[level // store_stride] = u
            if on_step is not None:
                on_step(level, u)
            if level % 50 == 0 and not np.isfinite(u).all():
                raise NumericalError(f"wavefield became non-finite at step {level}")
        if not np.isfinite(u).all():
            raise NumericalError(f"wavefield became non-finite by step {n_steps - 1}")
        return traces, snaps

    def forward(self, shot=0, store=True, snap_stride=1, wavelet=None, on_step=None):
        """Propagate the wavelet from source ``shot`` and record at the receivers.

        ``on_step(level, u)`` is called with every new padded-grid level.
        """
        ix, iz, w = self._src[shot]
        wav = self.acq.wavelet if wavelet is None else np.asarray(wavelet, dtype=float)
        scale = w / self.cell_area

        def inject(k, q):
            q[ix, iz] += wav[k] * scale

        traces, snaps = self._run(
            inject, self.acq.n_steps, record=(self._rec_idx, self._rec_w),
            store_stride=snap_stride if store else None, on_step=on_step,
        )
        stride = self.acq.record_stride
        return Wavefield(traces[:, ::stride], snaps, snap_stride, self)

    def adjoint(self, adj_src, store=True, snap_stride=1, forward=None, sample_sources=False):
        """Back-propagate receiver residuals.

        ``adj_src`` is an adjoint-source density of shape
        ``(n_receivers, n_record)``: the objective changes by
        ``sum(adj_src * delta_gather) * dt_record``. When ``forward`` is given,
        the imaging condition is accumulated step by step and returned as
        the second element instead of storing the adjoint snapshots.
        ``sample_sources`` additionally returns the adjoint field sampled
        with the transpose of the source injection (for dot-product tests).
        """
        adj_src = np.asarray(adj_src, dtype=float)
        nrec = len(self._rec)
        stride = self.acq.record_stride
        n = self.acq.n_steps
        nrec_t = self.acq.record_grid.nt
        if adj_src.shape != (nrec, nrec_t):
            raise ValueError(f"adjoint source shape {adj_src.shape} != {(nrec, nrec_t)}")
        weight = adj_src * (self.dt * stride)
        idx = self._rec_idx.ravel()
        w = self._rec_w

        def inject(k, q):
            level = n - 1 - k  # forward time level receiving this residual
            if level % stride or level == 0:
                return
            # receivers may share grid nodes, so accumulate unbuffered
            np.add.at(q.ravel(), idx, (weight[:, level // stride, None] * w).ravel())

        src_traces = None
        if sample_sources:
            src_traces = np.zeros((len(self._src), n))

        grad = None
        on_step = None
        if forward is not None or sample_sources:
            if forward is not None:
                grad = np.zeros(self.shape)
                imager = _Imager(self, forward)

            def on_step(k, lam):
                level = n - k
                if forward is not None:
                    imager.accumulate(grad, level, lam)
                if sample_sources:
                    for s, (ix, iz, w) in enumerate(self._src):
                        src_traces[s, level] = (w / self.cell_area) @ lam[ix, iz]

        keep = store and forward is None
        _, snaps = self._run(inject, n, store_stride=1 if keep else None, on_step=on_step)
        field = None
        if keep:
            # run level r holds forward level n - r
            levels = np.arange(0, n, snap_stride)
            lam = np.zeros((levels.size,) + self.shape)
            lam[1:] = snaps[n - levels[1:]]
            field = Wavefield(np.zeros((nrec, 0)), lam, snap_stride, self)
        if forward is not None:
            grad = self.crop_gradient(grad)
        out = (field, grad) if forward is not None else field
        if sample_sources:
            return out, src_traces
        return out

    def crop_gradient(self, g):
        """Restrict a padded-grid gradient to the physical model (layers dropped)."""
        return g[self.interior].copy()


class _Imager:
    """Accumulates ``-sum_n lam[n] * (second difference of u)[n]`` during back-propagation."""

    def __init__(self, solver, fwd):
        if fwd.snapshots is None:
            raise ValueError("forward wavefield was run without snapshots")
        self.s = fwd.snap_stride
        self.u = fwd.snapshots
        self.dt = solver.dt
        self.sigma = solver.sigma

    def accumulate(self, grad, level, lam):
        s = self.s
        if level < 1 or level >= self.u.shape[0] * s or level % s:
            return
        i = level // s
        u0 = self.u[i]
        u1 = self.u[i - 1]
        u2 = self.u[i - 2] if i >= 2 else 0.0
        h = s * self.dt
        d2 = (u0 - 2 * u1 + u2) / h**2
        d1 = (u0 - u2) / (2 * h)
        grad -= s * lam * (d2 + self.sigma * d1)


def simulate_forward(model, acq, shot=0, pml=DEFAULT_PML, store=True, snap_stride=1):
    """Forward-propagate source ``shot``; returns a :class:`Wavefield`."""
    return WaveSolver(model, acq, pml=pml).forward(shot, store=store, snap_stride=snap_stride)


def simulate_adjoint(model, acq, adj_src, pml=DEFAULT_PML, snap_stride=1):
    """Back-propagate the adjoint source; snapshots are in forward time order."""
    return WaveSolver(model, acq, pml=pml).adjoint(adj_src, snap_stride=snap_stride)


def imaging_condition(fwd, adj):
    """Model gradient ``-sum_n v[n] * d2u[n]`` from stored forward/adjoint fields.

    The second difference is taken backwards, pairing ``v[n]`` with
    ``u[n] - 2u[n-1] + u[n-2]``, which makes the result the exact gradient of
    the discrete objective when both strides are 1. Absorbing-layer cells
    are dropped.
    """
    if fwd.snap_stride != adj.snap_stride:
        raise ValueError(
            f"snapshot stride mismatch: forward {fwd.snap_stride}, adjoint {adj.snap_stride}"
        )
    solver = fwd.solver
    imager = _Imager(solver, fwd)
    grad = np.zeros(solver.shape)
    s = fwd.snap_stride
    for i in range(1, min(fwd.snapshots.shape[0], adj.snapshots.shape[0])):
        imager.accumulate(grad, i * s, adj.snapshots[i])
    return solver.crop_gradient(grad)
