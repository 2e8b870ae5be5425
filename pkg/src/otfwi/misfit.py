"""Data misfits, their adjoint sources, and adjoint-state model gradients."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .encoding import EncodingConfig, encode_adjoint
from .ot import transport_cost_and_gradient
from .wave import DEFAULT_PML, PML_VELOCITY, WaveSolver


class MisfitResult(NamedTuple):
    """Objective value and adjoint-source density on the recording grid.

    The adjoint source ``a`` is normalized so that a perturbation ``dd`` of
    the gather changes the value by ``sum(a * dd) * dt``.
    """

    value: float
    adjoint_source: np.ndarray


def _check_pair(syn, obs):
    syn = np.atleast_2d(np.asarray(syn, dtype=float))
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    if syn.shape != obs.shape:
        raise ValueError(f"geometry mismatch: synthetic {syn.shape}, observed {obs.shape}")
    return syn, obs


def l2_misfit(syn, obs, dt):
    """``0.5 * sum((syn - obs)^2) * dt`` with adjoint source ``syn - obs``."""
    syn, obs = _check_pair(syn, obs)
    res = syn - obs
    return MisfitResult(0.5 * float(np.sum(res**2)) * dt, res)


def w2_misfit(syn, obs, dt, cfg=EncodingConfig(), amp_scale=1.0, weights=None,
              scheme="quantile", potential_shift=0.0):
    """Trace-by-trace transport misfit between encoded gathers.

    Every receiver trace is divided by ``amp_scale`` and encoded; the value
    sums ``T(obs_r, syn_r)`` over receivers (optionally weighted). The
    synthetic sits in the differentiated slot. ``potential_shift`` adds a
    constant to every Kantorovich potential, which must not change the
    adjoint source.
    """
    syn, obs = _check_pair(syn, obs)
    nrec, nt = syn.shape
    if weights is None:
        weights = np.ones(nrec)
    t = np.arange(nt) * dt
    u = syn / amp_scale
    enc_syn = cfg.encode(u).pdf
    enc_obs = cfg.encode(obs / amp_scale).pdf
    value = 0.0
    phi = np.empty_like(syn)
    for r in range(nrec):
        cost, phi[r] = transport_cost_and_gradient(enc_obs[r], enc_syn[r], t, scheme)
        value += weights[r] * cost
        phi[r] *= weights[r]
    phi += potential_shift
    adj = encode_adjoint(u, phi, cfg) / (amp_scale * dt)
    if not np.all(np.isfinite(adj)):
        raise FloatingPointError("adjoint source is not finite")
    return MisfitResult(float(value), adj)


@dataclass(frozen=True)
class L2:
    def __call__(self, syn, obs, dt):
        return l2_misfit(syn, obs, dt)


@dataclass(frozen=True)
class W2:
    """Encoded transport objective; ``amp_scale=None`` uses each observed gather's peak."""

    beta: float = 2.0
    floor_ratio: float = 0.0
    amp_scale: float = None
    scheme: str = "quantile"
    potential_shift: float = 0.0

    @property
    def cfg(self):
        return EncodingConfig(beta=self.beta, floor_ratio=self.floor_ratio)

    def __call__(self, syn, obs, dt):
        scale = self.amp_scale
        if scale is None:
            peak = float(np.abs(obs).max())
            scale = peak if peak > 0 else 1.0
        return w2_misfit(syn, obs, dt, self.cfg, amp_scale=scale, scheme=self.scheme,
                         potential_shift=self.potential_shift)


def make_objective(name, **kw):
    if name == "l2":
        return L2()
    if name == "w2":
        return W2(**kw)
    raise ValueError(f"unknown objective {name!r}")


def shot_gradient(model, acq, obs, objective, shot, pml=DEFAULT_PML,
                  pml_velocity=PML_VELOCITY):
    """Value and model gradient of one shot: forward, misfit, adjoint, imaging."""
    solver = WaveSolver(model, acq, pml=pml, pml_velocity=pml_velocity)
    fwd = solver.forward(shot)
    res = objective(fwd.gather, obs, acq.record_grid.dt)
    _, grad = solver.adjoint(res.adjoint_source, forward=fwd)
    return res.value, grad


def forward_gathers(model, acq, pml=DEFAULT_PML, pml_velocity=PML_VELOCITY):
    solver = WaveSolver(model, acq, pml=pml, pml_velocity=pml_velocity)
    return [solver.forward(s, store=False).gather for s in range(len(acq.sources))]


def evaluate(model, acq, observed, objective, pml=DEFAULT_PML, pml_velocity=PML_VELOCITY):
    """Objective value summed over shots, without gradients."""
    syn = forward_gathers(model, acq, pml=pml, pml_velocity=pml_velocity)
    dt = acq.record_grid.dt
    return float(sum(objective(s, o, dt).value for s, o in zip(syn, observed)))


def model_gradient(model, acq, observed, objective, pml=DEFAULT_PML,
                   pml_velocity=PML_VELOCITY, n_jobs=1):
    """Total objective and its gradient with respect to squared slowness.

    Shots may run concurrently; the per-shot results are always summed in
    shot order, so the output does not depend on ``n_jobs``.
    """
    if len(observed) != len(acq.sources):
        raise ValueError(f"{len(observed)} observed gathers for {len(acq.sources)} sources")

    def one(shot):
        return shot_gradient(model, acq, observed[shot], objective, shot,
                             pml=pml, pml_velocity=pml_velocity)

    shots = range(len(acq.sources))
    if n_jobs == 1:
        results = [one(s) for s in shots]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, shots))
    value = 0.0
    grad = np.zeros(model.shape)
    for v, g in results:
        value += v
        grad += g
    return value, grad
