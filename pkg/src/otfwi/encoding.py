"""Maps from signed traces to strictly positive unit-mass traces.

All functions act along the last axis, so a gather of shape
``(n_receivers, nt)`` is encoded trace by trace.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

SCHEMES = ("softplus", "add_constant")


class EncodedTrace(NamedTuple):
    pdf: np.ndarray
    mean_mass: np.ndarray


@dataclass(frozen=True)
class EncodingConfig:
    """Parameters of the encoding map.

    ``beta`` is the softplus steepness, ``constant`` the shift used by the
    add-constant scheme, and ``floor_ratio`` mixes in ``floor_ratio`` of the
    uniform distribution so every mass is at least ``floor_ratio / nt``.
    """

    beta: float = 2.0
    floor_ratio: float = 0.0
    scheme: str = "softplus"
    constant: float = 0.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.scheme == "softplus" and self.beta == 0:
            raise ValueError("beta must be nonzero for softplus encoding")
        if self.scheme == "add_constant" and not self.constant > 0:
            raise ValueError("add_constant encoding requires constant > 0")
        if not 0.0 <= self.floor_ratio < 1.0:
            raise ValueError(f"floor_ratio must lie in [0, 1), got {self.floor_ratio}")

    def encode(self, u):
        if self.scheme == "softplus":
            return softplus_encode(u, self.beta, self.floor_ratio)
        return add_constant_encode(u, self.constant, self.floor_ratio)

    def adjoint(self, u, phi):
        return encode_adjoint(u, phi, self)


def _finite(u):
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("trace contains non-finite samples")
    return u


def softplus(u, beta=1.0):
    """``log(1 + exp(beta u)) / |beta|`` evaluated without overflow."""
    bu = beta * np.asarray(u, dtype=float)
    return (np.maximum(bu, 0.0) + np.log1p(np.exp(-np.abs(bu)))) / abs(beta)


def positive_part(u):
    return np.maximum(np.asarray(u, dtype=float), 0.0)


def _normalize(sigma, floor_ratio):
    nt = sigma.shape[-1]
    mean = sigma.mean(axis=-1, keepdims=True)
    pdf = sigma / (nt * mean)
    if floor_ratio > 0:
        pdf = (1.0 - floor_ratio) * pdf + floor_ratio / nt
    return EncodedTrace(pdf, mean[..., 0])


def softplus_encode(u, beta=1.0, floor_ratio=0.0):
    """Softplus-encode and normalize each trace to unit total point mass.

    Returns the masses and the per-trace mean of the softplus values, which
    :func:`softplus_decode` needs to undo the normalization.
    """
    u = _finite(u)
    if beta == 0:
        raise ValueError("beta must be nonzero")
    return _normalize(softplus(u, beta), floor_ratio)


def softplus_decode(encoded, beta=1.0, floor_ratio=0.0):
    """Invert :func:`softplus_encode` given the stored mean mass."""
    pdf, mean = encoded
    pdf = np.asarray(pdf, dtype=float)
    nt = pdf.shape[-1]
    if floor_ratio > 0:
        pdf = (pdf - floor_ratio / nt) / (1.0 - floor_ratio)
    v = pdf * nt * np.asarray(mean, dtype=float)[..., None]
    if np.any(v <= 0):
        raise ValueError("encoded trace has non-positive mass; softplus cannot produce it")
    x = abs(beta) * np.maximum(v, 1e-300)
    # log(expm1(x)) = x + log(-expm1(-x)) avoids overflow for large x
    u = (x + np.log(-np.expm1(-x))) / beta
    if not np.all(np.isfinite(u)):
        raise FloatingPointError("decoded trace is not finite")
    return u


def add_constant_encode(u, constant, floor_ratio=0.0):
    """Shift by ``constant`` and normalize; every shifted sample must be positive."""
    u = _finite(u)
    shifted = u + constant
    if np.any(shifted <= 0):
        raise ValueError(
            f"constant {constant} does not make the trace positive (min {u.min()})"
        )
    return _normalize(shifted, floor_ratio)


def encode_adjoint(u, phi, cfg):
    """Apply the adjoint of the encoding's derivative at ``u`` to ``phi``.

    With ``sigma`` the pointwise map, ``s'`` its derivative and
    ``M = sum(sigma)``, the result is ``s' (phi - <phi, sigma> / M) / M``
    (times ``1 - floor_ratio``). Constant ``phi`` is annihilated.
    """
    u = _finite(u)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != u.shape:
        raise ValueError(f"grid mismatch: u {u.shape}, phi {phi.shape}")
    if cfg.scheme == "softplus":
        sigma = softplus(u, cfg.beta)
        dsigma = np.sign(cfg.beta) * expit(cfg.beta * u)
    else:
        sigma = u + cfg.constant
        dsigma = np.ones_like(u)
    total = sigma.sum(axis=-1, keepdims=True)
    # remove a common offset first (exact for nearby values) to limit cancellation
    phi = phi - phi[..., :1]
    centered = phi - (phi * sigma).sum(axis=-1, keepdims=True) / total
    return (1.0 - cfg.floor_ratio) * dsigma * centered / total


class SoftplusEncoder(TransformerMixin, BaseEstimator):
    """Trace-wise softplus encoder with a scikit-learn interface.

    Rows of ``X`` are traces. ``transform`` returns unit-mass rows and keeps
    the per-row normalization in ``mean_mass_`` so that
    ``inverse_transform`` can recover the input.

    Parameters
    ----------
    beta : float, default=2.0
        Softplus steepness in inverse amplitude units.
    floor_ratio : float, default=0.0
        Fraction of the uniform distribution mixed into every row.
    amplitude_scale : {"none", "maxabs"}, default="none"
        With ``"maxabs"``, ``fit`` records the largest absolute sample and
        every later call divides by it before encoding, so ``beta`` is
        relative to the data amplitude.
    """

    def __init__(self, beta=2.0, floor_ratio=0.0, amplitude_scale="none"):
        self.beta = beta
        self.floor_ratio = floor_ratio
        self.amplitude_scale = amplitude_scale

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=2)
        EncodingConfig(beta=self.beta, floor_ratio=self.floor_ratio)
        if self.amplitude_scale == "maxabs":
            peak = np.abs(X).max()
            self.scale_ = float(peak) if peak > 0 else 1.0
        elif self.amplitude_scale == "none":
            self.scale_ = 1.0
        else:
            raise ValueError(f"unknown amplitude_scale {self.amplitude_scale!r}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} samples per trace, encoder was fitted with "
                f"{self.n_features_in_}"
            )
        pdf, mean = softplus_encode(X / self.scale_, self.beta, self.floor_ratio)
        self.mean_mass_ = mean
        return pdf

    def inverse_transform(self, X, mean_mass=None):
        check_is_fitted(self, "scale_")
        X = check_array(X)
        if mean_mass is None:
            check_is_fitted(self, "mean_mass_")
            mean_mass = self.mean_mass_
        u = softplus_decode((X, mean_mass), self.beta, self.floor_ratio)
        return u * self.scale_
