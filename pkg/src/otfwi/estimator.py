"""Waveform inversion behind a scikit-learn estimator interface."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .misfit import L2, W2, evaluate, forward_gathers
from .wave import DEFAULT_PML, PML_VELOCITY, Acquisition, SlownessModel


def check_gathers(X, acq):
    """Validate observed gathers ``(n_shots, n_receivers, n_samples)`` against ``acq``."""
    X = np.asarray(X, dtype=float)
    expected = (len(acq.sources), len(acq.receivers), acq.record_grid.nt)
    if X.ndim == 2 and expected[0] == 1:
        X = X[None]
    if X.shape != expected:
        raise ValueError(f"observed gathers have shape {X.shape}, acquisition expects {expected}")
    if not np.all(np.isfinite(X)):
        raise ValueError("observed gathers contain non-finite samples")
    return X


class WaveformInversion(BaseEstimator):
    """Bounded L-BFGS inversion of shot gathers for squared slowness.

    ``fit(X, acquisition=..., initial_model=...)`` takes observed gathers
    ``X`` of shape ``(n_shots, n_receivers, n_samples)``; afterwards
    ``model_`` holds the estimate, ``predict`` simulates its gathers and
    ``score`` is the negative misfit.

    Parameters
    ----------
    objective : {"w2", "l2"}, default="w2"
    beta : float, default=2.0
        Softplus steepness relative to the observed peak amplitude.
    max_iters, stop_tol, memory :
        Optimizer settings.
    vmin, vmax : float
        Velocity box constraints, m/s.
    pml : int
    n_jobs : int
        Concurrent shots.
    """

    def __init__(self, objective="w2", beta=2.0, max_iters=50, stop_tol=1e-5, memory=10,
                 vmin=1400.0, vmax=4500.0, pml=DEFAULT_PML, n_jobs=1):
        self.objective = objective
        self.beta = beta
        self.max_iters = max_iters
        self.stop_tol = stop_tol
        self.memory = memory
        self.vmin = vmin
        self.vmax = vmax
        self.pml = pml
        self.n_jobs = n_jobs

    def _objective(self):
        if self.objective == "l2":
            return L2()
        if self.objective == "w2":
            return W2(beta=self.beta)
        raise ValueError(f"objective must be 'l2' or 'w2', got {self.objective!r}")

    def fit(self, X, y=None, *, acquisition, initial_model, fixed=None):
        from .experiments import invert

        if not isinstance(acquisition, Acquisition) or not isinstance(initial_model, SlownessModel):
            raise TypeError("acquisition and initial_model must be Acquisition and SlownessModel")
        acquisition.validate(initial_model)
        X = check_gathers(X, acquisition)
        objective = self._objective()
        opt = {"max_iters": self.max_iters, "stop_tol": self.stop_tol, "memory": self.memory,
               "vmin": self.vmin, "vmax": self.vmax}
        model, res = invert(None, initial_model, acquisition, objective, opt, observed=list(X),
                            solver={"pml": self.pml, "pml_velocity": PML_VELOCITY},
                            n_jobs=self.n_jobs, fixed=fixed)
        self.model_ = model
        self.acquisition_ = acquisition
        self.history_ = res.history
        self.status_ = res.status
        self.n_iter_ = res.n_iters
        return self

    def predict(self, acquisition=None):
        check_is_fitted(self, "model_")
        acq = acquisition or self.acquisition_
        return np.stack(forward_gathers(self.model_, acq, pml=self.pml))

    def score(self, X, y=None):
        check_is_fitted(self, "model_")
        X = check_gathers(X, self.acquisition_)
        return -evaluate(self.model_, self.acquisition_, list(X), self._objective(), pml=self.pml)
