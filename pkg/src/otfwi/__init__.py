"""Optimal-transport misfits for acoustic full-waveform inversion."""

from .encoding import EncodingConfig, SoftplusEncoder
from .estimator import WaveformInversion
from .misfit import L2, W2
from .optim import OptimizerConfig, minimize
from .ot import TimeGrid, transport_cost, transport_gradient, w1_distance
from .wave import Acquisition, SlownessModel, WaveSolver

__version__ = "0.1.0"
