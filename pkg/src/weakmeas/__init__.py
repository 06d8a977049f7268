"""Repeated weak measurements of a finite-spectrum observable: trajectories, estimators and limiting jump rates."""

from .model import MeasurementModel, load_model, qubit_bernoulli, random_model
from .lindblad import build_Q, build_Q_eps, build_lindblad, semigroup
from .trajectory import monte_carlo_mean, sample_ensemble, sample_trajectory
from .estimator import EstimatorConfig, alpha0, build_path, jump_statistics
from .markov import MarkovChain, fdd_probability, sample_path, transition

__version__ = "0.1.0"
