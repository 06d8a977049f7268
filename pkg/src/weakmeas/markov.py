"""Continuous-time Markov jump process on the spectrum.

Convention: ``q[src, dst]`` and ``Gamma_t = expm(t q)`` have rows as sources,
so Pr(Y_{s+h} = nu | Y_s = nu') = Gamma_h[nu', nu] = delta + q[nu', nu] h + o(h).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm

from .lindblad import RateMatrix
from .linalg import TOL, is_density_matrix
from .trajectory import trajectory_rng


def initial_distribution(rho, spectrum=None) -> np.ndarray:
    """pi_rho(nu) = <nu|rho|nu>."""
    rho = np.asarray(rho)
    if not is_density_matrix(rho):
        raise ValueError("rho is not a density matrix")
    if spectrum is not None and len(spectrum) != rho.shape[0]:
        raise ValueError("spectrum length does not match rho")
    pi = np.clip(np.real(np.diag(rho)).copy(), 0.0, None)
    return pi / pi.sum()


def _as_q(q) -> np.ndarray:
    return q.q if isinstance(q, RateMatrix) else np.asarray(q, dtype=float)


def transition(q, t: float) -> np.ndarray:
    """Gamma_t = exp(t Q), rows = sources."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return expm(t * _as_q(q))


@dataclass(frozen=True, eq=False)
class MarkovChain:
    generator: np.ndarray
    initial: np.ndarray
    spectrum: np.ndarray | None = None

    def __post_init__(self):
        q = _as_q(self.generator)
        pi = np.asarray(self.initial, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or pi.shape != (q.shape[0],):
            raise ValueError("generator must be square and match the initial distribution")
        if np.any(pi < -1e-12) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("initial distribution must be nonnegative and sum to 1")
        off = q - np.diag(np.diag(q))
        if np.any(off < -TOL["rate_nonneg"]) or np.any(np.abs(q.sum(axis=1)) > TOL["rate_rowsum"]):
            raise ValueError("generator has negative off-diagonal rates or nonzero row sums")
        object.__setattr__(self, "generator", q)
        object.__setattr__(self, "initial", pi)

    @property
    def dim(self) -> int:
        return self.generator.shape[0]

    @classmethod
    def from_rates(cls, rates: RateMatrix, rho) -> "MarkovChain":
        return cls(rates.q, initial_distribution(rho), np.asarray(rates.spectrum))


@dataclass(frozen=True, eq=False)
class MarkovPath:
    """States[k] is held on [times[k], times[k+1]); times[0] = 0."""

    times: np.ndarray
    states: np.ndarray
    horizon: float
    index: int = 0

    def at(self, t) -> np.ndarray | int:
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.states[k]

    @property
    def n_jumps(self) -> int:
        return self.states.size - 1

    def occupation(self, d: int) -> np.ndarray:
        edges = np.append(self.times, self.horizon)
        return np.bincount(self.states, weights=np.diff(edges), minlength=d)


def sample_path(chain: MarkovChain, horizon: float, seed: int, index: int = 0) -> MarkovPath:
    """Jump-chain construction with an Exp(|q_nu,nu|) holding time per visit."""
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    rng = trajectory_rng(seed, index)
    q = chain.generator
    state = int(rng.choice(chain.dim, p=chain.initial))
    times, states = [0.0], [state]
    t = 0.0
    while True:
        out = -q[state, state]
        if out <= 0:
            break  # absorbing
        t += rng.exponential(1.0 / out)
        if t > horizon:
            break
        p = np.clip(q[state], 0.0, None)
        p[state] = 0.0
        state = int(rng.choice(chain.dim, p=p / p.sum()))
        times.append(t)
        states.append(state)
    return MarkovPath(np.array(times), np.array(states, dtype=np.int64), float(horizon), index)


def fdd_probability(chain: MarkovChain, times: Sequence[float], values: Sequence[int]) -> float:
    """Pr(Y_{s_1} = nu_1, ..., Y_{s_n} = nu_n) for level indices nu_k."""
    times = np.asarray(times, dtype=float)
    if times.size != len(values) or times.size == 0:
        raise ValueError("times and values must be non-empty and of equal length")
    if times[0] < 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing and nonnegative")
    row = chain.initial.copy()
    last = 0.0
    for t, v in zip(times, values):
        row = row @ transition(chain.generator, t - last)
        keep = np.zeros_like(row)
        keep[v] = row[v]
        row = keep
        last = t
    return float(row.sum())


def fdd_table(chain: MarkovChain, times: Sequence[float]) -> np.ndarray:
    """Joint law on all value tuples, shape (d,)*n."""
    d, n = chain.dim, len(times)
    out = np.zeros((d,) * n)
    for vals in np.ndindex(*out.shape):
        out[vals] = fdd_probability(chain, times, vals)
    return out


def grid_values(path: MarkovPath, grid: np.ndarray) -> np.ndarray:
    return path.at(np.asarray(grid))


def paths_csv(paths: Iterable[MarkovPath], step: float, spectrum: np.ndarray | None = None) -> str:
    """Sampled on the grid 0, step, 2 step, ... in the estimator-path CSV shape."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trajectory-index", "window-index", "window-start-time", "value"])
    for p in paths:
        n = int(math.floor(p.horizon / step + 1e-12))
        grid = step * np.arange(n)
        vals = grid_values(p, grid)
        if spectrum is not None:
            vals = np.asarray(spectrum)[vals]
        for j, (t, v) in enumerate(zip(grid, vals)):
            w.writerow([p.index, j, repr(float(t)), repr(float(v))])
    return buf.getvalue()
