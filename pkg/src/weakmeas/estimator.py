"""Windowed maximum-likelihood estimation of the measured eigenvalue.

For a window (s, s+T] with events xi_j the log-likelihood of level nu is the
mean of log f(xi_j|nu).  The estimator picks the argmax; the piecewise
constant process M takes on [jT, (j+1)T) the value estimated from the
window (jT, (j+1)T].  Window j thus reflects the state close to (j+1)T.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import MeasurementModel, gap, rate_I
from .trajectory import TrajectoryRecord

DEFAULT_MARGIN = 0.2


class AlphaError(ValueError):
    pass


def alpha0(m: MeasurementModel, margin: float = DEFAULT_MARGIN) -> float:
    """(1 + margin) * max(2/(1 - e^-I), 1/g)."""
    i_rate, _ = rate_I(m)
    g = gap(m).g
    return (1.0 + margin) * max(2.0 / (1.0 - math.exp(-i_rate)), 1.0 / g)


@dataclass(frozen=True)
class EstimatorConfig:
    """Window length T = alpha |log eps|, unless ``window`` overrides it."""

    alpha: float
    epsilon: float
    window: float | None = None
    strict: bool = False
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.T <= 0 or not math.isfinite(self.T):
            raise ValueError(f"window length must be finite and > 0, got {self.T}")

    @property
    def T(self) -> float:
        if self.window is not None:
            return float(self.window)
        return self.alpha * abs(math.log(self.epsilon))

    @property
    def h(self) -> float:
        """Window length in rescaled time eps^2 T."""
        return self.epsilon ** 2 * self.T

    def check(self, m: MeasurementModel) -> "EstimatorConfig":
        if self.strict:
            a0 = alpha0(m, self.margin)
            if self.alpha < a0:
                raise AlphaError(f"alpha={self.alpha} below alpha0={a0:.6g} (strict mode)")
        return self


@dataclass(frozen=True)
class LikelihoodTable:
    values: np.ndarray  # per level, -inf where an observed outcome is impossible
    n_events: int
    empty: bool
    tie: bool


def _log_f(m: MeasurementModel) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(m.f)


def likelihood_from_counts(m: MeasurementModel, counts: np.ndarray) -> LikelihoodTable:
    counts = np.asarray(counts)
    n = int(counts.sum())
    d = m.dim
    if n == 0:
        return LikelihoodTable(np.zeros(d), 0, True, d > 1)
    logf = _log_f(m)
    seen = counts > 0
    terms = np.where(seen[:, None], counts[:, None] * np.where(np.isneginf(logf), 0.0, logf), 0.0)
    vals = terms.sum(axis=0) / n
    impossible = (seen[:, None] & np.isneginf(logf)).any(axis=0)
    vals = np.where(impossible, -np.inf, vals)
    best = vals.max()
    tie = bool(np.isfinite(best) and np.sum(vals == best) > 1)
    return LikelihoodTable(vals, n, False, tie)


def window_counts(m: MeasurementModel, record: TrajectoryRecord, s: float, T: float) -> np.ndarray:
    sl = record.window(s, s + T)
    return np.bincount(record.outcomes[sl], minlength=m.n_outcomes)


def _check_window(record: TrajectoryRecord, s: float, T: float) -> None:
    if not (T > 0 and s >= 0 and s + T <= record.horizon * (1 + 1e-12)):
        raise ValueError(f"window ({s}, {s + T}] not inside (0, {record.horizon}]")


def log_likelihood(m: MeasurementModel, record: TrajectoryRecord, s: float, T: float) -> LikelihoodTable:
    _check_window(record, s, T)
    return likelihood_from_counts(m, window_counts(m, record, s, T))


def _argmax(table: LikelihoodTable, previous: int | None, order: np.ndarray) -> int:
    if table.empty:
        return int(order[0]) if previous is None else previous
    vals = table.values
    best = vals.max()
    if not np.isfinite(best):
        return int(order[0]) if previous is None else previous
    cands = np.flatnonzero(vals == best)
    # tie rule: smallest eigenvalue wins
    return int(cands[np.argmin(order.argsort()[cands])]) if cands.size > 1 else int(cands[0])


def mle_index(m: MeasurementModel, record: TrajectoryRecord, s: float, T: float,
              previous: int | None = None) -> int:
    table = log_likelihood(m, record, s, T)
    return _argmax(table, previous, np.argsort(m.spectrum, kind="stable"))


def mle(m: MeasurementModel, record: TrajectoryRecord, s: float, T: float,
        previous: float | None = None) -> float:
    """Most likely eigenvalue for the window (s, s+T]."""
    prev = None if previous is None else int(np.flatnonzero(m.spectrum == previous)[0])
    return float(m.spectrum[mle_index(m, record, s, T, prev)])


@dataclass(frozen=True, eq=False)
class EstimatorPath:
    indices: np.ndarray  # level index per window
    values: np.ndarray  # eigenvalue per window
    T: float
    trajectory_index: int = 0

    @property
    def n_windows(self) -> int:
        return self.indices.size

    @property
    def window_starts(self) -> np.ndarray:
        return self.T * np.arange(self.n_windows)

    @property
    def jump_times(self) -> np.ndarray:
        """Window indices j >= 1 with value(j) != value(j-1)."""
        return np.flatnonzero(np.diff(self.indices)) + 1

    def at(self, t: float) -> int:
        """Level index of M_t."""
        j = int(math.floor(t / self.T + 1e-12))
        if not 0 <= j < self.n_windows:
            raise ValueError(f"time {t} outside the path ({self.n_windows} windows of {self.T})")
        return int(self.indices[j])


def build_path(m: MeasurementModel, record: TrajectoryRecord, cfg: EstimatorConfig,
               horizon: float | None = None) -> EstimatorPath:
    T = cfg.T
    horizon = record.horizon if horizon is None else horizon
    if horizon < T:
        raise ValueError(f"horizon {horizon} shorter than window {T}")
    if horizon > record.horizon * (1 + 1e-12):
        raise ValueError("horizon exceeds the record")
    n_win = int(math.floor(horizon / T + 1e-12))
    order = np.argsort(m.spectrum, kind="stable")
    # per-window outcome counts via one pass over event times
    win = np.ceil(record.times / T).astype(np.int64) - 1  # t in (jT, (j+1)T] -> j
    keep = (win >= 0) & (win < n_win)
    flat = win[keep] * m.n_outcomes + record.outcomes[keep]
    counts = np.bincount(flat, minlength=n_win * m.n_outcomes).reshape(n_win, m.n_outcomes)
    idx = np.empty(n_win, dtype=np.int64)
    prev = None
    for j in range(n_win):
        prev = _argmax(likelihood_from_counts(m, counts[j]), prev, order)
        idx[j] = prev
    return EstimatorPath(indices=idx, values=m.spectrum[idx], T=T, trajectory_index=record.index)


@dataclass(frozen=True)
class JumpStatistics:
    counts: np.ndarray  # transitions source -> dest
    exposure: np.ndarray  # rescaled time at risk per source
    rates: np.ndarray  # generator estimate, rows sum to zero
    stderr: np.ndarray
    n_paths: int


def jump_statistics(paths: Sequence[EstimatorPath], cfg: EstimatorConfig, eps: float | None = None,
                    d: int | None = None) -> JumpStatistics:
    """Empirical rates = transitions / rescaled time spent in the source level."""
    if not paths:
        raise ValueError("need at least one path")
    eps = cfg.epsilon if eps is None else eps
    h = eps ** 2 * paths[0].T
    d = d or int(max(p.indices.max(initial=0) for p in paths)) + 1
    counts = np.zeros((d, d))
    visits = np.zeros(d)
    for p in paths:
        a, b = p.indices[:-1], p.indices[1:]
        np.add.at(counts, (a, b), 1.0)
        visits += np.bincount(a, minlength=d)
    np.fill_diagonal(counts, 0.0)
    exposure = visits * h
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.where(exposure[:, None] > 0, counts / exposure[:, None], 0.0)
        stderr = np.where(exposure[:, None] > 0, np.sqrt(counts) / exposure[:, None], np.inf)
    np.fill_diagonal(rates, -rates.sum(axis=1))
    np.fill_diagonal(stderr, 0.0)
    return JumpStatistics(counts, exposure, rates, stderr, len(paths))


def multi_jump_frequency(paths: Iterable[EstimatorPath], width: int) -> float:
    """Fraction of runs of ``width`` consecutive windows containing two or more jumps."""
    hits = total = 0
    for p in paths:
        jumps = np.diff(p.indices) != 0
        if jumps.size < width:
            continue
        c = np.convolve(jumps.astype(int), np.ones(width, dtype=int), mode="valid")
        hits += int((c >= 2).sum())
        total += c.size
    return hits / total if total else 0.0


def paths_csv(paths: Iterable[EstimatorPath]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trajectory-index", "window-index", "window-start-time", "value"])
    for p in paths:
        for j, (t, v) in enumerate(zip(p.window_starts, p.values)):
            w.writerow([p.trajectory_index, j, repr(float(t)), repr(float(v))])
    return buf.getvalue()
