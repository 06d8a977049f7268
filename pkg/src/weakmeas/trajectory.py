"""Sampling measurement records and evolving posterior states.

Between probe events the state drifts unitarily, rho -> U rho U^* with
U = exp(-i eps tau H); at an event with outcome xi it jumps to
V_xi^* rho V_xi / tr(V_xi^* rho V_xi).  Interarrival times are Exp(1).

Two sampling modes:

``"physical"``
    outcome xi is drawn with probability mu(xi) tr(V_xi^* rho V_xi) given the
    current state (the measure under which the observed process lives);
``"apriori"``
    outcome xi is drawn from mu alone and the discarded normalisation is kept
    in ``logweight``, so that ``exp(logweight) * rho`` is the unnormalised
    propagated matrix.

Every trajectory owns a counter-based Philox stream keyed by ``(seed, index)``;
ensembles are therefore reproducible and independent of batching and order.
Trajectories in a batch are advanced in lockstep, one event index at a time.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .linalg import TOL, is_density_matrix
from .model import MeasurementModel

MODES = ("physical", "apriori")
MAX_EVENTS = 10**9
BATCH = 8192
_U64 = (1 << 64) - 1


class SamplingError(RuntimeError):
    pass


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Philox generator keyed by (seed, index)."""
    return np.random.Generator(np.random.Philox(key=np.array([int(seed) & _U64, int(index) & _U64],
                                                              dtype=np.uint64)))


def _draw_stream(rng: np.random.Generator, horizon: float) -> tuple[np.ndarray, float, np.ndarray]:
    """Interarrival times of all events in (0, horizon], the first overshooting gap, and one uniform per event."""
    chunk = int(horizon + 6.0 * math.sqrt(horizon) + 16)
    blocks = []
    total = 0.0
    while True:
        block = rng.standard_exponential(chunk)
        cum = total + np.cumsum(block)
        over = np.flatnonzero(cum > horizon)
        if over.size:
            k = int(over[0])
            blocks.append(block[:k])
            next_tau = float(block[k])
            break
        blocks.append(block)
        total = float(cum[-1])
        if sum(b.size for b in blocks) > MAX_EVENTS:
            raise SamplingError("event cap exceeded")
    taus = np.concatenate(blocks) if blocks else np.empty(0)
    uniforms = rng.random(taus.size)
    return taus, next_tau, uniforms


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Measurement record on (0, horizon]: interarrival times and outcome indices."""

    taus: np.ndarray
    outcomes: np.ndarray
    horizon: float
    seed: int
    index: int
    next_tau: float = math.inf
    labels: tuple = ()
    mode: str = "physical"
    times: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        outcomes = np.asarray(self.outcomes, dtype=np.int64)
        if taus.shape != outcomes.shape:
            raise ValueError("taus and outcomes must have equal length")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "times", np.cumsum(taus))

    @property
    def n_events(self) -> int:
        return self.taus.size

    @property
    def events(self) -> list[tuple[float, str]]:
        labels = self.labels or tuple(str(i) for i in range(int(self.outcomes.max(initial=-1)) + 1))
        return [(float(t), labels[k]) for t, k in zip(self.taus, self.outcomes)]

    def count(self, s: float) -> int:
        """N_s: number of events in (0, s]."""
        return int(np.searchsorted(self.times, s, side="right"))

    def window(self, s: float, t: float) -> slice:
        """Event positions j with s < t_j <= t."""
        return slice(self.count(s), self.count(t))


@dataclass(frozen=True)
class PosteriorState:
    time: float
    rho: np.ndarray
    logweight: float


@dataclass(eq=False)
class Ensemble:
    """Batch of sampled trajectories.

    ``final`` / ``snapshots`` hold normalised posterior states; ``*_logweight``
    the accumulated log of the discarded traces.
    """

    records: list
    final: np.ndarray
    final_logweight: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray
    snapshot_logweight: np.ndarray

    def posterior_states(self, i: int) -> list[PosteriorState]:
        return [PosteriorState(float(t), self.snapshots[i, j], float(self.snapshot_logweight[i, j]))
                for j, t in enumerate(self.snapshot_times)]


class _Drift:
    def __init__(self, m: MeasurementModel):
        lam, w = np.linalg.eigh(m.hamiltonian)
        self.lam, self.w, self.wh = lam, w, w.conj().T
        self.eps = m.epsilon

    def unitary(self, dt: np.ndarray) -> np.ndarray:
        ph = np.exp(-1j * self.eps * np.asarray(dt)[..., None] * self.lam)
        return (self.w * ph[..., None, :]) @ self.wh

    def __call__(self, rho: np.ndarray, dt: np.ndarray) -> np.ndarray:
        if self.eps == 0.0:
            return rho
        u = self.unitary(dt)
        return u @ rho @ np.swapaxes(u.conj(), -1, -2)


def _check_inputs(m: MeasurementModel, rho0: np.ndarray, horizon: float, mode: str) -> np.ndarray:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if not horizon > 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (m.dim, m.dim) or not is_density_matrix(rho0):
        raise ValueError("rho0 must be a density matrix of the model dimension")
    return rho0


def _simulate_batch(m: MeasurementModel, rho0: np.ndarray, horizon: float, seed: int,
                    indices: Sequence[int], mode: str, snapshot_times: np.ndarray) -> Ensemble:
    d = m.dim
    b = len(indices)
    draws = [_draw_stream(trajectory_rng(seed, i), horizon) for i in indices]
    counts = np.array([len(x[0]) for x in draws])
    k_max = int(counts.max(initial=0))
    times = np.full((b, k_max), np.inf)
    unif = np.zeros((b, k_max))
    for r, (taus, _, u) in enumerate(draws):
        times[r, : taus.size] = np.cumsum(taus)
        unif[r, : u.size] = u
    outcomes = np.zeros((b, k_max), dtype=np.int64)

    kraus = m.kraus
    f = m.f
    mu_cum = np.cumsum(m.weights)
    drift = _Drift(m)
    rho = np.broadcast_to(rho0, (b, d, d)).copy()
    logw = np.zeros(b)
    last = np.zeros(b)
    n_snap = snapshot_times.size
    snaps = np.zeros((b, n_snap, d, d), dtype=complex)
    snap_lw = np.zeros((b, n_snap))
    snap_done = np.zeros((b, n_snap), dtype=bool)

    for k in range(k_max):
        act = np.flatnonzero(counts > k)
        tk = times[act, k]
        for j, ts in enumerate(snapshot_times):
            pick = act[(~snap_done[act, j]) & (tk > ts)]
            if pick.size:
                snaps[pick, j] = drift(rho[pick], ts - last[pick])
                snap_lw[pick, j] = logw[pick]
                snap_done[pick, j] = True
        r = drift(rho[act], tk - last[act])
        pops = np.real(np.einsum("bii->bi", r))
        tr_all = pops @ f.T  # tr(V_xi^* rho V_xi) per outcome
        u = unif[act, k]
        if mode == "physical":
            probs = tr_all * m.weights
            total = probs.sum(axis=1)
            if np.any(np.abs(total - 1.0) > TOL["outcome_sum"]):
                raise SamplingError(f"outcome probabilities sum to {total[np.argmax(np.abs(total - 1))]!r}")
            xi = (u[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1)
        else:
            xi = (u[:, None] >= mu_cum[None, :]).sum(axis=1)
        xi = np.minimum(xi, m.n_outcomes - 1)
        tr = tr_all[np.arange(act.size), xi]
        if mode == "physical" and np.any(tr <= 0):
            raise SamplingError("zero-probability outcome drawn")
        v = kraus[xi]
        alive = tr > 0
        scale = np.where(alive, tr, 1.0)
        jumped = r * (v.conj()[:, :, None] * v[:, None, :]) / scale[:, None, None]
        r = np.where(alive[:, None, None], jumped, r)
        with np.errstate(divide="ignore"):
            logw[act] += np.log(tr)
        rho[act] = r
        last[act] = tk
        outcomes[act, k] = xi

    for j, ts in enumerate(snapshot_times):
        pick = np.flatnonzero(~snap_done[:, j])
        if pick.size:
            snaps[pick, j] = drift(rho[pick], ts - last[pick])
            snap_lw[pick, j] = logw[pick]
    final = drift(rho, horizon - last)

    records = [TrajectoryRecord(taus=draws[r][0], outcomes=outcomes[r, : counts[r]], horizon=horizon,
                                seed=seed, index=int(indices[r]), next_tau=draws[r][1],
                                labels=m.labels, mode=mode)
               for r in range(b)]
    return Ensemble(records=records, final=final, final_logweight=logw, snapshot_times=snapshot_times,
                    snapshots=snaps, snapshot_logweight=snap_lw)


def sample_ensemble(m: MeasurementModel, rho0, horizon: float, n: int, seed: int, mode: str = "physical",
                    snapshot_times: Iterable[float] = (), start: int = 0, batch: int = BATCH) -> Ensemble:
    """Sample trajectories ``start .. start+n-1``."""
    if n < 1:
        raise ValueError("need at least one trajectory")
    rho0 = _check_inputs(m, rho0, horizon, mode)
    snapshot_times = np.asarray(sorted(float(t) for t in snapshot_times), dtype=float)
    if snapshot_times.size and (snapshot_times[0] < 0 or snapshot_times[-1] > horizon):
        raise ValueError("snapshot times must lie in [0, horizon]")
    parts = [_simulate_batch(m, rho0, horizon, seed, range(lo, min(lo + batch, start + n)), mode, snapshot_times)
             for lo in range(start, start + n, batch)]
    return merge_ensembles(parts)


def merge_ensembles(parts: Sequence[Ensemble]) -> Ensemble:
    """Concatenate ensembles in the given order (snapshot times must agree)."""
    if len(parts) == 1:
        return parts[0]
    return Ensemble(records=[r for p in parts for r in p.records],
                    final=np.concatenate([p.final for p in parts]),
                    final_logweight=np.concatenate([p.final_logweight for p in parts]),
                    snapshot_times=parts[0].snapshot_times,
                    snapshots=np.concatenate([p.snapshots for p in parts]),
                    snapshot_logweight=np.concatenate([p.snapshot_logweight for p in parts]))


def sample_trajectory(m: MeasurementModel, rho0, horizon: float, seed: int, index: int = 0,
                      snapshot_times: Iterable[float] = (), mode: str = "physical"
                      ) -> tuple[TrajectoryRecord, list[PosteriorState]]:
    """One record plus posterior snapshots at the requested times (final state appended)."""
    ens = sample_ensemble(m, rho0, horizon, 1, seed, mode=mode, snapshot_times=snapshot_times, start=index)
    states = ens.posterior_states(0)
    states.append(PosteriorState(float(horizon), ens.final[0], float(ens.final_logweight[0])))
    return ens.records[0], states


def apply_propagator(m: MeasurementModel, record: TrajectoryRecord, x, s: float, u: float) -> np.ndarray:
    """sigma^(s,u) applied to X: drift, then Phi_xi at each event in (u, s], then drift up to s."""
    if not (0 <= u < s <= record.horizon + 1e-12):
        raise ValueError(f"need 0 <= u < s <= horizon, got u={u}, s={s}, horizon={record.horizon}")
    drift = _Drift(m)
    x = np.asarray(x, dtype=complex)
    sl = record.window(u, s)
    last = u
    for t, xi in zip(record.times[sl], record.outcomes[sl]):
        x = drift(x, t - last)
        v = m.kraus[xi]
        x = v.conj()[:, None] * x * v[None, :]
        last = t
    return drift(x, s - last)


def replay_posterior(m: MeasurementModel, record: TrajectoryRecord, rho0) -> list[PosteriorState]:
    """Normalised posterior right after each event of the record, recomputed from scratch."""
    drift = _Drift(m)
    rho = np.asarray(rho0, dtype=complex)
    out = []
    last, lw = 0.0, 0.0
    for t, xi in zip(record.times, record.outcomes):
        rho = drift(rho, t - last)
        v = m.kraus[xi]
        rho = v.conj()[:, None] * rho * v[None, :]
        tr = float(np.trace(rho).real)
        rho = rho / tr
        lw += math.log(tr)
        last = t
        out.append(PosteriorState(float(t), rho, lw))
    return out


def mc_sums(m: MeasurementModel, rho0, t: float, n: int, seed: int, mode: str = "apriori",
            start: int = 0, batch: int = BATCH) -> tuple[int, np.ndarray, np.ndarray]:
    """(count, sum of X, sum of |X|^2) over trajectories start .. start+n-1; merge by addition."""
    d = m.dim
    s1 = np.zeros((d, d), dtype=complex)
    s2 = np.zeros((d, d))
    for lo in range(start, start + n, batch):
        ens = sample_ensemble(m, rho0, t, min(batch, start + n - lo), seed, mode=mode, start=lo, batch=batch)
        x = ens.final
        if mode == "apriori":
            x = x * np.exp(ens.final_logweight)[:, None, None]
        s1 += x.sum(axis=0)
        s2 += (np.abs(x) ** 2).sum(axis=0)
    return n, s1, s2


def mean_and_stderr(n: int, s1: np.ndarray, s2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = s1 / n
    var = (s2 - n * np.abs(mean) ** 2) / (n - 1)
    return mean, np.sqrt(np.maximum(var, 0.0) / n)


def monte_carlo_mean(m: MeasurementModel, rho0, t: float, n: int, seed: int, mode: str = "apriori",
                     batch: int = BATCH) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble estimate of exp(t L_eps) rho0 and its entrywise standard error.

    ``apriori`` averages the unnormalised propagated matrices over records drawn
    from the a priori measure; ``physical`` averages normalised posteriors over
    records drawn from the physical measure.  Both are unbiased.
    """
    if n < 2:
        raise ValueError("need n >= 2 trajectories")
    return mean_and_stderr(*mc_sums(m, rho0, t, n, seed, mode=mode, batch=batch))


def event_dump_csv(m: MeasurementModel, records: Iterable[TrajectoryRecord], rho0) -> str:
    """Debug dump: ``index, t_j, tau_j, xi_label, rho_00, rho_11, ...`` (posterior populations)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "t_j", "tau_j", "xi_label"] + [f"rho_{k}{k}" for k in range(m.dim)])
    for rec in records:
        states = replay_posterior(m, rec, rho0)
        for tau, xi, st in zip(rec.taus, rec.outcomes, states):
            w.writerow([rec.index, repr(st.time), repr(float(tau)), m.labels[xi]]
                       + [repr(float(p)) for p in np.real(np.diag(st.rho))])
    return buf.getvalue()
