"""Experiment runners.  Each is a pure function of (model, spec, seed) returning a ResultBundle.

Time conventions: ``spec.horizon`` is rescaled time s, simulated up to raw time
eps^-2 s (at eps = 0 no rescaling is applied).  ``verify-properties`` uses
``spec.horizon`` directly as the raw time of the ensemble-mean check.
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Callable

import numpy as np
from scipy.stats import chisquare

from .. import estimator as est
from .. import markov as mk
from ..linalg import random_hermitian, random_matrix
from ..lindblad import (build_lindblad, build_Q, build_Q_eps, check_averaging_bounds, check_conjugation_bounds,
                        coupling_condition, cp_norms, diagonal_indices, dissipativity, random_substochastic_cp,
                        semigroup)
from ..model import MeasurementModel, gap, load_model, qubit_bernoulli, random_model, rate_I
from ..trajectory import (apply_propagator, event_dump_csv, mc_sums, mean_and_stderr, merge_ensembles,
                          sample_ensemble)
from .bundle import ExperimentSpec, ResultBundle, SpecError, pool_map


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def load(spec: ExperimentSpec) -> MeasurementModel:
    if spec.model is None:
        return qubit_bernoulli()
    return load_model(spec.model).validate()


def initial_state(name: str, d: int) -> np.ndarray:
    """``P<k>`` (eigenprojection of level index k), ``plus`` or ``mixed``."""
    if name == "plus":
        return np.full((d, d), 1.0 / d, dtype=complex)
    if name == "mixed":
        return np.eye(d, dtype=complex) / d
    if name.startswith("P") and name[1:].isdigit() and int(name[1:]) < d:
        rho = np.zeros((d, d), dtype=complex)
        rho[int(name[1:]), int(name[1:])] = 1.0
        return rho
    raise SpecError(f"unknown initial state {name!r} (use P<k>, plus or mixed)")


def _bundle(spec: ExperimentSpec, m: MeasurementModel) -> ResultBundle:
    params = {k: v for k, v in spec.as_dict().items() if k != "out"}
    return ResultBundle(spec.experiment, parameters={**params, "model-dim": m.dim})


# fixed work-unit size: batch shapes, hence floating-point results, do not depend on the pool size
CHUNK = 1024


def _ensemble(m, rho0, horizon, n, seed, mode="physical", snapshots=()):
    """Ensemble split into fixed index ranges over the worker pool."""
    chunk = CHUNK
    starts = list(range(0, n, chunk))
    parts = pool_map(lambda lo: sample_ensemble(m, rho0, horizon, min(chunk, n - lo), seed, mode=mode,
                                                snapshot_times=snapshots, start=lo), starts)
    return merge_ensembles(parts)


def _alpha(spec: ExperimentSpec, m: MeasurementModel) -> float:
    if spec.alpha is not None:
        return float(spec.alpha)
    return est.alpha0(m, est.DEFAULT_MARGIN if spec.strict_alpha else 0.0)


def _config(spec: ExperimentSpec, m: MeasurementModel, eps: float) -> est.EstimatorConfig:
    if eps == 0 and spec.window is None:
        raise SpecError("eps = 0 needs an explicit window length")
    return est.EstimatorConfig(alpha=_alpha(spec, m), epsilon=eps, window=spec.window,
                               strict=spec.strict_alpha).check(m)


def _raw(eps: float, s: float) -> float:
    return s / eps**2 if eps > 0 else s


# -- rates ------------------------------------------------------------------------

def qeps_population_block(m: MeasurementModel) -> np.ndarray:
    idx = diagonal_indices(m.dim)
    return np.real(build_Q_eps(m).matrix[np.ix_(idx, idx)]).T


def run_rates(spec: ExperimentSpec) -> ResultBundle:
    spec = spec.resolved()
    m = load(spec)
    b = _bundle(spec, m)
    gi = gap(m)
    i_rate, a_star = rate_I(m)
    b.info.update({"g": gi.g, "g_sp": gi.g_sp, "I": i_rate, "a_star": a_star,
                   "alpha0": est.alpha0(m), "alpha0_unmargined": est.alpha0(m, 0.0)})
    rates = build_Q(m)
    q = rates.q
    off = q[~np.eye(m.dim, dtype=bool)]
    b.add("q-offdiag-min", float(off.min(initial=0.0)), -spec.tolerances["rate_nonneg"], ">=")
    b.add("q-rowsum-max", float(np.abs(q.sum(axis=1)).max()), spec.tolerances["rate_rowsum"])
    b.tables["Q"] = _csv(["source", "dest", "value"],
                         [(m.spectrum[i], m.spectrum[j], q[i, j]) for i in range(m.dim) for j in range(m.dim)])
    rows, entries = [], []
    prev = None
    for eps in spec.eps:
        me = m.replace(epsilon=eps)
        ok, g, bound = coupling_condition(me)
        if eps <= 0 or not ok:
            rows.append((eps, "skipped", f"g = {g:.6g} <= 4 eps ||H|| = {bound:.6g}" if eps > 0 else "eps = 0",
                         "nan", "nan"))
            prev = None
            continue
        qe = qeps_population_block(me)
        diff = float(np.linalg.norm(qe - q, 2))
        ratio = diff / prev if prev else float("nan")
        rows.append((eps, "ok", "", diff, ratio))
        prev = diff if diff > 0 else None
        entries += [(eps, m.spectrum[i], m.spectrum[j], qe[i, j]) for i in range(m.dim) for j in range(m.dim)]
    b.tables["qeps"] = _csv(["eps", "status", "reason", "norm-diff", "ratio-to-previous"], rows)
    b.tables["qeps-entries"] = _csv(["eps", "source", "dest", "value"], entries)
    return b


# -- populations against the limiting chain ----------------------------------------------------------------------

def population_errors(m: MeasurementModel, rho: np.ndarray, eps_list, s_grid) -> tuple[list, list]:
    q = build_Q(m).q
    pi = mk.initial_distribution(rho)
    errs, rows = [], []
    for eps in eps_list:
        lind = build_lindblad(m.replace(epsilon=eps))
        err = 0.0
        for s in s_grid:
            pop = np.real(np.diag(semigroup(lind, s / eps**2)(rho)))
            ref = pi @ mk.transition(q, s)
            for k in range(m.dim):
                rows.append((eps, s, m.spectrum[k], pop[k], ref[k], abs(pop[k] - ref[k])))
            err = max(err, float(np.abs(pop - ref).max()))
        errs.append(err)
    return errs, rows


def run_verify_theorem1(spec: ExperimentSpec) -> ResultBundle:
    spec = spec.resolved()
    if len(spec.eps) < 2 or any(e <= 0 for e in spec.eps):
        raise SpecError("verify-theorem1 needs at least two positive eps values")
    m = load(spec)
    b = _bundle(spec, m)
    eps_list = sorted(spec.eps, reverse=True)
    s_grid = spec.horizon * np.arange(1, 21) / 20
    errs, rows = population_errors(m, initial_state(spec.rho0, m.dim), eps_list, s_grid)
    b.tables["populations"] = _csv(["eps", "s", "nu", "lindblad", "markov", "abs-diff"], rows)
    b.tables["errors"] = _csv(["eps", "err"], zip(eps_list, errs))
    for e, err in zip(eps_list, errs):
        b.report(f"err[eps={e}]", err)
    if max(errs) <= 1e-10:
        b.add("err-vanishes", max(errs), 1e-10)
        return b
    for k in range(len(errs) - 1):
        b.add(f"err-decrease[{eps_list[k]}->{eps_list[k + 1]}]", errs[k + 1] - errs[k], 0.0, "<")
        b.add(f"err-ratio[{eps_list[k]}->{eps_list[k + 1]}]", errs[k + 1] / errs[k],
              (spec.tolerances["theorem1_ratio_lo"], spec.tolerances["theorem1_ratio_hi"]), "in")
    return b


# -- estimator paths: rates and fdd ---------------------------------------------------

FDD_TIMES = (0.3, 0.6, 0.9)


def _paths(spec, m, eps):
    """Estimator paths covering rescaled time [0, horizon], plus the config used."""
    me = m.replace(epsilon=eps)
    cfg = _config(spec, me, eps)
    raw_s = _raw(eps, spec.horizon)
    n_win = int(math.floor(raw_s / cfg.T + 1e-12)) + 1
    ens = _ensemble(me, initial_state(spec.rho0, m.dim), n_win * cfg.T, spec.traj, spec.seed)
    paths = [est.build_path(me, r, cfg) for r in ens.records]
    return me, cfg, paths


def _fdd_metrics(b: ResultBundle, spec, m, eps, cfg, paths, chain) -> None:
    times = [t for t in FDD_TIMES if t <= spec.horizon]
    if not times:
        return
    raw = [_raw(eps, t) for t in times]
    vals = np.array([[p.at(t) for t in raw] for p in paths])
    emp = np.zeros((m.dim,) * len(times))
    np.add.at(emp, tuple(vals.T), 1.0)
    emp /= len(paths)
    ref = mk.fdd_table(chain, times)
    tv = 0.5 * float(np.abs(emp - ref).sum())
    b.add(f"fdd-tv[eps={eps}]", tv, spec.tolerances["fdd_tv"])
    rows = [(eps, " ".join(str(m.spectrum[k]) for k in cell), emp[cell], ref[cell]) for cell in np.ndindex(*emp.shape)]
    b.tables[f"fdd-eps{eps}"] = _csv(["eps", "values", "empirical", "predicted"], rows)


def run_verify_jump_rates(spec: ExperimentSpec, with_fdd: bool = True) -> ResultBundle:
    spec = spec.resolved()
    m = load(spec)
    b = _bundle(spec, m)
    rates = build_Q(m)
    q = rates.q
    tol = spec.tolerances["rate_rel"]
    i_rate, _ = rate_I(m)
    for eps in spec.eps:
        me, cfg, paths = _paths(spec, m, eps)
        js = est.jump_statistics(paths, cfg, eps, d=m.dim)
        b.info[f"eps={eps}"] = {"alpha": cfg.alpha, "T": cfg.T, "h": cfg.h, "windows": paths[0].n_windows}
        b.tables[f"rates-eps{eps}"] = _csv(
            ["eps", "source", "dest", "transitions", "exposure", "rate", "stderr", "Q"],
            [(eps, m.spectrum[i], m.spectrum[j], js.counts[i, j], js.exposure[i], js.rates[i, j], js.stderr[i, j],
              q[i, j]) for i in range(m.dim) for j in range(m.dim) if i != j])
        b.tables[f"paths-eps{eps}"] = est.paths_csv(paths)
        if eps == 0:
            # no Hamiltonian drive: every estimator jump is a misidentification
            n_trans = sum(p.n_windows - 1 for p in paths)
            freq = js.counts.sum() / max(n_trans, 1)
            bound = 2 * (m.dim - 1) * math.exp(-cfg.T * (1 - math.exp(-i_rate)))
            b.add("eps0-jump-frequency", freq, bound + 3 * math.sqrt(bound * (1 - bound) / max(n_trans, 1)))
            continue
        for i in range(m.dim):
            for j in range(i + 1, m.dim):
                sym = abs(q[i, j] - q[j, i]) <= 1e-12 * max(1.0, abs(q[i, j]))
                for a, c in ((i, j), (j, i)):
                    if q[a, c] > 0:
                        rel = abs(js.rates[a, c] - q[a, c]) / q[a, c]
                        b.add(f"rate-rel-err[{m.spectrum[a]}->{m.spectrum[c]},eps={eps}]", rel, tol,
                              gating=not sym, rate=js.rates[a, c], stderr=js.stderr[a, c], Q=q[a, c])
                        b.add(f"rate-stderr-rel[{m.spectrum[a]}->{m.spectrum[c]},eps={eps}]",
                              js.stderr[a, c] / q[a, c], tol / 2, gating=False)
                if sym and q[i, j] > 0:
                    n_ij = js.counts[i, j] + js.counts[j, i]
                    expo = js.exposure[i] + js.exposure[j]
                    pooled = n_ij / expo if expo > 0 else 0.0
                    b.add(f"rate-rel-err[{m.spectrum[i]}<->{m.spectrum[j]},eps={eps}]", abs(pooled - q[i, j]) / q[i, j],
                          tol, rate=pooled, stderr=math.sqrt(n_ij) / expo if expo > 0 else float("inf"), Q=q[i, j])
        for theta in (0.2, 0.4, 0.8):
            width = max(2, int(round(theta / cfg.h)))
            b.report(f"multi-jump-frequency[theta={theta},eps={eps}]", est.multi_jump_frequency(paths, width),
                     windows=width)
        if with_fdd:
            chain = mk.MarkovChain(q, mk.initial_distribution(initial_state(spec.rho0, m.dim)))
            _fdd_metrics(b, spec, m, eps, cfg, paths, chain)
    return b


def run_verify_fdd(spec: ExperimentSpec) -> ResultBundle:
    spec = spec.resolved()
    m = load(spec)
    b = _bundle(spec, m)
    q = build_Q(m).q
    chain = mk.MarkovChain(q, mk.initial_distribution(initial_state(spec.rho0, m.dim)))
    for eps in spec.eps:
        if eps <= 0:
            raise SpecError("verify-fdd needs eps > 0")
        me, cfg, paths = _paths(spec, m, eps)
        _fdd_metrics(b, spec, m, eps, cfg, paths, chain)
    # the limiting chain itself: sampled paths against the product formula
    times = [t for t in FDD_TIMES if t <= spec.horizon]
    n = 10000
    vals = np.array([mk.sample_path(chain, spec.horizon, spec.seed, k).at(np.array(times)) for k in range(n)])
    cells = np.ravel_multi_index(tuple(vals.T), (m.dim,) * len(times))
    obs = np.bincount(cells, minlength=m.dim ** len(times))
    exp_ = mk.fdd_table(chain, times).ravel() * n
    keep = exp_ > 0
    p = float(chisquare(obs[keep], exp_[keep] * obs[keep].sum() / exp_[keep].sum()).pvalue)
    b.add("markov-sampler-chi2-pvalue", p, 1e-3, ">")
    return b


# -- purification ------------------------------------------------------------------------

def purification_distance(m: MeasurementModel, cfg: est.EstimatorConfig, ens, t: float) -> np.ndarray:
    """||rho_t - P_nuhat||_2 with nuhat estimated from the window (t - T, t]."""
    out = np.empty(len(ens.records))
    for k, (rec, rho) in enumerate(zip(ens.records, ens.final)):
        nu = est.mle_index(m, rec, t - cfg.T, cfg.T)
        proj = np.zeros_like(rho)
        proj[nu, nu] = 1.0
        out[k] = np.linalg.norm(rho - proj)
    return out


def run_verify_purification(spec: ExperimentSpec) -> ResultBundle:
    spec = spec.resolved()
    m = load(spec)
    b = _bundle(spec, m)
    rows, scaled = [], []
    rho0 = initial_state(spec.rho0, m.dim)
    for eps in spec.eps:
        me = m.replace(epsilon=eps)
        cfg = _config(spec, me, eps)
        if eps > 0 and not spec.horizon > 2 * eps**2 * cfg.T:
            raise SpecError(f"hypothesis violated: s = {spec.horizon} <= 2 eps^2 T = {2 * eps**2 * cfg.T:.6g} "
                            f"at eps = {eps}")
        t = _raw(eps, spec.horizon)
        if t < cfg.T:
            raise SpecError(f"horizon {t} shorter than the window {cfg.T}")
        ens = _ensemble(me, rho0, t, spec.traj, spec.seed)
        dist = purification_distance(me, cfg, ens, t)
        d_mean = float(dist.mean())
        d_se = float(dist.std(ddof=1) / math.sqrt(dist.size)) if dist.size > 1 else float("nan")
        if eps > 0:
            sc = d_mean / (eps * math.sqrt(abs(math.log(eps))))
            scaled.append(sc)
            b.add(f"hypothesis[eps={eps}]", spec.horizon - 2 * eps**2 * cfg.T, 0.0, ">")
        else:
            sc = float("nan")
            b.add("eps0-distance", d_mean, 0.05)
        rows.append((eps, cfg.alpha, cfg.T, d_mean, d_se, sc))
        b.report(f"D[eps={eps}]", d_mean, stderr=d_se, scaled=sc)
    b.tables["distances"] = _csv(["eps", "alpha", "T", "D", "stderr", "scaled"], rows)
    if len(scaled) >= 2:
        b.add("purification-band", max(scaled) / min(scaled), spec.tolerances["purification_band"])
    return b


# -- bounds -------------------------------------------------------------------------------

def random_gapped_model(d: int, seed: int, fraction: float = 0.5) -> MeasurementModel:
    """Random model with eps = fraction * g / (4 ||H||)."""
    m = random_model(d, np.random.default_rng(seed))
    return m.replace(epsilon=fraction * gap(m).g / (4 * m.h_norm))


def misidentification_frequencies(m: MeasurementModel, windows, n: int, seed: int) -> list[tuple]:
    """Misidentification frequency at eps = 0 from each eigenprojection."""
    m0 = m.replace(epsilon=0.0)
    i_rate, _ = rate_I(m0)
    out = []
    for T in windows:
        bound = (m.dim - 1) * math.exp(-T * (1 - math.exp(-i_rate)))
        for nu in range(m.dim):
            ens = _ensemble(m0, initial_state(f"P{nu}", m.dim), T, n, seed + 7919 * nu)
            wrong = sum(est.mle_index(m0, r, 0.0, T) != nu for r in ens.records)
            freq = wrong / n
            p = max(bound, freq)
            out.append((T, nu, freq, bound, bound + 3 * math.sqrt(p * (1 - p) / n)))
    return out


def run_verify_bounds(spec: ExperimentSpec) -> ResultBundle:
    spec = spec.resolved()
    m = load(spec)
    b = _bundle(spec, m)
    rec_rows = []

    def averaging(label, model):
        recs = check_averaging_bounds(model)
        for r in recs:
            rec_rows.append((label, r["inequality-id"], json.dumps(r["parameters"], sort_keys=True), r["lhs"],
                             r["rhs"], r["slack"], r["pass"]))
        b.add(f"averaging-min-slack[{label}]", min(r["slack"] for r in recs), 0.0, ">=")

    for eps in spec.eps:
        me = m.replace(epsilon=eps)
        if not coupling_condition(me)[0]:
            raise SpecError(f"eps = {eps} violates g > 4 eps ||H||")
        averaging(f"model,eps={eps}", me)
    _, g, _ = coupling_condition(m)
    averaging("model,eps=boundary", m.replace(epsilon=0.99 * g / (4 * m.h_norm)))
    for d in (3, 4):
        for k in range(5):
            averaging(f"random-d{d}-seed{spec.seed + k}", random_gapped_model(d, spec.seed + k))
    b.tables["averaging"] = _csv(["model", "inequality-id", "parameters", "lhs", "rhs", "slack", "pass"], rec_rows)

    nd = misidentification_frequencies(m, (20.0, 40.0, 60.0), spec.traj, spec.seed)
    for T, nu, freq, bound, limit in nd:
        b.add(f"misidentification[T={T},nu={m.spectrum[nu]}]", freq, limit, bound=bound)
    b.tables["misidentification"] = _csv(["T", "nu", "frequency", "bound", "limit"], nd)

    rng = np.random.default_rng([spec.seed, 1])
    worst, cp_rows = -math.inf, []
    for k in range(200):
        d = int(rng.integers(2, 5))
        kmap, _ = random_substochastic_cp(d, rng)
        n = cp_norms(kmap, restarts=1, maxiter=200, seed=k)
        worst = max(worst, max(n.values()))
        cp_rows.append((k, d, n["1op"], n["2op"], n["infop"], n["1op-closed"], n["infop-closed"]))
    b.add("cp-max-norm", worst, 1.0 + spec.tolerances["contraction"])
    b.tables["cp-norms"] = _csv(["map", "d", "1op", "2op", "infop", "1op-closed", "infop-closed"], cp_rows)

    rng = np.random.default_rng([spec.seed, 2])
    slack, delta_rows = math.inf, []
    for k in range(200):
        d = int(rng.integers(2, 5))
        h = random_hermitian(d, rng, scale=float(rng.uniform(0.1, 2.0)))
        eps = float(rng.uniform(1e-3, 1.0))
        for r in check_conjugation_bounds(h, eps):
            slack = min(slack, r["slack"])
            delta_rows.append((k, d, eps, r["inequality-id"], r["lhs"], r["rhs"], r["slack"], r["pass"]))
    b.add("conjugation-min-slack", slack, 0.0, ">=")
    b.tables["conjugation"] = _csv(["pair", "d", "eps", "inequality-id", "lhs", "rhs", "slack", "pass"], delta_rows)
    return b


# -- properties ---------------------------------------------------------------------------

def qeps_halving_ratios(m: MeasurementModel, halvings: int = 2) -> list[float]:
    """||Q_eps - Q|| ratios under eps -> eps/2, starting at eps = g / (8 ||H||)."""
    q = build_Q(m).q
    eps = gap(m).g / (8 * m.h_norm)
    diffs = []
    for _ in range(halvings + 1):
        diffs.append(float(np.linalg.norm(qeps_population_block(m.replace(epsilon=eps)) - q, 2)))
        eps /= 2
    return [b / a for a, b in zip(diffs, diffs[1:])]


def run_verify_properties(spec: ExperimentSpec) -> ResultBundle:
    spec = spec.resolved()
    m = load(spec)
    b = _bundle(spec, m)
    eps = spec.eps[0]
    me = m.replace(epsilon=eps)
    rho0 = initial_state(spec.rho0, m.dim)
    t = spec.horizon
    lind = build_lindblad(me)
    exact = semigroup(lind, t)(rho0)

    def mc(mode):
        chunk = CHUNK
        parts = pool_map(lambda lo: mc_sums(me, rho0, t, min(chunk, spec.traj - lo), spec.seed, mode=mode, start=lo),
                         range(0, spec.traj, chunk))
        return mean_and_stderr(sum(p[0] for p in parts), sum(p[1] for p in parts), sum(p[2] for p in parts))

    mean_a, se_a = mc("apriori")
    se_agg = float(np.linalg.norm(se_a))
    b.add("unravelling-hs-distance", float(np.linalg.norm(mean_a - exact)),
          max(spec.tolerances["mc_hs_floor"], 3 * se_agg), stderr=se_agg)
    mean_p, se_p = mc("physical")
    b.add("mode-agreement-hs", float(np.linalg.norm(mean_a - mean_p)),
          3 * math.sqrt(se_agg**2 + float(np.linalg.norm(se_p)) ** 2))

    rng = np.random.default_rng([spec.seed, 3])
    worst_l = max(dissipativity(lind.superop, x / np.linalg.norm(x))
                  for x in (random_matrix(m.dim, rng) for _ in range(200)))
    b.add("dissipativity-L", worst_l, spec.tolerances["dissipative"])
    if coupling_condition(me)[0]:
        qe = build_Q_eps(me)
        worst_q = max(dissipativity(qe, x / np.linalg.norm(x)) for x in (random_matrix(m.dim, rng) for _ in range(200)))
        b.add("dissipativity-Qeps", worst_q, spec.tolerances["dissipative"])

    q = build_Q(m).q
    off = q[~np.eye(m.dim, dtype=bool)]
    b.add("q-offdiag-min", float(off.min(initial=0.0)), -spec.tolerances["rate_nonneg"], ">=")
    b.add("q-rowsum-max", float(np.abs(q.sum(axis=1)).max()), spec.tolerances["rate_rowsum"])

    ratio_rows = []
    for k in range(5):
        rm = random_gapped_model(3, spec.seed + k)
        for j, r in enumerate(qeps_halving_ratios(rm)):
            ratio_rows.append((spec.seed + k, j, r))
            b.add(f"qeps-halving-ratio[seed={spec.seed + k},step={j}]", r,
                  (spec.tolerances["qeps_ratio_lo"], spec.tolerances["qeps_ratio_hi"]), "in")
    b.tables["qeps-ratios"] = _csv(["model-seed", "step", "ratio"], ratio_rows)

    ens = _ensemble(me, rho0, 10.0, 100, spec.seed)
    x = random_matrix(m.dim, np.random.default_rng([spec.seed, 4]))
    dev = 0.0
    for rec in ens.records:
        direct = apply_propagator(me, rec, x, 10.0, 1.0)
        composed = apply_propagator(me, rec, apply_propagator(me, rec, x, 4.0, 1.0), 10.0, 4.0)
        dev = max(dev, float(np.abs(direct - composed).max()))
    b.add("cocycle-max-deviation", dev, 1e-10)
    return b


# -- simulate -------------------------------------------------------------------------------

def run_simulate(spec: ExperimentSpec) -> ResultBundle:
    spec = spec.resolved()
    m = load(spec)
    b = _bundle(spec, m)
    rho0 = initial_state(spec.rho0, m.dim)
    d = m.dim
    for eps in spec.eps:
        me = m.replace(epsilon=eps)
        horizon = _raw(eps, spec.horizon)
        snaps = sorted({_raw(eps, s) for s in spec.snapshots} | {horizon})
        ens = _ensemble(me, rho0, horizon, spec.traj, spec.seed, mode=spec.mode, snapshots=snaps)
        rows, worst_tr, worst_psd = [], 0.0, 0.0
        for k, rec in enumerate(ens.records):
            for j, ts in enumerate(ens.snapshot_times):
                rho = ens.snapshots[k, j]
                tr = float(np.trace(rho).real)
                worst_tr = max(worst_tr, abs(tr - 1.0))
                worst_psd = min(worst_psd, float(np.linalg.eigvalsh((rho + rho.conj().T) / 2).min()))
                rows.append([rec.index, ts, tr, ens.snapshot_logweight[k, j]]
                            + [v for z in rho.ravel() for v in (z.real, z.imag)])
        head = ["index", "time", "trace", "logweight"] + [f"rho_{i}{j}_{p}" for i in range(d) for j in range(d)
                                                          for p in ("re", "im")]
        b.tables[f"snapshots-eps{eps}"] = _csv(head, rows)
        b.tables[f"events-eps{eps}"] = event_dump_csv(me, ens.records, rho0)
        b.add(f"snapshot-trace-deviation[eps={eps}]", worst_tr, spec.tolerances["trace"])
        b.add(f"snapshot-min-eigenvalue[eps={eps}]", worst_psd, -spec.tolerances["psd"], ">=")
        if eps > 0 or spec.window is not None:
            cfg = _config(spec, me, eps)
            if horizon >= cfg.T:
                b.tables[f"paths-eps{eps}"] = est.paths_csv([est.build_path(me, r, cfg) for r in ens.records])
    return b


RUNNERS: dict[str, Callable[[ExperimentSpec], ResultBundle]] = {
    "rates": run_rates,
    "simulate": run_simulate,
    "verify-theorem1": run_verify_theorem1,
    "verify-jump-rates": run_verify_jump_rates,
    "verify-fdd": run_verify_fdd,
    "verify-purification": run_verify_purification,
    "verify-bounds": run_verify_bounds,
    "verify-properties": run_verify_properties,
}


def run(spec: ExperimentSpec) -> ResultBundle:
    return RUNNERS[spec.resolved().experiment](spec)
