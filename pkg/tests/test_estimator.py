import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weakmeas.estimator import (AlphaError, EstimatorConfig, EstimatorPath, alpha0, build_path, jump_statistics,
                                likelihood_from_counts, log_likelihood, mle, mle_index, multi_jump_frequency,
                                paths_csv)
from weakmeas.model import MeasurementModel, qubit_bernoulli, random_model, rate_I
from weakmeas.trajectory import TrajectoryRecord, sample_ensemble
from strategies import models, seeds

PLUS, MINUS = 0, 1


def record(times, outcomes, horizon=None):
    times = np.asarray(times, dtype=float)
    taus = np.diff(np.concatenate([[0.0], times]))
    return TrajectoryRecord(taus=taus, outcomes=outcomes, horizon=horizon or float(times[-1]) + 1.0,
                            seed=0, index=0)


def path_of(indices, T=1.0, k=0):
    idx = np.asarray(indices)
    return EstimatorPath(indices=idx, values=idx.astype(float), T=T, trajectory_index=k)


# -- alpha0 and config -------------------------------------------------------------------

def test_alpha0_qubit():
    m = qubit_bernoulli()
    i_rate, _ = rate_I(m)
    g = 1 - math.sqrt(0.75)
    assert math.isclose(alpha0(m, margin=0.0), max(2 / (1 - math.exp(-i_rate)), 1 / g), rel_tol=1e-9)
    assert round(alpha0(m, margin=0.0), 4) == 14.9282
    assert round(alpha0(m), 4) == 17.9138


def test_config_window_and_errors():
    cfg = EstimatorConfig(alpha=10.0, epsilon=0.05)
    assert math.isclose(cfg.T, 10 * math.log(20))
    assert math.isclose(cfg.h, 0.0025 * cfg.T)
    assert EstimatorConfig(alpha=1.0, epsilon=0.0, window=7.0).T == 7.0
    for bad in (dict(alpha=0.0, epsilon=0.1), dict(alpha=1.0, epsilon=0.0), dict(alpha=1.0, epsilon=1.0)):
        with pytest.raises(ValueError):
            EstimatorConfig(**bad)
    m = qubit_bernoulli()
    EstimatorConfig(alpha=10.0, epsilon=0.05).check(m)
    with pytest.raises(AlphaError):
        EstimatorConfig(alpha=10.0, epsilon=0.05, strict=True).check(m)
    EstimatorConfig(alpha=18.0, epsilon=0.05, strict=True).check(m)


# -- likelihood --------------------------------------------------------------------------

def test_log_likelihood_qubit_example():
    m = qubit_bernoulli()
    rec = record([0.5, 1.0, 2.0], [PLUS, PLUS, MINUS])
    tab = log_likelihood(m, rec, 0.0, 2.5)
    l0 = (2 * math.log(1.5) + math.log(0.5)) / 3
    l1 = (2 * math.log(0.5) + math.log(1.5)) / 3
    assert np.allclose(tab.values, [l0, l1], rtol=1e-14)
    assert round(l0, 7) == 0.0392610 and round(l1, 7) == -0.3269431
    assert tab.n_events == 3 and not tab.empty and not tab.tie
    assert mle(m, rec, 0.0, 2.5) == 0.0
    flipped = record([0.5, 1.0, 2.0], [MINUS, MINUS, PLUS])
    assert mle(m, flipped, 0.0, 2.5) == 1.0


def test_single_observation():
    m = qubit_bernoulli()
    tab = log_likelihood(m, record([0.3], [PLUS]), 0.0, 1.0)
    assert np.allclose(tab.values, [math.log(1.5), math.log(0.5)])


def test_window_is_half_open():
    m = qubit_bernoulli()
    rec = record([1.0, 2.0], [MINUS, PLUS], horizon=4.0)
    assert log_likelihood(m, rec, 1.0, 1.0).n_events == 1  # (1, 2] holds only the event at 2
    assert np.allclose(log_likelihood(m, rec, 1.0, 1.0).values, [math.log(1.5), math.log(0.5)])


def test_empty_window():
    m = qubit_bernoulli()
    tab = log_likelihood(m, record([5.0], [MINUS]), 0.0, 2.0)
    assert tab.empty and tab.n_events == 0 and np.all(tab.values == 0)
    assert mle(m, record([5.0], [MINUS]), 0.0, 2.0, previous=1.0) == 1.0
    assert mle(m, record([5.0], [MINUS]), 0.0, 2.0) == 0.0


def test_malformed_window():
    m = qubit_bernoulli()
    rec = record([1.0], [PLUS], horizon=3.0)
    for s, T in ((2.0, 2.0), (0.0, 0.0), (-1.0, 1.0)):
        with pytest.raises(ValueError):
            log_likelihood(m, rec, s, T)


def test_tie_flag_and_smallest_eigenvalue_rule():
    # non-identifiable table built on purpose, bypassing validate()
    m = MeasurementModel(spectrum=[3.0, -2.0], labels=("a", "b"), weights=[0.5, 0.5], kraus=np.ones((2, 2)),
                         hamiltonian=np.zeros((2, 2)), epsilon=0.1)
    rec = record([0.5, 0.7], [0, 1])
    tab = log_likelihood(m, rec, 0.0, 1.0)
    assert tab.tie and tab.values[0] == tab.values[1]
    assert mle(m, rec, 0.0, 1.0) == -2.0


def test_impossible_outcomes_are_excluded():
    m = MeasurementModel(spectrum=[0.0, 1.0], labels=("a", "b"), weights=[0.5, 0.5],
                         kraus=np.sqrt(np.array([[2.0, 0.0], [0.0, 2.0]])), hamiltonian=np.zeros((2, 2)),
                         epsilon=0.1).validate()
    rec = record([0.5, 1.5, 1.7], [1, 0, 1], horizon=3.0)
    tab = log_likelihood(m, rec, 0.0, 1.0)
    assert tab.values[0] == -np.inf and math.isclose(tab.values[1], math.log(2))
    assert mle(m, rec, 0.0, 1.0) == 1.0
    both = log_likelihood(m, rec, 1.0, 1.0)
    assert np.all(np.isneginf(both.values))
    assert mle(m, rec, 1.0, 1.0, previous=1.0) == 1.0  # nothing finite: carry previous


@given(models(), seeds, st.integers(0, 5))
def test_monotone_likelihood(m, seed, xi_pick):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 6, m.n_outcomes)
    counts[0] += 1
    xi = xi_pick % m.n_outcomes
    f = m.f[xi]
    a, b = int(np.argmax(f)), int(np.argmin(f))
    if f[a] <= f[b]:
        return
    before = likelihood_from_counts(m, counts)
    counts[xi] += 1
    after = likelihood_from_counts(m, counts)
    n0, n1 = before.n_events, after.n_events
    assert n1 * (after.values[a] - after.values[b]) >= n0 * (before.values[a] - before.values[b]) - 1e-12


@given(models(epsilon=0.3), seeds)
def test_phase_invariance(m, seed):
    rng = np.random.default_rng(seed)
    phases = np.exp(2j * np.pi * rng.random(m.n_outcomes))
    m2 = m.replace(kraus=m.kraus * phases[:, None])
    assert np.allclose(m.f, m2.f)
    rec = sample_ensemble(m, np.eye(m.dim) / m.dim, 60.0, 1, seed).records[0]
    cfg = EstimatorConfig(alpha=1.0, epsilon=0.3, window=6.0)
    assert np.array_equal(build_path(m, rec, cfg).indices, build_path(m2, rec, cfg).indices)


# -- paths -------------------------------------------------------------------------------

def test_build_path_layout_and_carry():
    m = qubit_bernoulli()
    # windows of length 1: (0,1] -> '-', (1,2] empty, (2,3] -> '+', (3,4] -> '-','-','+'
    rec = record([0.5, 2.5, 3.1, 3.2, 3.9], [MINUS, PLUS, MINUS, MINUS, PLUS], horizon=4.5)
    p = build_path(m, rec, EstimatorConfig(alpha=1.0, epsilon=0.1, window=1.0))
    assert p.n_windows == 4
    assert list(p.indices) == [1, 1, 0, 1]
    assert np.allclose(p.window_starts, [0, 1, 2, 3])
    assert list(p.jump_times) == [2, 3]
    assert p.at(0.0) == 1 and p.at(2.99) == 0 and p.at(3.0) == 1
    with pytest.raises(ValueError):
        p.at(4.0)
    first_empty = build_path(m, record([1.5], [MINUS], horizon=2.0), EstimatorConfig(1.0, 0.1, window=1.0))
    assert list(first_empty.indices) == [0, 1]


def test_build_path_matches_mle_chain(qubit):
    rec = sample_ensemble(qubit, np.eye(2) / 2, 500.0, 1, seed=4).records[0]
    cfg = EstimatorConfig(alpha=1.0, epsilon=0.05, window=25.0)
    p = build_path(qubit, rec, cfg)
    prev = None
    for j in range(p.n_windows):
        prev = mle_index(qubit, rec, j * cfg.T, cfg.T, prev)
        assert p.indices[j] == prev


def test_build_path_errors_and_purity(qubit):
    rec = sample_ensemble(qubit, np.eye(2) / 2, 50.0, 1, seed=1).records[0]
    with pytest.raises(ValueError):
        build_path(qubit, rec, EstimatorConfig(1.0, 0.05, window=60.0))
    with pytest.raises(ValueError):
        build_path(qubit, rec, EstimatorConfig(1.0, 0.05, window=5.0), horizon=80.0)
    cfg = EstimatorConfig(1.0, 0.05, window=7.0)
    a, b = build_path(qubit, rec, cfg), build_path(qubit, rec, cfg)
    assert np.array_equal(a.indices, b.indices) and a.n_windows == 7
    assert set(a.values) <= set(qubit.spectrum)


def test_path_uses_only_events_inside_each_window(qubit):
    rec = sample_ensemble(qubit, np.eye(2) / 2, 100.0, 1, seed=6).records[0]
    cfg = EstimatorConfig(1.0, 0.05, window=10.0)
    base = build_path(qubit, rec, cfg)
    # flip every outcome after t = 50 and add events past the last full window
    flipped = rec.outcomes.copy()
    flipped[rec.times > 50.0] ^= 1
    tail = TrajectoryRecord(taus=np.append(rec.taus, 0.0 + 1e-3), outcomes=np.append(flipped, 0),
                            horizon=105.0, seed=0, index=0)
    other = build_path(qubit, tail, cfg, horizon=100.0)
    assert np.array_equal(base.indices[:5], other.indices[:5])
    tab = log_likelihood(qubit, rec, 20.0, 10.0)
    assert np.array_equal(tab.values, log_likelihood(qubit, tail, 20.0, 10.0).values)


def test_eigenstate_misidentification_at_eps0():
    m = qubit_bernoulli(epsilon=0.0)
    i_rate, _ = rate_I(m)
    T = 20.0
    rho = np.diag([0.0, 1.0]).astype(complex)
    ens = sample_ensemble(m, rho, 20 * T, 200, seed=12)
    paths = [build_path(m, r, EstimatorConfig(1.0, 0.0, window=T)) for r in ens.records]
    wrong = np.mean(np.concatenate([p.indices != 1 for p in paths]))
    bound = math.exp(-T * (1 - math.exp(-i_rate)))
    n = 200 * 20
    assert wrong <= bound + 3 * math.sqrt(bound * (1 - bound) / n)


# -- jump statistics -----------------------------------------------------------------------

def test_jump_statistics_hand_example():
    cfg = EstimatorConfig(alpha=1.0, epsilon=0.1, window=10.0)  # h = 0.1
    paths = [path_of([0, 0, 1, 1, 0], T=10.0), path_of([1, 1, 1, 0, 0], T=10.0)]
    js = jump_statistics(paths, cfg, d=2)
    assert np.array_equal(js.counts, [[0, 1], [2, 0]])
    assert np.allclose(js.exposure, [0.3, 0.5])
    assert np.allclose(js.rates, [[-1 / 0.3, 1 / 0.3], [2 / 0.5, -2 / 0.5]])
    assert np.allclose(js.stderr[0, 1], 1 / 0.3) and np.allclose(js.stderr[1, 0], math.sqrt(2) / 0.5)
    assert js.n_paths == 2


def test_constant_paths_give_zero_rates():
    cfg = EstimatorConfig(alpha=1.0, epsilon=0.1, window=10.0)
    js = jump_statistics([path_of([1, 1, 1]), path_of([0, 0])], cfg, d=2)
    assert np.all(js.rates == 0) and np.all(js.counts == 0)
    with pytest.raises(ValueError):
        jump_statistics([], cfg)


def test_standard_error_scaling(qubit):
    eps = 0.1
    cfg = EstimatorConfig(alpha=alpha0(qubit, margin=0.0), epsilon=eps)
    m = qubit.replace(epsilon=eps)
    ens = sample_ensemble(m, np.full((2, 2), 0.5), 2.0 / eps**2, 1600, seed=17)
    paths = [build_path(m, r, cfg) for r in ens.records]
    se = {n: jump_statistics(paths[:n], cfg, d=2).stderr[0, 1] for n in (400, 800, 1600)}
    assert abs(se[800] / se[400] - 1 / math.sqrt(2)) <= 0.2 / math.sqrt(2)
    assert abs(se[1600] / se[400] - 0.5) <= 0.1


def test_multi_jump_frequency():
    paths = [path_of([0, 1, 0, 0, 0, 1]), path_of([0, 0])]
    # jumps = 1,1,0,0,1 ; width 2 windows: (1,1) (1,0) (0,0) (0,1) -> one hit of four
    assert multi_jump_frequency(paths, 2) == 0.25
    assert multi_jump_frequency(paths, 3) == 1 / 3
    assert multi_jump_frequency([path_of([0])], 2) == 0.0


def test_paths_csv():
    text = paths_csv([path_of([0, 1], T=2.5, k=4)])
    assert text.splitlines() == ["trajectory-index,window-index,window-start-time,value",
                                 "4,0,0.0,0.0", "4,1,2.5,1.0"]


@given(seeds)
def test_random_model_paths_in_spectrum(seed):
    m = random_model(3, np.random.default_rng(seed), epsilon=0.2)
    rec = sample_ensemble(m, np.eye(3) / 3, 40.0, 1, seed).records[0]
    p = build_path(m, rec, EstimatorConfig(1.0, 0.2, window=8.0))
    assert p.n_windows == 5 and set(p.values) <= set(m.spectrum)
