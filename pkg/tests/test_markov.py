import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from weakmeas.linalg import mat_exp, random_density_matrix
from weakmeas.lindblad import build_Q
from weakmeas.markov import (MarkovChain, fdd_probability, fdd_table, initial_distribution, paths_csv,
                             sample_path, transition)
from weakmeas.model import qubit_bernoulli, random_model
from conftest import Q_QUBIT
from strategies import models, seeds

Q2 = np.array([[-Q_QUBIT, Q_QUBIT], [Q_QUBIT, -Q_QUBIT]])


def stay(t):
    return (1 + math.exp(-2 * Q_QUBIT * t)) / 2


def random_generator(d, rng):
    q = rng.exponential(1.0, (d, d))
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def test_initial_distribution():
    assert np.array_equal(initial_distribution(np.diag([0.0, 1.0, 0.0])), [0, 1, 0])
    assert np.allclose(initial_distribution(np.full((2, 2), 0.5)), [0.5, 0.5])
    rho = random_density_matrix(3, np.random.default_rng(0))
    assert np.allclose(initial_distribution(rho), np.real(np.diag(rho)), atol=1e-15)
    with pytest.raises(ValueError):
        initial_distribution(np.eye(2))
    with pytest.raises(ValueError):
        initial_distribution(np.eye(2) / 2, spectrum=[0, 1, 2])


def test_transition_examples():
    assert np.array_equal(transition(Q2, 0.0), np.eye(2))
    assert np.allclose(transition(np.zeros((3, 3)), 5.0), np.eye(3))
    g = transition(Q2, 1.0)
    assert math.isclose(g[0, 0], stay(1.0), rel_tol=1e-12)
    assert round(g[0, 0], 7) == 0.5340398
    with pytest.raises(ValueError):
        transition(Q2, -0.1)


@given(seeds, st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_transition_is_stochastic_and_chapman_kolmogorov(seed, t, u):
    q = random_generator(3, np.random.default_rng(seed))
    g = transition(q, t)
    assert g.min() >= -1e-12
    assert np.abs(g.sum(axis=1) - 1).max() <= 1e-10
    assert np.abs(transition(q, t + u) - g @ transition(q, u)).max() <= 1e-9


@given(seeds, st.floats(0.0, 3.0))
def test_forward_equation_convention(seed, t):
    q = random_generator(3, np.random.default_rng(seed))
    h = 1e-6
    fd = (transition(q, t + h) - transition(q, t)) / h
    assert np.abs(fd - transition(q, t) @ q).max() <= 1e-4
    # small-h rows: Pr(dest | source) = delta + q[source, dest] h
    small = transition(q, h)
    assert np.abs((small - np.eye(3)) / h - q).max() <= 1e-4


@given(models(), seeds, st.floats(0.0, 3.0))
def test_bridge_to_population_superop(m, seed, s):
    r = build_Q(m)
    pi = initial_distribution(random_density_matrix(m.dim, np.random.default_rng(seed)))
    via_chain = pi @ transition(r, s)
    via_superop = np.real(np.diag(mat_exp(r.as_superop(), s)(np.diag(pi))))
    assert np.abs(via_chain - via_superop).max() <= 1e-10


def test_chain_validation():
    with pytest.raises(ValueError):
        MarkovChain(Q2, np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        MarkovChain(-Q2, np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        MarkovChain(Q2, np.array([1.0]))
    c = MarkovChain.from_rates(build_Q(qubit_bernoulli()), np.full((2, 2), 0.5))
    assert np.allclose(c.generator, Q2) and np.allclose(c.initial, 0.5)


# -- fdd ---------------------------------------------------------------------------------

def test_fdd_examples():
    start0 = np.array([1.0, 0.0])
    assert fdd_probability(MarkovChain(np.zeros((2, 2)), start0), [0.4], [0]) == 1.0
    c = MarkovChain(Q2, start0)
    p = fdd_probability(c, [0.5, 1.0], [0, 0])
    assert math.isclose(p, stay(0.5) ** 2, rel_tol=1e-12)
    assert round(stay(0.5), 6) == 0.630460 and round(p, 7) == 0.3974803
    for bad in ([1.0, 0.5], [0.5, 0.5], [-0.1, 0.5]):
        with pytest.raises(ValueError):
            fdd_probability(c, bad, [0, 0])
    with pytest.raises(ValueError):
        fdd_probability(c, [0.5], [0, 0])


@given(seeds)
def test_fdd_marginalization(seed):
    rng = np.random.default_rng(seed)
    q = random_generator(3, rng)
    c = MarkovChain(q, rng.dirichlet(np.ones(3)))
    times = np.sort(rng.uniform(0.01, 1.0, 3))
    if np.any(np.diff(times) <= 0):
        return
    full = fdd_table(c, times)
    assert math.isclose(full.sum(), 1.0, rel_tol=1e-12)
    assert np.abs(full.sum(axis=-1) - fdd_table(c, times[:2])).max() <= 1e-12


# -- path sampling -----------------------------------------------------------------------

def test_constant_path_when_absorbing():
    c = MarkovChain(np.zeros((2, 2)), np.array([0.0, 1.0]))
    p = sample_path(c, 10.0, seed=0)
    assert p.n_jumps == 0 and p.at(9.9) == 1
    with pytest.raises(ValueError):
        sample_path(c, 0.0, seed=0)


@given(seeds)
def test_path_invariants(seed):
    rng = np.random.default_rng(seed)
    c = MarkovChain(random_generator(3, rng), rng.dirichlet(np.ones(3)))
    p = sample_path(c, 5.0, seed)
    assert p.times[0] == 0 and np.all(np.diff(p.times) > 0) and p.times[-1] <= 5.0
    assert np.all(np.diff(p.states) != 0)
    assert math.isclose(p.occupation(3).sum(), 5.0)


def test_holding_times():
    rng = np.random.default_rng(1)
    q = random_generator(3, rng)
    c = MarkovChain(q, np.array([1.0, 0.0, 0.0]))
    mean = 1 / -q[0, 0]
    holds = []
    for k in range(10000):
        p = sample_path(c, 20 * mean, seed=3, index=k)  # censoring chance e^-20
        if p.n_jumps:
            holds.append(p.times[1])
    holds = np.array(holds)
    assert abs(holds.mean() - mean) <= 3 * mean / math.sqrt(holds.size)


def test_ergodic_average_and_jump_count():
    c = MarkovChain(Q2, np.array([0.5, 0.5]))
    occ = np.array([sample_path(c, 200.0, seed=5, index=k).occupation(2)[0] / 200.0 for k in range(200)])
    assert abs(occ.mean() - 0.5) <= 3 * occ.std(ddof=1) / math.sqrt(occ.size)
    jumps = np.array([sample_path(c, 1.0, seed=6, index=k).n_jumps for k in range(10000)])
    # in equilibrium jumps form a Poisson process of rate q
    assert abs(jumps.mean() - Q_QUBIT) <= 3 * math.sqrt(Q_QUBIT / jumps.size)


def test_sampled_fdd_frequencies():
    rng = np.random.default_rng(2)
    c = MarkovChain(random_generator(3, rng), np.array([0.2, 0.5, 0.3]))
    times = [0.3, 0.6, 0.9]
    obs = np.zeros((3, 3, 3))
    for k in range(10000):
        v = sample_path(c, 1.0, seed=7, index=k).at(np.array(times))
        obs[tuple(v)] += 1
    exp = fdd_table(c, times) * 10000
    keep = exp.ravel() >= 5
    o, e = obs.ravel()[keep], exp.ravel()[keep]
    e = e * o.sum() / e.sum()
    assert stats.chisquare(o, e).pvalue > 1e-3


def test_paths_csv_shape():
    c = MarkovChain(Q2, np.array([1.0, 0.0]))
    p = sample_path(c, 1.0, seed=0, index=2)
    lines = paths_csv([p], 0.25, spectrum=np.array([0.0, 1.0])).splitlines()
    assert lines[0] == "trajectory-index,window-index,window-start-time,value"
    assert len(lines) == 5 and lines[1].startswith("2,0,0.0,")
