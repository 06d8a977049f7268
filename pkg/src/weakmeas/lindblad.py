"""Averaged dynamics: the Lindbladian, block projections and the limiting rate matrix.

Probe measurements arrive at rate one (the probe rate is not a parameter), so

    L_eps = -i eps ad_H + Phi - 1,   Phi(X) = sum_xi mu(xi) V_xi^* X V_xi.

The limiting generator acts on populations with the convention

    (Q pi)(nu) = sum_{nu'} Q(nu', nu) pi(nu'),

i.e. ``q[source, dest]``: ``Pr(Y_{s+h} = nu | Y_s = nu') = delta + Q(nu', nu) h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import (TOL, Superoperator, adjoint_map, hs_inner, mat_exp, op_norm, random_matrix,
                     superop_norm_1op, superop_norm_2op, superop_norm_inf_op)
from .model import MeasurementModel, NotIdentifiable, gap


class PreconditionError(ValueError):
    pass


def diagonal_indices(d: int) -> np.ndarray:
    """Flat vec-indices of the matrix units |nu><nu|."""
    return np.arange(d) * (d + 1)


@dataclass(frozen=True, eq=False)
class BlockProjector:
    """P X = sum_nu P_nu X P_nu (keeps the diagonal in the eigenbasis) and its complement."""

    dim: int
    P: Superoperator = field(init=False)
    P_perp: Superoperator = field(init=False)

    def __post_init__(self):
        mask = np.zeros(self.dim * self.dim)
        mask[diagonal_indices(self.dim)] = 1.0
        object.__setattr__(self, "P", Superoperator(np.diag(mask)))
        object.__setattr__(self, "P_perp", Superoperator(np.diag(1.0 - mask)))

    def component(self, nu_index: int) -> Superoperator:
        """P_nu X = P_nu X P_nu."""
        m = np.zeros((self.dim * self.dim,) * 2)
        k = diagonal_indices(self.dim)[nu_index]
        m[k, k] = 1.0
        return Superoperator(m)


def build_phi(m: MeasurementModel) -> Superoperator:
    """Phi = sum_xi mu(xi) V_xi^* (.) V_xi, assembled from its Kraus form."""
    d = m.dim
    total = np.zeros((d * d, d * d), dtype=complex)
    for w, row in zip(m.weights, m.kraus):
        v = np.diag(row)
        total += w * Superoperator.sandwich(v.conj().T, v).matrix
    return Superoperator(total)


def build_phi_xi(m: MeasurementModel, xi_index: int) -> Superoperator:
    """Phi_xi(X) = V_xi^* X V_xi for one outcome (no weight)."""
    v = np.diag(m.kraus[xi_index])
    return Superoperator.sandwich(v.conj().T, v)


@dataclass(frozen=True, eq=False)
class Lindbladian:
    superop: Superoperator
    eps: float
    phi: Superoperator
    model: MeasurementModel
    projector: BlockProjector

    @property
    def perp_block(self) -> Superoperator:
        """L_eps restricted to the off-diagonal block: P_perp L P_perp."""
        pr = self.projector
        return pr.P_perp @ self.superop @ pr.P_perp


def build_lindblad(m: MeasurementModel) -> Lindbladian:
    d = m.dim
    phi = build_phi(m)
    gen = -1j * m.epsilon * adjoint_map(m.hamiltonian) + phi - Superoperator.identity(d)
    return Lindbladian(superop=gen, eps=m.epsilon, phi=phi, model=m, projector=BlockProjector(d))


def semigroup(l: Lindbladian, t: float) -> Superoperator:
    """exp(t L_eps)."""
    if not t >= 0:
        raise ValueError(f"semigroup time must be >= 0, got {t}")
    return mat_exp(l.superop, t)


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Limiting generator, ``q[source, dest]`` indexed by positions in ``spectrum``."""

    q: np.ndarray
    spectrum: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "spectrum", np.asarray(self.spectrum, dtype=float))

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    def check(self) -> None:
        """Raise AssertionError unless q is a valid symmetric generator."""
        off = ~np.eye(self.dim, dtype=bool)
        assert np.all(self.q[off] >= -TOL["rate_nonneg"]), "negative off-diagonal rate"
        assert np.all(np.abs(self.q.sum(axis=0)) <= TOL["rate_rowsum"]), "column sums do not vanish"
        assert np.all(np.abs(self.q.sum(axis=1)) <= TOL["rate_rowsum"]), "row sums do not vanish"
        assert np.allclose(self.q, self.q.T, atol=TOL["rate_rowsum"], rtol=0), "rate matrix not symmetric"

    def as_superop(self) -> Superoperator:
        """Q acting on B(H): rho -> sum_nu Q(nu,nu) P_nu rho_nunu + sum_{nu != nu'} Q(nu,nu') P_nu' rho_nunu."""
        d = self.dim
        idx = diagonal_indices(d)
        mat = np.zeros((d * d, d * d), dtype=complex)
        # output population nu' collects q[nu, nu'] * input population nu
        mat[np.ix_(idx, idx)] = self.q.T
        return Superoperator(mat)


def build_Q(m: MeasurementModel) -> RateMatrix:
    """Closed-form limiting rates from the Hamiltonian matrix elements and probe coherences."""
    d = m.dim
    c = m.coherence().T  # c[nu', nu] = sum mu V(nu') conj(V(nu))
    habs2 = np.abs(m.hamiltonian) ** 2
    q = np.zeros((d, d))
    for a in range(d):
        for b in range(d):
            if a == b:
                continue
            denom = c[a, b] - 1.0
            if abs(denom) < 1e-14:
                raise NotIdentifiable(f"levels {a} and {b}: probe coherence equals 1, rate undefined")
            q[a, b] = 2.0 * (-habs2[a, b] / denom).real
    for nu in range(d):
        acc = 0.0
        for beta in range(d):
            if beta != nu:
                acc += (habs2[beta, nu] / (c[beta, nu] - 1.0)).real
        q[nu, nu] = 2.0 * acc
    return RateMatrix(q=q, spectrum=m.spectrum)


def _restricted_inverse(op: Superoperator, idx: np.ndarray) -> Superoperator:
    """Inverse of ``op`` on the coordinate subspace ``idx``, zero elsewhere."""
    n = op.matrix.shape[0]
    block = op.matrix[np.ix_(idx, idx)]
    inv = np.zeros((n, n), dtype=complex)
    inv[np.ix_(idx, idx)] = np.linalg.inv(block)
    return Superoperator(inv)


def coupling_condition(m: MeasurementModel) -> tuple[bool, float, float]:
    g = gap(m).g
    bound = 4.0 * m.epsilon * m.h_norm
    return g > bound, g, bound


def build_Q_eps(m: MeasurementModel) -> Superoperator:
    """Finite-eps generator Q_eps = -eps^-2 P L P_perp (L_perp)^-1 P_perp L P on populations."""
    ok, g, bound = coupling_condition(m)
    if m.epsilon <= 0:
        raise PreconditionError("Q_eps needs epsilon > 0")
    if not ok:
        raise PreconditionError(f"need g > 4 eps ||H||, got g = {g:.6g} <= {bound:.6g}")
    lind = build_lindblad(m)
    pr = lind.projector
    off_idx = np.setdiff1d(np.arange(m.dim**2), diagonal_indices(m.dim))
    inv_perp = _restricted_inverse(lind.superop, off_idx)
    q = pr.P @ lind.superop @ pr.P_perp @ inv_perp @ pr.P_perp @ lind.superop @ pr.P
    return (-1.0 / m.epsilon**2) * q


def dissipativity(s: Superoperator, x: np.ndarray) -> float:
    """2 Re <s X, X> (non-positive for dissipative s)."""
    return 2.0 * hs_inner(s(x), x).real


# -- numeric checks of the averaged-evolution estimates ----------------------------

def _record(ineq_id: str, params: dict, lhs: float, rhs: float) -> dict:
    slack = rhs - lhs
    return {"inequality-id": ineq_id, "parameters": params, "lhs": float(lhs), "rhs": float(rhs),
            "slack": float(slack), "pass": bool(slack >= 0)}


def check_averaging_bounds(m: MeasurementModel, t_grid=(1.0, 10.0, 100.0, 1000.0),
                           s_grid=tuple(np.round(np.arange(1, 11) * 0.1, 10))) -> list[dict]:
    """Evaluate both sides of the decoherence and long-time comparison estimates.

    Returns JSON-ready records ``{inequality-id, parameters, lhs, rhs, slack, pass}``.
    The long-time comparison is skipped for eps = 0.
    """
    ok, g, bound = coupling_condition(m)
    if not ok and m.epsilon > 0:
        raise PreconditionError(f"need g > 4 eps ||H||, got g = {g:.6g} <= {bound:.6g}")
    eps, hn = m.epsilon, m.h_norm
    lind = build_lindblad(m)
    pr = lind.projector
    records = []
    for t in t_grid:
        e = semigroup(lind, t)
        rhs = math.exp(-t * g) + 2 * eps * hn / g
        records.append(_record("decoherence-right", {"t": t, "eps": eps},
                               superop_norm_2op(e @ pr.P_perp), rhs))
        records.append(_record("decoherence-left", {"t": t, "eps": eps},
                               superop_norm_2op(pr.P_perp @ e), rhs))
    if eps > 0:
        qsup = build_Q(m).as_superop()
        for s in s_grid:
            lhs = superop_norm_2op(pr.P @ (semigroup(lind, s / eps**2) - mat_exp(qsup, s)) @ pr.P)
            rhs = 16 * eps**2 * hn**2 / g**2 + 48 * s * eps * hn**3 / g**2
            records.append(_record("population-comparison", {"s": float(s), "eps": eps}, lhs, rhs))
    return records


def random_substochastic_cp(d: int, rng: np.random.Generator, n_kraus: int | None = None) -> tuple[Superoperator, list]:
    """Random CP map K(X) = sum G X G^* with K(1) <= 1 and K^*(1) <= 1.

    Gaussian Kraus operators are rescaled by the larger of ||sum G G^*|| and ||sum G^* G||,
    then by a uniform factor in (0, 1].
    """
    n_kraus = n_kraus or int(rng.integers(1, d * d + 1))
    ops = [random_matrix(d, rng) for _ in range(n_kraus)]
    a = sum(g @ g.conj().T for g in ops)
    b = sum(g.conj().T @ g for g in ops)
    scale = max(np.linalg.norm(a, 2), np.linalg.norm(b, 2)) / (1.0 - rng.random() * 0.999)
    ops = [g / math.sqrt(scale) for g in ops]
    total = sum(Superoperator.sandwich(g, g.conj().T).matrix for g in ops)
    return Superoperator(total), ops


def cp_norms(k: Superoperator, restarts: int = 4, seed: int = 0, maxiter: int | None = None) -> dict:
    """Three induced norms of a superoperator (1-op and inf-op by optimisation).

    ``*-closed`` entries are ||K(1)|| and ||K^*(1)||, exact for positive maps;
    the searched values must never exceed them.
    """
    d = k.dim
    eye = np.eye(d, dtype=complex)
    return {"1op": superop_norm_1op(k, restarts=restarts, seed=seed, maxiter=maxiter),
            "2op": superop_norm_2op(k),
            "infop": superop_norm_inf_op(k, restarts=restarts, seed=seed, maxiter=maxiter),
            "infop-closed": op_norm(k(eye)),
            "1op-closed": op_norm(k.adjoint()(eye))}


def check_conjugation_bounds(h: np.ndarray, eps: float) -> list[dict]:
    """Unitary-conjugation estimates for exp(i eps ad_H)."""
    h = np.asarray(h, dtype=complex)
    d = h.shape[0]
    hn = float(np.linalg.norm(h, 2))
    u = mat_exp(adjoint_map(h), 1j * eps)
    pr = BlockProjector(d)
    one = Superoperator.identity(d)
    n_u = superop_norm_2op(u)
    return [
        {"inequality-id": "isometry", "parameters": {"eps": eps}, "lhs": n_u, "rhs": 1.0,
         "slack": 1e-9 - abs(n_u - 1.0), "pass": abs(n_u - 1.0) <= 1e-9},
        _record("first-order", {"eps": eps}, superop_norm_2op(u - one), 2 * eps * hn),
        _record("second-order-diagonal", {"eps": eps}, superop_norm_2op(pr.P @ (u - one) @ pr.P),
                4 * eps**2 * hn**2),
    ]
