"""Small dense complex linear algebra on B(H) and on superoperators over B(H).

Matrices on B(H) are plain complex ``numpy`` arrays of shape ``(d, d)``.
Superoperators are d^2 x d^2 matrices acting on *column-major* vectorised
matrices, i.e. ``vec(X) = X.reshape(-1, order="F")``.  With that convention
``vec(A X B) = (B^T kron A) vec(X)``, and the matrix unit ``|i><j|`` sits at
flat index ``i + j*d``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

# Single source for numerical tolerances used across the package and tests.
TOL = {
    "hermitian": 1e-12,
    "trace": 1e-10,
    "psd": 1e-10,
    "posterior_psd": 1e-8,
    "identity": 1e-12,
    "semigroup": 1e-8,
    "expm_rel": 1e-10,
    "conjugation": 1e-9,
    "normalisation": 1e-10,
    "outcome_sum": 1e-8,
    "dissipative": 1e-10,
    "contraction": 1e-9,
    "rate_nonneg": 1e-12,
    "rate_rowsum": 1e-10,
    "stochastic": 1e-10,
    "chapman_kolmogorov": 1e-9,
}


class DimensionError(ValueError):
    pass


def vec(x: np.ndarray) -> np.ndarray:
    """Column-major vectorisation."""
    return np.asarray(x).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    if d is None:
        d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise DimensionError(f"cannot reshape vector of length {v.size} into a square matrix")
    return v.reshape((d, d), order="F")


def is_hermitian(a: np.ndarray, tol: float = TOL["hermitian"]) -> bool:
    a = np.asarray(a)
    return a.ndim == 2 and a.shape[0] == a.shape[1] and bool(np.all(np.abs(a - a.conj().T) <= tol))


def is_density_matrix(rho: np.ndarray, tol: float = TOL["trace"], psd_tol: float = TOL["psd"]) -> bool:
    rho = np.asarray(rho)
    if not is_hermitian(rho, max(tol, TOL["hermitian"])):
        return False
    if abs(np.trace(rho) - 1.0) > tol:
        return False
    return min_eigenvalue(rho) >= -psd_tol


def min_eigenvalue(a: np.ndarray) -> float:
    """Smallest eigenvalue of a Hermitian matrix (via the Jacobi solver)."""
    return float(jacobi_eigh(a)[0][0])


def jacobi_eigh(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi rotations.

    Returns ``(w, v)`` with eigenvalues ascending and ``a @ v = v @ diag(w)``.
    """
    a = np.array(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("jacobi_eigh needs a square matrix")
    if not is_hermitian(a, 1e-9 * max(1.0, np.abs(a).max())):
        raise ValueError("jacobi_eigh needs a Hermitian matrix")
    a = 0.5 * (a + a.conj().T)
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = max(np.linalg.norm(a), 1e-300)
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a[offdiag])
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                r = abs(apq)
                if r <= 1e-300:
                    continue
                phase = apq / r
                app, aqq = a[p, p].real, a[q, q].real
                theta = (aqq - app) / (2.0 * r)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # unitary acting on the (p, q) plane; zeroes a[p, q]
                g_pp, g_pq = c, s
                g_qp, g_qq = -s * np.conj(phase), c * np.conj(phase)
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = col_p * g_pp + col_q * g_qp
                a[:, q] = col_p * g_pq + col_q * g_qq
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = np.conj(g_pp) * row_p + np.conj(g_qp) * row_q
                a[q, :] = np.conj(g_pq) * row_p + np.conj(g_qq) * row_q
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = vp * g_pp + vq * g_qp
                v[:, q] = vp * g_pq + vq * g_qq
    w = np.diag(a).real
    order = np.argsort(w)
    return w[order], v[:, order]


def hs_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Hilbert-Schmidt inner product tr(a* b)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def norms(a: np.ndarray) -> tuple[float, float, float]:
    """(operator norm, Hilbert-Schmidt norm, trace norm) of a matrix."""
    sv = np.linalg.svd(np.asarray(a, dtype=complex), compute_uv=False)
    return float(sv[0]), float(np.sqrt(np.sum(sv**2))), float(np.sum(sv))


def op_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a), 2))


@dataclass(frozen=True, eq=False)
class Superoperator:
    """Linear map on B(H) stored as a d^2 x d^2 matrix in column-major vec form."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        n = m.shape[0]
        d = int(round(np.sqrt(n)))
        if m.ndim != 2 or m.shape[1] != n or d * d != n:
            raise DimensionError(f"superoperator matrix must be d^2 x d^2, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))

    @classmethod
    def identity(cls, d: int) -> "Superoperator":
        return cls(np.eye(d * d, dtype=complex))

    @classmethod
    def zero(cls, d: int) -> "Superoperator":
        return cls(np.zeros((d * d, d * d), dtype=complex))

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], d: int) -> "Superoperator":
        cols = []
        for k in range(d * d):
            e = np.zeros(d * d, dtype=complex)
            e[k] = 1.0
            cols.append(vec(f(unvec(e, d))))
        return cls(np.column_stack(cols))

    @classmethod
    def sandwich(cls, left: np.ndarray, right: np.ndarray) -> "Superoperator":
        """X -> left @ X @ right."""
        return cls(np.kron(np.asarray(right).T, np.asarray(left)))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.dim, self.dim):
            raise DimensionError(f"expected a {self.dim}x{self.dim} matrix, got {x.shape}")
        return unvec(self.matrix @ vec(x), self.dim)

    def __matmul__(self, other: "Superoperator") -> "Superoperator":
        if not isinstance(other, Superoperator):
            return NotImplemented
        self._check(other)
        return Superoperator(self.matrix @ other.matrix)

    def __add__(self, other: "Superoperator") -> "Superoperator":
        self._check(other)
        return Superoperator(self.matrix + other.matrix)

    def __sub__(self, other: "Superoperator") -> "Superoperator":
        self._check(other)
        return Superoperator(self.matrix - other.matrix)

    def __neg__(self) -> "Superoperator":
        return Superoperator(-self.matrix)

    def __mul__(self, c) -> "Superoperator":
        return Superoperator(complex(c) * self.matrix)

    __rmul__ = __mul__

    def adjoint(self) -> "Superoperator":
        """Adjoint with respect to the Hilbert-Schmidt inner product."""
        return Superoperator(self.matrix.conj().T)

    def _check(self, other: "Superoperator") -> None:
        if self.matrix.shape != other.matrix.shape:
            raise DimensionError("superoperator dimension mismatch")


def superop_norm_2op(s: Superoperator) -> float:
    """Norm induced by the Hilbert-Schmidt norm; equals the spectral norm of ``s.matrix``."""
    return float(np.linalg.norm(s.matrix, 2))


def _random_unitary_params(d: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(size=d * d)


def _unitary_from_params(p: np.ndarray, d: int) -> np.ndarray:
    a = np.zeros((d, d), dtype=complex)
    iu = np.triu_indices(d, 1)
    n_off = len(iu[0])
    a[np.diag_indices(d)] = p[:d]
    a[iu] = p[d : d + n_off] + 1j * p[d + n_off : d + 2 * n_off]
    a = a + np.triu(a, 1).conj().T
    return scipy.linalg.expm(1j * a)


def superop_norm_inf_op(s: Superoperator, restarts: int = 8, seed: int = 0, maxiter: int | None = None) -> float:
    """Norm induced by the operator norm.

    The sup over the operator-norm unit ball is attained on unitaries, so the
    value is maximised over U = exp(iA) with random restarts (identity
    included).  In general this is a lower bound; for positive maps the
    identity candidate is already optimal (Russo-Dye).
    """
    d = s.dim
    rng = np.random.default_rng(seed)

    def neg(p):
        return -op_norm(s(_unitary_from_params(p, d)))

    best = op_norm(s(np.eye(d, dtype=complex)))
    for _ in range(restarts):
        res = minimize(neg, _random_unitary_params(d, rng), method="Nelder-Mead",
                       options={"maxiter": maxiter or 400 * d * d, "xatol": 1e-8, "fatol": 1e-12})
        best = max(best, -res.fun)
    return float(best)


def superop_norm_1op(s: Superoperator, restarts: int = 8, seed: int = 0, maxiter: int | None = None) -> float:
    """Norm induced by the trace norm, via duality with the adjoint's operator-norm norm."""
    return superop_norm_inf_op(s.adjoint(), restarts=restarts, seed=seed, maxiter=maxiter)


def adjoint_map(h: np.ndarray) -> Superoperator:
    """ad_h : X -> hX - Xh for Hermitian h."""
    h = np.asarray(h, dtype=complex)
    if not is_hermitian(h):
        raise ValueError("adjoint_map requires a Hermitian matrix")
    d = h.shape[0]
    eye = np.eye(d, dtype=complex)
    return Superoperator(np.kron(eye, h) - np.kron(h.T, eye))


def conjugation(u: np.ndarray) -> Superoperator:
    """X -> u X u*."""
    u = np.asarray(u, dtype=complex)
    return Superoperator.sandwich(u, u.conj().T)


def mat_exp(s, t: complex = 1.0):
    """exp(t*s) for a Superoperator or a square ndarray (scaling and squaring, Pade kernel).

    ``t`` may be complex (e.g. ``-1j * eps * tau`` for unitary drift).
    """
    if not np.isfinite(t):
        raise ValueError(f"mat_exp needs a finite time, got {t}")
    if isinstance(s, Superoperator):
        return Superoperator(scipy.linalg.expm(t * s.matrix))
    return scipy.linalg.expm(t * np.asarray(s))


def random_hermitian(d: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * 0.5 * (a + a.conj().T)


def random_density_matrix(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_matrix(d: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
