"""Measurement model: spectrum of the observable, probe outcomes, diagonal Kraus table.

A model is fixed by

* ``spectrum`` -- distinct real eigenvalues nu of the measured observable,
* ``labels`` / ``weights`` -- finite outcome set with a priori probabilities mu(xi),
* ``kraus`` -- amplitudes V_xi(nu), array of shape ``(n_outcomes, d)``,
* ``hamiltonian`` -- H written in the eigenbasis of the observable,
* ``epsilon`` -- strength of the perturbation eps*H.

Columns of ``kraus`` follow the order of ``spectrum``; the eigenbasis ordering is
the matrix index order everywhere in the package.
"""

from __future__ import annotations

import dataclasses
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .linalg import TOL, is_hermitian, random_hermitian


class ModelError(ValueError):
    code = "E_MODEL"

    def __init__(self, message: str):
        super().__init__(f"[{self.code}] {message}")


class DegenerateSpectrum(ModelError):
    code = "E_DEGENERATE"


class NormalisationError(ModelError):
    code = "E_NORMALISATION"


class NotIdentifiable(ModelError):
    code = "E_IDENTIFIABILITY"


class GapError(ModelError):
    code = "E_GAP"


class MalformedModel(ModelError):
    code = "E_MALFORMED"


class ModelFileError(ModelError):
    code = "E_FILE"


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    spectrum: np.ndarray
    labels: tuple
    weights: np.ndarray
    kraus: np.ndarray
    hamiltonian: np.ndarray
    epsilon: float

    def __post_init__(self):
        spectrum = np.asarray(self.spectrum, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        kraus = np.atleast_2d(np.asarray(self.kraus, dtype=complex))
        h = np.asarray(self.hamiltonian, dtype=complex)
        labels = tuple(str(x) for x in self.labels)
        d = spectrum.size
        if d < 1:
            raise MalformedModel("spectrum is empty")
        if len(labels) != weights.size or len(set(labels)) != len(labels):
            raise MalformedModel("outcome labels must be distinct and match the weights")
        if kraus.shape != (weights.size, d):
            raise MalformedModel(f"kraus table must have shape (n_outcomes, d) = {(weights.size, d)}, got {kraus.shape}")
        if h.shape != (d, d):
            raise MalformedModel(f"hamiltonian must be {d}x{d}, got {h.shape}")
        if not is_hermitian(h):
            raise MalformedModel("hamiltonian is not Hermitian")
        if not (np.all(np.isfinite(weights)) and np.all(weights > 0)):
            raise MalformedModel("outcome weights must be strictly positive")
        if abs(weights.sum() - 1.0) > TOL["normalisation"]:
            raise MalformedModel(f"outcome weights must sum to 1, got {weights.sum()!r}")
        eps = float(self.epsilon)
        if not (math.isfinite(eps) and eps >= 0):
            raise MalformedModel(f"epsilon must be finite and >= 0, got {self.epsilon!r}")
        for arr in (spectrum, weights, kraus, h):
            arr.setflags(write=False)
        object.__setattr__(self, "spectrum", spectrum)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "kraus", kraus)
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "epsilon", eps)

    @property
    def dim(self) -> int:
        return self.spectrum.size

    @property
    def n_outcomes(self) -> int:
        return self.weights.size

    @property
    def f(self) -> np.ndarray:
        """Likelihood table f(xi|nu) = |V_xi(nu)|^2, shape (n_outcomes, d)."""
        return np.abs(self.kraus) ** 2

    @property
    def h_norm(self) -> float:
        return float(np.linalg.norm(self.hamiltonian, 2))

    def replace(self, **changes) -> "MeasurementModel":
        return dataclasses.replace(self, **changes)

    def outcome_index(self, xi) -> int:
        try:
            return self.labels.index(str(xi))
        except ValueError:
            raise KeyError(f"unknown outcome label {xi!r}") from None

    def level_index(self, nu) -> int:
        hits = np.flatnonzero(self.spectrum == float(nu))
        if hits.size == 0:
            hits = np.flatnonzero(np.isclose(self.spectrum, float(nu), rtol=0, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"{nu!r} is not an eigenvalue of the model")
        return int(hits[0])

    def kraus_operator(self, xi) -> np.ndarray:
        """V_xi = sum_nu V_xi(nu) P_nu as a diagonal matrix."""
        return np.diag(self.kraus[self.outcome_index(xi)])

    def coherence(self) -> np.ndarray:
        """c[i, j] = sum_xi mu(xi) conj(V_xi(nu_i)) V_xi(nu_j)."""
        return (self.weights[:, None] * self.kraus.conj()).T @ self.kraus

    def validate(self) -> "MeasurementModel":
        """Check the model invariants; raise a coded ModelError on the first violation."""
        diffs = np.abs(self.spectrum[:, None] - self.spectrum[None, :])
        np.fill_diagonal(diffs, np.inf)
        if np.any(diffs == 0):
            raise DegenerateSpectrum("eigenvalues of the observable must be pairwise distinct")
        norm = self.weights @ self.f
        bad = np.flatnonzero(np.abs(norm - 1.0) > TOL["normalisation"])
        if bad.size:
            raise NormalisationError(
                f"sum_xi mu(xi)|V_xi(nu)|^2 = {norm[bad[0]]!r} != 1 for nu = {self.spectrum[bad[0]]!r}")
        f = self.f
        for i in range(self.dim):
            for j in range(i + 1, self.dim):
                if not np.any(np.abs(f[:, i] - f[:, j]) > 1e-9):
                    raise NotIdentifiable(
                        f"eigenvalues {self.spectrum[i]!r} and {self.spectrum[j]!r} give identical outcome laws")
        if self.dim >= 2 and not gap(self).g > 0:
            raise GapError("spectral gap g is not positive")
        return self


def likelihood(m: MeasurementModel, xi, nu) -> float:
    """f(xi|nu) = |V_xi(nu)|^2."""
    return float(abs(m.kraus[m.outcome_index(xi), m.level_index(nu)]) ** 2)


def mu_nu(m: MeasurementModel, nu) -> dict:
    """Outcome law under eigenvalue nu: xi -> mu(xi) f(xi|nu)."""
    col = m.weights * m.f[:, m.level_index(nu)]
    return {label: float(p) for label, p in zip(m.labels, col)}


def mu_nu_table(m: MeasurementModel) -> np.ndarray:
    """All outcome laws, shape (d, n_outcomes); row nu sums to 1 for valid models."""
    return (m.weights[:, None] * m.f).T


class GapInfo(NamedTuple):
    g: float
    g_sp: float


def gap(m: MeasurementModel) -> GapInfo:
    """Decoherence gaps of the off-diagonal blocks.

    ``g = 1 - max_{nu != nu'} sum_xi mu(xi) |V_xi(nu) V_xi(nu')|`` and
    ``g_sp = min_{nu != nu'} Re(1 - sum_xi mu(xi) conj(V_xi(nu)) V_xi(nu'))``.
    """
    if m.dim < 2:
        raise ModelError("gap is undefined for fewer than two eigenvalues")
    absk = np.abs(m.kraus)
    overlap = (m.weights[:, None] * absk).T @ absk
    c = m.coherence()
    off = ~np.eye(m.dim, dtype=bool)
    g = 1.0 - float(overlap[off].max())
    g_sp = float((1.0 - c[off].real).min())
    if g_sp < g - 1e-12:
        raise AssertionError(f"g_sp = {g_sp} < g = {g}")
    return GapInfo(g, g_sp)


def chernoff_objective(m: MeasurementModel, a: float, i: int, j: int) -> float:
    """-log sum_xi mu(xi) f(xi|nu_i)^a f(xi|nu_j)^(1-a)."""
    f = m.f
    with np.errstate(divide="ignore"):
        s = float(np.sum(m.weights * np.power(f[:, i], a) * np.power(f[:, j], 1.0 - a)))
    return -math.log(s) if s > 0 else math.inf


def _min_objective(m: MeasurementModel, a: float) -> float:
    return min(chernoff_objective(m, a, i, j)
               for i in range(m.dim) for j in range(m.dim) if i != j)


def rate_I(m: MeasurementModel, grid_step: float = 1e-3, tol: float = 1e-7) -> tuple[float, float]:
    """Misidentification exponent I and the maximising exponent a*.

    Maximises the concave function a -> min_{nu != nu'} (-log sum mu f(nu)^a f(nu')^(1-a))
    on [0, 1]: dense pre-scan, then bounded scalar refinement around the best grid point.
    """
    if m.dim < 2:
        raise ModelError("rate I is undefined for fewer than two eigenvalues")
    f = m.f
    for i in range(m.dim):
        for j in range(i + 1, m.dim):
            if np.array_equal(f[:, i], f[:, j]) or not np.any(np.abs(f[:, i] - f[:, j]) > 1e-9):
                raise NotIdentifiable(f"levels {i} and {j} are not identifiable; I = 0")
    n = int(round(1.0 / grid_step))
    grid = np.linspace(0.0, 1.0, n + 1)
    vals = np.array([_min_objective(m, a) for a in grid])
    k = int(np.argmax(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, n)]
    res = minimize_scalar(lambda a: -_min_objective(m, a), bounds=(lo, hi), method="bounded",
                          options={"xatol": tol})
    a_star = float(res.x)
    best = max((vals[k], grid[k]), (_min_objective(m, a_star), a_star))
    return float(best[0]), float(best[1])


# -- reference and random models ------------------------------------------------

def qubit_bernoulli(hamiltonian=None, epsilon: float = 0.05, p: float = 0.75) -> MeasurementModel:
    """Two-level observable {0, 1}, two outcomes {+, -} with mu = (1/2, 1/2).

    V_+(0) = sqrt(2p), V_-(0) = sqrt(2(1-p)) and the mirror image for nu = 1,
    so under nu = 0 the outcome '+' has probability p.
    """
    if hamiltonian is None:
        hamiltonian = [[0.0, 0.3], [0.3, 0.0]]
    kraus = np.sqrt(np.array([[2 * p, 2 * (1 - p)], [2 * (1 - p), 2 * p]]))
    return MeasurementModel(spectrum=[0.0, 1.0], labels=("+", "-"), weights=[0.5, 0.5],
                            kraus=kraus, hamiltonian=hamiltonian, epsilon=epsilon).validate()


def random_model(d: int, rng: np.random.Generator, n_outcomes: int | None = None,
                 epsilon: float = 0.01, h_scale: float = 1.0, phases: bool = True) -> MeasurementModel:
    """Random identifiable model with normalised Kraus table and random Hermitian H."""
    n_outcomes = n_outcomes or d + 1
    while True:
        weights = rng.dirichlet(np.ones(n_outcomes) * 2.0)
        raw = rng.gamma(1.0, size=(n_outcomes, d)) + 0.05
        norm = weights @ raw
        amp = np.sqrt(raw / norm)
        if phases:
            amp = amp * np.exp(2j * np.pi * rng.random((n_outcomes, d)))
        h = random_hermitian(d, rng, scale=h_scale)
        m = MeasurementModel(spectrum=np.arange(d, dtype=float), labels=tuple(f"x{k}" for k in range(n_outcomes)),
                             weights=weights, kraus=amp, hamiltonian=h, epsilon=epsilon)
        try:
            return m.validate()
        except ModelError:
            continue


# -- model file ingestion --------------------------------------------------------

def _field_error(field: str, message: str) -> ModelFileError:
    return ModelFileError(f"field '{field}': {message}")


def _complex_matrix(value, field: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise _field_error(field, "expected a matrix of [re, im] pairs") from None
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise _field_error(field, f"expected rows of [re, im] pairs, got array of shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def parse_model(text: str, source: str = "<string>") -> MeasurementModel:
    """Parse the TOML model document (schema in README.md)."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ModelFileError(f"{source}: {exc}") from None
    for key in ("spectrum", "outcomes", "kraus", "hamiltonian", "epsilon"):
        if key not in doc:
            raise _field_error(key, "missing")
    try:
        spectrum = np.asarray(doc["spectrum"], dtype=float)
    except (TypeError, ValueError):
        raise _field_error("spectrum", "expected a list of reals") from None
    outcomes = doc["outcomes"]
    if not isinstance(outcomes, list) or not outcomes:
        raise _field_error("outcomes", "expected a non-empty array of {label, weight} tables")
    labels, weights = [], []
    for k, entry in enumerate(outcomes):
        if not isinstance(entry, dict) or "label" not in entry or "weight" not in entry:
            raise _field_error(f"outcomes[{k}]", "needs 'label' and 'weight'")
        labels.append(str(entry["label"]))
        try:
            weights.append(float(entry["weight"]))
        except (TypeError, ValueError):
            raise _field_error(f"outcomes[{k}].weight", "expected a real number") from None
    kraus = _complex_matrix(doc["kraus"], "kraus")
    ham = doc["hamiltonian"]
    if not isinstance(ham, dict) or "re" not in ham:
        raise _field_error("hamiltonian", "expected a table with 're' and optional 'im' matrices")
    try:
        h = np.asarray(ham["re"], dtype=float) + 1j * np.asarray(ham.get("im", np.zeros_like(ham["re"])), dtype=float)
    except (TypeError, ValueError):
        raise _field_error("hamiltonian", "'re'/'im' must be real matrices of equal shape") from None
    try:
        eps = float(doc["epsilon"])
    except (TypeError, ValueError):
        raise _field_error("epsilon", "expected a real number") from None
    try:
        m = MeasurementModel(spectrum=spectrum, labels=tuple(labels), weights=weights,
                             kraus=kraus, hamiltonian=h, epsilon=eps)
    except ModelError as exc:
        raise ModelFileError(f"{source}: {exc}") from None
    return m.validate()


def load_model(path) -> MeasurementModel:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelFileError(f"cannot read {path}: {exc}") from None
    return parse_model(text, source=str(path))


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_model(m: MeasurementModel) -> str:
    """Serialise a model to the TOML schema read by :func:`parse_model`."""
    out = io.StringIO()
    out.write("spectrum = [" + ", ".join(_fmt(x) for x in m.spectrum) + "]\n")
    out.write(f"epsilon = {_fmt(m.epsilon)}\n")
    out.write("# rows = outcomes, columns = eigenvalues, entries [re, im]\n")
    out.write("kraus = [\n")
    for row in m.kraus:
        out.write("  [" + ", ".join(f"[{_fmt(z.real)}, {_fmt(z.imag)}]" for z in row) + "],\n")
    out.write("]\n\n")
    for label, w in zip(m.labels, m.weights):
        out.write(f'[[outcomes]]\nlabel = "{label}"\nweight = {_fmt(w)}\n\n')
    out.write("[hamiltonian]\n")
    for part, arr in (("re", m.hamiltonian.real), ("im", m.hamiltonian.imag)):
        out.write(f"{part} = [" + ", ".join("[" + ", ".join(_fmt(x) for x in row) + "]" for row in arr) + "]\n")
    return out.getvalue()
