"""Exact finite-dimensional density-operator algebra.

Construction, tensor composition, partial trace, entropies, trace distance,
partial-transpose screening and the entropy-continuity bound.  All values are
immutable after construction and every operation is a pure function, so
operators can be shared freely between workers.

Conventions: all logarithms are base 2 (rates in bits per symbol) and the
trace norm is unnormalized, sum of singular values, so trace distance ranges
over [0, 2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .errors import BadCut, DimensionCap, DimMismatch, NotHermitian, NotPSD, NotUnitTrace

Labels = tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class DensityOperator:
    """Hermitian, PSD, unit-trace matrix on labelled finite registers."""

    matrix: np.ndarray
    labels: Labels

    def __post_init__(self):
        self.matrix.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def register_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.labels)

    @property
    def register_dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.labels)

    def dim_of(self, names: Iterable[str]) -> int:
        table = dict(self.labels)
        out = 1
        for name in names:
            out *= table[name]
        return out


@dataclass(frozen=True)
class RegisterCut:
    """Bipartition of an operator's registers into an A side and a B side."""

    a_side: tuple[str, ...]
    b_side: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "a_side", tuple(self.a_side))
        object.__setattr__(self, "b_side", tuple(self.b_side))


@dataclass(frozen=True)
class PptResult:
    passed: bool
    min_eigenvalue: float


def _normalize_labels(labels) -> Labels:
    out = []
    for entry in labels:
        name, d = entry
        d = int(d)
        if d <= 0:
            raise ValueError(f"register {name!r} has nonpositive dimension {d}")
        out.append((str(name), d))
    names = [n for n, _ in out]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate register names in {names}")
    return tuple(out)


def _wrap(matrix: np.ndarray, labels: Labels) -> DensityOperator:
    # trusted construction path for operators produced by valid operations
    return DensityOperator(np.ascontiguousarray(matrix, dtype=complex), labels)


def validate_density(
    matrix,
    labels,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> DensityOperator:
    """Check the three state invariants and return the operator.

    Eigenvalues in [-tau_psd, 0) are clipped to zero and the state is
    renormalized to unit trace; larger violations raise.  Raises
    NotHermitian / NotUnitTrace / NotPSD naming the offending magnitude.
    """
    mat = np.asarray(matrix, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    labels = _normalize_labels(labels)
    dim = 1
    for _, d in labels:
        dim *= d
    if dim != mat.shape[0]:
        raise ValueError(f"label dims multiply to {dim}, matrix dim is {mat.shape[0]}")

    herm_gap = float(np.max(np.abs(mat - mat.conj().T))) if mat.size else 0.0
    if herm_gap > tolerances.tau_herm:
        raise NotHermitian(
            f"max |M - M^dag| = {herm_gap:.3e} exceeds tau_herm = {tolerances.tau_herm:.1e}"
        )
    tr = complex(np.trace(mat))
    if abs(tr - 1.0) > tolerances.tau_tr:
        raise NotUnitTrace(
            f"|tr M - 1| = {abs(tr - 1.0):.3e} exceeds tau_tr = {tolerances.tau_tr:.1e} (trace {tr.real:g})"
        )

    sym = 0.5 * (mat + mat.conj().T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    min_eig = float(eigvals[0])
    if min_eig < -tolerances.tau_psd:
        raise NotPSD(
            f"min eigenvalue {min_eig:.6g} below -tau_psd = -{tolerances.tau_psd:.1e}"
        )
    if min_eig < 0.0:
        clipped = np.clip(eigvals, 0.0, None)
        sym = (eigvecs * clipped) @ eigvecs.conj().T
        sym = sym / np.trace(sym).real
        sym = 0.5 * (sym + sym.conj().T)
    return _wrap(sym, labels)


def tensor(a: DensityOperator, b: DensityOperator, dim_cap: int | None = None) -> DensityOperator:
    """Kronecker product with concatenated register labels."""
    if dim_cap is not None and a.dim * b.dim > dim_cap:
        raise DimensionCap(f"tensor dim {a.dim * b.dim} exceeds cap {dim_cap}")
    labels = _normalize_labels(a.labels + b.labels)
    return _wrap(np.kron(a.matrix, b.matrix), labels)


def _keep_names(rho: DensityOperator, keep) -> tuple[str, ...]:
    if isinstance(keep, RegisterCut):
        _check_cut(rho, keep)
        return keep.a_side
    names = tuple(keep)
    known = set(rho.register_names)
    for name in names:
        if name not in known:
            raise BadCut(f"unknown register {name!r}; operator has {rho.register_names}")
    if len(set(names)) != len(names):
        raise BadCut(f"repeated register in keep list {names}")
    if not names:
        raise BadCut("must keep at least one register")
    return names


def _check_cut(rho: DensityOperator, cut: RegisterCut) -> None:
    a, b = set(cut.a_side), set(cut.b_side)
    if a & b:
        raise BadCut(f"cut sides overlap: {sorted(a & b)}")
    if a | b != set(rho.register_names) or len(cut.a_side) + len(cut.b_side) != len(rho.labels):
        raise BadCut(
            f"cut {cut.a_side} | {cut.b_side} does not partition registers {rho.register_names}"
        )
    if not cut.a_side or not cut.b_side:
        raise BadCut("both sides of a cut must be nonempty")


def partial_trace(rho: DensityOperator, keep) -> DensityOperator:
    """Reduced state on the kept registers (a RegisterCut keeps its A side).

    Kept registers stay in their original order.
    """
    keep_set = set(_keep_names(rho, keep))
    dims = list(rho.register_dims)
    n = len(dims)
    tensor_view = rho.matrix.reshape(dims + dims)
    remaining = list(range(n))
    for idx in reversed(range(n)):
        if rho.labels[idx][0] not in keep_set:
            pos = remaining.index(idx)
            tensor_view = np.trace(tensor_view, axis1=pos, axis2=pos + len(remaining))
            remaining.pop(pos)
    kept_labels = tuple(rho.labels[i] for i in remaining)
    d = 1
    for _, dd in kept_labels:
        d *= dd
    return _wrap(tensor_view.reshape(d, d), kept_labels)


def _eigvals_state(matrix: np.ndarray) -> np.ndarray:
    sym = 0.5 * (matrix + matrix.conj().T)
    return np.linalg.eigvalsh(sym)


def entropy_of_spectrum(eigvals: np.ndarray, tau_psd: float) -> float:
    lam = np.asarray(eigvals, dtype=float)
    lam = np.where((lam < 0.0) & (lam >= -tau_psd), 0.0, lam)
    pos = lam[lam > 0.0]
    return float(-np.sum(pos * np.log2(pos)))


def von_neumann_entropy(rho: DensityOperator, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """-sum lam log2 lam over the spectrum, with 0 log 0 = 0.  In bits."""
    return entropy_of_spectrum(_eigvals_state(rho.matrix), tolerances.tau_psd)


def conditional_entropy(
    rho: DensityOperator, cut: RegisterCut, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> float:
    """H(A|B) = H(AB) - H(B) for the given bipartition.  May be negative."""
    _check_cut(rho, cut)
    h_ab = von_neumann_entropy(rho, tolerances)
    h_b = von_neumann_entropy(partial_trace(rho, cut.b_side), tolerances)
    return h_ab - h_b


def mutual_information(
    rho: DensityOperator, cut: RegisterCut, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> float:
    """I(A;B) = H(A) + H(B) - H(AB), clamped to >= 0 within tau_num."""
    _check_cut(rho, cut)
    h_a = von_neumann_entropy(partial_trace(rho, cut.a_side), tolerances)
    h_b = von_neumann_entropy(partial_trace(rho, cut.b_side), tolerances)
    h_ab = von_neumann_entropy(rho, tolerances)
    value = h_a + h_b - h_ab
    if value < -tolerances.tau_num:
        raise ValueError(f"mutual information {value:.3e} below -tau_num; state invalid?")
    return max(value, 0.0)


def _is_diagonal(matrix: np.ndarray) -> bool:
    return np.count_nonzero(matrix - np.diag(np.diagonal(matrix))) == 0


def trace_distance_matrices(a: np.ndarray, b: np.ndarray) -> float:
    """Unnormalized trace distance of two Hermitian matrices (range [0, 2])."""
    if a.shape != b.shape:
        raise DimMismatch(f"shapes {a.shape} and {b.shape} differ")
    diff = a - b
    if _is_diagonal(diff):
        return float(np.sum(np.abs(np.diagonal(diff).real)))
    diff = 0.5 * (diff + diff.conj().T)
    return float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


def trace_distance(rho: DensityOperator, sigma: DensityOperator) -> float:
    """Sum of absolute eigenvalues of rho - sigma."""
    if rho.dim != sigma.dim:
        raise DimMismatch(f"dims {rho.dim} and {sigma.dim} differ")
    return trace_distance_matrices(rho.matrix, sigma.matrix)


def ppt_check(
    rho: DensityOperator, cut: RegisterCut, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> PptResult:
    """Partial transpose on the cut's B side; FAIL certifies entanglement."""
    _check_cut(rho, cut)
    names = rho.register_names
    dims = rho.register_dims
    n = len(dims)
    b_idx = [names.index(name) for name in cut.b_side]
    view = rho.matrix.reshape(dims + dims)
    axes = list(range(2 * n))
    for idx in b_idx:
        axes[idx], axes[idx + n] = axes[idx + n], axes[idx]
    pt = view.transpose(axes).reshape(rho.dim, rho.dim)
    min_eig = float(np.linalg.eigvalsh(0.5 * (pt + pt.conj().T))[0])
    return PptResult(passed=min_eig >= -tolerances.tau_psd, min_eigenvalue=min_eig)


def binary_entropy(p: float) -> float:
    """h2(p) in bits, with 0 log 0 = 0."""
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p))


def afw_continuity_bound(eps: float, dim_a: int) -> float:
    """Entropy-continuity bound for unnormalized trace distance eps in [0, 2].

    Returns eps*log2(dim_a) + (1 + eps/2)*h2((eps/2) / (1 + eps/2)).  The
    constant choice is pinned here and used only as a one-sided test oracle
    on |H(rho) - H(sigma)|.
    """
    if eps < 0.0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    if eps == 0.0:
        return 0.0
    t = eps / 2.0
    return eps * math.log2(dim_a) + (1.0 + t) * binary_entropy(t / (1.0 + t))


# --- small constructors used throughout tests and the CLI -----------------


def basis_ket(index: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def pure_state(vector, name: str = "B") -> DensityOperator:
    """Rank-one projector |psi><psi| on a single register."""
    v = np.asarray(vector, dtype=complex).reshape(-1)
    v = v / np.linalg.norm(v)
    return _wrap(np.outer(v, v.conj()), ((name, v.size),))


def basis_projector(index: int, dim: int, name: str = "B") -> DensityOperator:
    return pure_state(basis_ket(index, dim), name)


def maximally_mixed(dim: int, name: str = "B") -> DensityOperator:
    return _wrap(np.eye(dim, dtype=complex) / dim, ((name, dim),))


def bell_phi_plus(names: Sequence[str] = ("A", "B")) -> DensityOperator:
    v = (basis_ket(0, 4) + basis_ket(3, 4)) / math.sqrt(2.0)
    return _wrap(np.outer(v, v.conj()), ((names[0], 2), (names[1], 2)))


def random_density(rng: np.random.Generator, dim: int, name: str = "B") -> DensityOperator:
    """Ginibre-induced random full-rank state, for property tests."""
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    mat = g @ g.conj().T
    mat = mat / np.trace(mat).real
    return _wrap(0.5 * (mat + mat.conj().T), ((name, dim),))
