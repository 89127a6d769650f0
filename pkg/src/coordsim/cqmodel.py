"""Structured network states and auxiliary-variable extensions.

Targets are classical-quantum block states (a PMF over a classical register
with one conditional density operator per symbol); extensions add a classical
auxiliary register whose conditionals are tensor products by construction.
Classical registers are kept as explicit diagonal blocks so n-copy
computations elsewhere can stay block-diagonal.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances, default_caps
from .errors import DimensionCap, TopologyMismatch
from . import qstate
from .qstate import DensityOperator, Labels, RegisterCut


class Topology(enum.Enum):
    TWO_NODE = "two-node"
    NO_COMM = "no-comm"
    BROADCAST = "broadcast"


@dataclass(frozen=True)
class CqNetworkState:
    """Target state: PMF over a classical register plus quantum conditionals.

    For NO_COMM there is no classical part; ``conditionals`` holds the single
    joint operator on the quantum registers.
    """

    topology: Topology
    pmf: np.ndarray
    conditionals: np.ndarray
    quantum_labels: Labels

    def __post_init__(self):
        self.pmf.flags.writeable = False
        self.conditionals.flags.writeable = False

    @property
    def alphabet_size(self) -> int:
        return int(self.pmf.shape[0])

    @property
    def quantum_dim(self) -> int:
        d = 1
        for _, dd in self.quantum_labels:
            d *= dd
        return d


@dataclass(frozen=True)
class Extension:
    """Auxiliary decomposition: joint PMF over (X, U) plus per-u product factors.

    ``factors`` holds one stack of shape (|U|, d_r, d_r) per quantum register;
    given U = u the quantum state is the tensor product of the factors, so
    conditional independence is structural.  For NO_COMM ``joint_pmf`` is the
    plain PMF over U.
    """

    topology: Topology
    joint_pmf: np.ndarray
    factors: tuple[np.ndarray, ...]
    quantum_labels: Labels

    def __post_init__(self):
        self.joint_pmf.flags.writeable = False
        for f in self.factors:
            f.flags.writeable = False

    @property
    def u_size(self) -> int:
        return int(self.joint_pmf.shape[-1])

    @property
    def u_pmf(self) -> np.ndarray:
        if self.topology is Topology.NO_COMM:
            return self.joint_pmf
        return self.joint_pmf.sum(axis=0)


def cardinality_bound(topology: Topology, alphabet_size: int, quantum_dims) -> int:
    """Sufficient auxiliary-alphabet size; two-node is proved, others heuristic."""
    total = 1
    for d in quantum_dims:
        total *= d
    if topology is Topology.TWO_NODE:
        return alphabet_size**2 * total**2 + 1
    if topology is Topology.NO_COMM:
        return total**2 + 1
    return alphabet_size**2 * total**2 + 1


def _check_pmf(pmf, tolerances: Tolerances) -> np.ndarray:
    p = np.asarray(pmf, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"PMF must be a nonempty vector, got shape {p.shape}")
    if np.any(p < -tolerances.tau_tr):
        raise ValueError(f"PMF has negative entries: min {p.min():g}")
    if abs(p.sum() - 1.0) > tolerances.tau_tr:
        raise ValueError(f"PMF sums to {p.sum():.12g}, not 1 within tau_tr")
    return np.clip(p, 0.0, None)


def _check_conditionals(conds, labels: Labels, tolerances: Tolerances) -> np.ndarray:
    arr = np.asarray(conds, dtype=complex)
    validated = [
        qstate.validate_density(arr[i], labels, tolerances).matrix for i in range(arr.shape[0])
    ]
    return np.stack(validated)


def two_node_target(
    pmf, conditionals, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> CqNetworkState:
    p = _check_pmf(pmf, tolerances)
    arr = np.asarray(conditionals, dtype=complex)
    labels = (("B", arr.shape[-1]),)
    conds = _check_conditionals(arr, labels, tolerances)
    if conds.shape[0] != p.size:
        raise ValueError(f"{conds.shape[0]} conditionals for {p.size} symbols")
    return CqNetworkState(Topology.TWO_NODE, p, conds, labels)


def no_comm_target(
    matrix, dims, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> CqNetworkState:
    da, db, dc = dims
    labels = (("A", da), ("B", db), ("C", dc))
    op = qstate.validate_density(matrix, labels, tolerances)
    return CqNetworkState(Topology.NO_COMM, np.zeros(0), op.matrix.copy(), labels)


def broadcast_target(
    pmf, conditionals, dims, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> CqNetworkState:
    p = _check_pmf(pmf, tolerances)
    d1, d2 = dims
    labels = (("B1", d1), ("B2", d2))
    conds = _check_conditionals(np.asarray(conditionals, dtype=complex), labels, tolerances)
    if conds.shape[0] != p.size:
        raise ValueError(f"{conds.shape[0]} conditionals for {p.size} symbols")
    return CqNetworkState(Topology.BROADCAST, p, conds, labels)


def classical_two_node(joint_table, tolerances: Tolerances = DEFAULT_TOLERANCES) -> CqNetworkState:
    """Two-node target from a classical joint table p(x, y); B is diagonal."""
    table = np.asarray(joint_table, dtype=float)
    if abs(table.sum() - 1.0) > tolerances.tau_tr or np.any(table < 0):
        raise ValueError("joint table must be a distribution")
    p_x = table.sum(axis=1)
    dim_y = table.shape[1]
    conds = np.zeros((table.shape[0], dim_y, dim_y), dtype=complex)
    for x in range(table.shape[0]):
        row = table[x] / p_x[x] if p_x[x] > 0 else np.full(dim_y, 1.0 / dim_y)
        conds[x] = np.diag(row)
    return two_node_target(p_x, conds, tolerances)


def _check_extension_shapes(joint, factors, topology):
    u = joint.shape[-1]
    for stack in factors:
        if stack.shape[0] != u:
            raise ValueError(f"factor stack has {stack.shape[0]} entries for |U| = {u}")


def _warn_cardinality(topology, alphabet_size, dims, u_size):
    bound = cardinality_bound(topology, alphabet_size, dims)
    if u_size > bound:
        warnings.warn(
            f"|U| = {u_size} exceeds the sufficient cardinality bound {bound}; "
            "allowed for exploratory use",
            stacklevel=3,
        )


def two_node_extension(
    joint_pmf, thetas, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> Extension:
    joint = np.asarray(joint_pmf, dtype=float)
    _check_pmf(joint.reshape(-1), tolerances)
    arr = np.asarray(thetas, dtype=complex)
    labels = (("B", arr.shape[-1]),)
    stack = _check_conditionals(arr, labels, tolerances)
    _check_extension_shapes(joint, (stack,), Topology.TWO_NODE)
    _warn_cardinality(Topology.TWO_NODE, joint.shape[0], (arr.shape[-1],), joint.shape[1])
    return Extension(Topology.TWO_NODE, joint, (stack,), labels)


def no_comm_extension(
    p_u, theta_a, theta_b, theta_c, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> Extension:
    p = _check_pmf(p_u, tolerances)
    stacks = []
    dims = []
    for name, raw in (("A", theta_a), ("B", theta_b), ("C", theta_c)):
        arr = np.asarray(raw, dtype=complex)
        stacks.append(_check_conditionals(arr, ((name, arr.shape[-1]),), tolerances))
        dims.append(arr.shape[-1])
    _check_extension_shapes(p, stacks, Topology.NO_COMM)
    _warn_cardinality(Topology.NO_COMM, 0, dims, p.size)
    labels = (("A", dims[0]), ("B", dims[1]), ("C", dims[2]))
    return Extension(Topology.NO_COMM, p, tuple(stacks), labels)


def broadcast_extension(
    joint_pmf, thetas_b1, etas_b2, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> Extension:
    joint = np.asarray(joint_pmf, dtype=float)
    _check_pmf(joint.reshape(-1), tolerances)
    stacks = []
    dims = []
    for name, raw in (("B1", thetas_b1), ("B2", etas_b2)):
        arr = np.asarray(raw, dtype=complex)
        stacks.append(_check_conditionals(arr, ((name, arr.shape[-1]),), tolerances))
        dims.append(arr.shape[-1])
    _check_extension_shapes(joint, stacks, Topology.BROADCAST)
    _warn_cardinality(Topology.BROADCAST, joint.shape[0], dims, joint.shape[1])
    labels = (("B1", dims[0]), ("B2", dims[1]))
    return Extension(Topology.BROADCAST, joint, tuple(stacks), labels)


def u_equals_x_extension(target: CqNetworkState) -> Extension:
    """Always-feasible extension with U = X and per-u states the target conditionals."""
    if target.topology is Topology.NO_COMM:
        raise TopologyMismatch("no classical register to copy for NO_COMM")
    m = target.alphabet_size
    joint = np.diag(target.pmf)
    if target.topology is Topology.TWO_NODE:
        return two_node_extension(joint, target.conditionals.copy())
    d1 = target.quantum_labels[0][1]
    d2 = target.quantum_labels[1][1]
    thetas = np.zeros((m, d1, d1), dtype=complex)
    etas = np.zeros((m, d2, d2), dtype=complex)
    for x in range(m):
        cond = DensityOperator(target.conditionals[x].copy(), target.quantum_labels)
        thetas[x] = qstate.partial_trace(cond, ("B1",)).matrix
        etas[x] = qstate.partial_trace(cond, ("B2",)).matrix
    return broadcast_extension(joint, thetas, etas)


# --- assembly and marginalization ------------------------------------------


def _block_diag_embed(weights: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    m = weights.shape[0]
    d = blocks.shape[-1]
    out = np.zeros((m * d, m * d), dtype=complex)
    for i in range(m):
        out[i * d : (i + 1) * d, i * d : (i + 1) * d] = weights[i] * blocks[i]
    return out


def assemble(state: CqNetworkState, dim_cap: int | None = None) -> DensityOperator:
    """Full density operator, classical register diagonal in the computational basis."""
    if dim_cap is None:
        dim_cap = default_caps().tensor_dim
    if state.topology is Topology.NO_COMM:
        return DensityOperator(state.conditionals.copy(), state.quantum_labels)
    m = state.alphabet_size
    d = state.quantum_dim
    if m * d > dim_cap:
        raise DimensionCap(f"assembled dim {m * d} exceeds cap {dim_cap}")
    mat = _block_diag_embed(state.pmf, state.conditionals)
    labels = (("X", m),) + state.quantum_labels
    return DensityOperator(mat, labels)


def _factor_products(ext: Extension) -> np.ndarray:
    """Per-u tensor product of the declared factors, stacked over u."""
    out = ext.factors[0]
    for stack in ext.factors[1:]:
        out = np.einsum("uij,ukl->uikjl", out, stack).reshape(
            ext.u_size, out.shape[-1] * stack.shape[-1], out.shape[-1] * stack.shape[-1]
        )
    return out


def assemble_extension(ext: Extension, dim_cap: int | None = None) -> DensityOperator:
    """Full operator on (X,) U and the quantum registers, block diagonal in (x, u)."""
    if dim_cap is None:
        dim_cap = default_caps().tensor_dim
    products = _factor_products(ext)
    d = products.shape[-1]
    u = ext.u_size
    if ext.topology is Topology.NO_COMM:
        if u * d > dim_cap:
            raise DimensionCap(f"assembled dim {u * d} exceeds cap {dim_cap}")
        mat = _block_diag_embed(ext.joint_pmf, products)
        return DensityOperator(mat, (("U", u),) + ext.quantum_labels)
    m = ext.joint_pmf.shape[0]
    if m * u * d > dim_cap:
        raise DimensionCap(f"assembled dim {m * u * d} exceeds cap {dim_cap}")
    weights = ext.joint_pmf.reshape(-1)
    blocks = np.broadcast_to(products, (m, u, d, d)).reshape(m * u, d, d)
    mat = _block_diag_embed(weights, blocks)
    return DensityOperator(mat, (("X", m), ("U", u)) + ext.quantum_labels)


def marginalize_extension(ext: Extension, tolerances: Tolerances = DEFAULT_TOLERANCES) -> CqNetworkState:
    """Sum out U, returning the network state the extension induces."""
    products = _factor_products(ext)
    if ext.topology is Topology.NO_COMM:
        omega = np.einsum("u,uij->ij", ext.joint_pmf, products)
        return no_comm_target(omega, [d for _, d in ext.quantum_labels], tolerances)
    p_x = ext.joint_pmf.sum(axis=1)
    m = p_x.size
    d = products.shape[-1]
    conds = np.zeros((m, d, d), dtype=complex)
    for x in range(m):
        if p_x[x] > 0:
            conds[x] = np.einsum("u,uij->ij", ext.joint_pmf[x] / p_x[x], products)
        else:
            conds[x] = np.eye(d) / d
    if ext.topology is Topology.TWO_NODE:
        return two_node_target(p_x, conds, tolerances)
    dims = (ext.quantum_labels[0][1], ext.quantum_labels[1][1])
    return broadcast_target(p_x, conds, dims, tolerances)


def _check_match(ext: Extension, target: CqNetworkState) -> None:
    if ext.topology is not target.topology:
        raise TopologyMismatch(f"extension is {ext.topology}, target is {target.topology}")
    if ext.quantum_labels != target.quantum_labels:
        raise TopologyMismatch(
            f"quantum registers differ: {ext.quantum_labels} vs {target.quantum_labels}"
        )
    if ext.topology is not Topology.NO_COMM and ext.joint_pmf.shape[0] != target.alphabet_size:
        raise TopologyMismatch("classical alphabet sizes differ")


def feasibility_residual(
    ext: Extension, target: CqNetworkState, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> float:
    """Trace distance between the extension's marginal and the target."""
    _check_match(ext, target)
    marg = marginalize_extension(ext, tolerances)
    if ext.topology is Topology.NO_COMM:
        return qstate.trace_distance_matrices(marg.conditionals, target.conditionals)
    # both states are blocks over the same classical basis, so the trace norm
    # decomposes block by block
    total = 0.0
    for x in range(target.alphabet_size):
        total += qstate.trace_distance_matrices(
            marg.pmf[x] * marg.conditionals[x], target.pmf[x] * target.conditionals[x]
        )
    return total


# --- information functionals -----------------------------------------------


def classical_mutual_information(joint: np.ndarray) -> float:
    """I(X;U) in bits from a joint table; zero rows/columns contribute zero."""
    w = np.asarray(joint, dtype=float)
    p_x = w.sum(axis=1, keepdims=True)
    p_u = w.sum(axis=0, keepdims=True)
    mask = w > 0
    ratio = np.ones_like(w)
    denom = p_x @ p_u
    ratio[mask] = w[mask] / denom[mask]
    return float(np.sum(w[mask] * np.log2(ratio[mask])))


def info_two_node(
    ext: Extension, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> tuple[float, float]:
    """(I(X;U), I(XB;U)) on the assembled extension.

    I(X;U) is also computed classically from the joint PMF; the two paths
    must agree within tau_num.
    """
    if ext.topology is not Topology.TWO_NODE:
        raise TopologyMismatch(f"expected TWO_NODE, got {ext.topology}")
    sigma = assemble_extension(ext)
    i_xu = qstate.mutual_information(
        qstate.partial_trace(sigma, ("X", "U")), RegisterCut(("X",), ("U",)), tolerances
    )
    i_xbu = qstate.mutual_information(sigma, RegisterCut(("X", "B"), ("U",)), tolerances)
    i_classical = classical_mutual_information(ext.joint_pmf)
    if abs(i_xu - i_classical) > tolerances.tau_num:
        raise ValueError(
            f"classical and quantum I(X;U) disagree: {i_classical} vs {i_xu}"
        )
    return i_xu, i_xbu


def info_nc(ext: Extension, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """I(U;ABC) across the auxiliary cut of the assembled extension."""
    if ext.topology is not Topology.NO_COMM:
        raise TopologyMismatch(f"expected NO_COMM, got {ext.topology}")
    sigma = assemble_extension(ext)
    return qstate.mutual_information(sigma, RegisterCut(("U",), ("A", "B", "C")), tolerances)


def info_broadcast(
    ext: Extension, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> tuple[float, float]:
    """(I(X;U), I(XB1B2;U)) on the assembled extension."""
    if ext.topology is not Topology.BROADCAST:
        raise TopologyMismatch(f"expected BROADCAST, got {ext.topology}")
    sigma = assemble_extension(ext)
    i_xu = qstate.mutual_information(
        qstate.partial_trace(sigma, ("X", "U")), RegisterCut(("X",), ("U",)), tolerances
    )
    i_xbu = qstate.mutual_information(sigma, RegisterCut(("X", "B1", "B2"), ("U",)), tolerances)
    i_classical = classical_mutual_information(ext.joint_pmf)
    if abs(i_xu - i_classical) > tolerances.tau_num:
        raise ValueError(
            f"classical and quantum I(X;U) disagree: {i_classical} vs {i_xu}"
        )
    return i_xu, i_xbu
