"""Exact execution of the three coordination protocols at small blocklength.

Each run builds a code from an auxiliary extension (codebook drawn i.i.d.
from the extension's U-marginal), forms the induced n-copy joint state
exactly, and measures trace distance to the n-fold target.  Randomness enters
only through codebook draws; the expectation over the encoder's index choice,
the source sequence and the shared uniform element is carried out in closed
form, never sampled.

The induced state and the target are block diagonal over the same classical
basis, so the trace norm decomposes block by block.  When every operator in
sight is diagonal (fully classical instances) the blocks are carried as
vectors, which keeps n-copy runs cheap.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances, default_caps
from .cqmodel import CqNetworkState, Extension, Topology, feasibility_residual
from .errors import DimensionCap, InfeasibleExtension, LengthMismatch
from .qstate import trace_distance_matrices
from .softcover import (
    Codebook,
    codebook_size,
    derive_seed,
    draw_codebook,
    map_trials,
    _mean_and_stderr,
)


@dataclass(frozen=True)
class TwoNodeCode:
    n: int
    r0: float
    r1: float
    codebook: Codebook
    extension: Extension

    def __post_init__(self):
        _check_shape(self.codebook, self.n, self.r0, self.r1)


@dataclass(frozen=True)
class NoCommCode:
    n: int
    r0: float
    codebook: Codebook
    extension: Extension

    def __post_init__(self):
        if self.codebook.num_bins != codebook_size(self.n, self.r0) or self.codebook.bin_size != 1:
            raise ValueError("codebook shape inconsistent with (n, R0)")


@dataclass(frozen=True)
class BroadcastCode:
    n: int
    r0: float
    r1: float
    codebook: Codebook
    extension: Extension

    def __post_init__(self):
        _check_shape(self.codebook, self.n, self.r0, self.r1)


@dataclass(frozen=True)
class InducedBlocks:
    """Induced c-q state as a block map: x_seqs[s] -> (weights[s], mixtures[s])."""

    x_seqs: np.ndarray  # (S, n)
    weights: np.ndarray  # (S,) classical probabilities p_X^n
    mixtures: np.ndarray  # (S, d, d) unit-trace blocks, or (S, d) when diagonal
    diagonal: bool


@dataclass(frozen=True)
class ProtocolRow:
    topology: str
    n: int
    r0: float
    r1: float | None
    trials: int
    mean_gap: float
    std_err: float


def _check_shape(cb: Codebook, n: int, r0: float, r1: float) -> None:
    if cb.n != n:
        raise ValueError(f"codebook blocklength {cb.n} != {n}")
    if cb.num_bins != codebook_size(n, r0) or cb.bin_size != codebook_size(n, r1):
        raise ValueError("codebook shape inconsistent with (n, R0, R1)")


def make_two_node_code(ext: Extension, n, r0, r1, seed, caps=None) -> TwoNodeCode:
    cb = draw_codebook(ext.u_pmf, n, codebook_size(n, r0), codebook_size(n, r1), seed, caps)
    return TwoNodeCode(int(n), float(r0), float(r1), cb, ext)


def make_no_comm_code(ext: Extension, n, r0, seed, caps=None) -> NoCommCode:
    cb = draw_codebook(ext.u_pmf, n, codebook_size(n, r0), 1, seed, caps)
    return NoCommCode(int(n), float(r0), cb, ext)


def make_broadcast_code(ext: Extension, n, r0, r1, seed, caps=None) -> BroadcastCode:
    cb = draw_codebook(ext.u_pmf, n, codebook_size(n, r0), codebook_size(n, r1), seed, caps)
    return BroadcastCode(int(n), float(r0), float(r1), cb, ext)


# --- encoder ----------------------------------------------------------------


def _x_given_u(ext: Extension) -> np.ndarray:
    """Conditional p(x|u) as a (|U|, |X|) table; zero-mass u rows are zero."""
    joint = ext.joint_pmf
    q_u = joint.sum(axis=0)
    table = np.zeros((joint.shape[1], joint.shape[0]))
    nz = q_u > 0
    table[nz] = (joint[:, nz] / q_u[nz]).T
    return table


def encoder_pmf(code: TwoNodeCode | BroadcastCode, x_seq, j: int) -> np.ndarray:
    """Distribution over the index i given the source sequence and CR element.

    Proportional to the codeword likelihood of the sequence; when every
    likelihood in the bin vanishes the distribution falls back to uniform.
    """
    seq = np.asarray(x_seq, dtype=np.int64)
    if seq.shape != (code.n,):
        raise LengthMismatch(f"sequence length {seq.shape} != blocklength {code.n}")
    table = _x_given_u(code.extension)
    words = code.codebook.codewords[j]  # (bin_size, n)
    likes = np.prod(table[words, seq[None, :]], axis=1)
    total = likes.sum()
    if total <= 0.0:
        return np.full(words.shape[0], 1.0 / words.shape[0])
    return likes / total


# --- block machinery --------------------------------------------------------


def _enumerate_sequences(alphabet: int, n: int) -> np.ndarray:
    return np.array(list(itertools.product(range(alphabet), repeat=n)), dtype=np.int64)


def _all_diagonal(stacks) -> bool:
    for stack in stacks:
        for k in range(stack.shape[0]):
            if np.count_nonzero(stack[k] - np.diag(np.diagonal(stack[k]))):
                return False
    return True


def _stack_kron(stack: np.ndarray, words: np.ndarray) -> np.ndarray:
    """(m, d, d) single-copy operators -> (C, d^n, d^n) per-word tensor powers."""
    c, n = words.shape
    d = stack.shape[-1]
    out = np.ones((c, 1, 1), dtype=stack.dtype)
    for k in range(n):
        mats = stack[words[:, k]]
        dd = out.shape[-1]
        out = np.einsum("cij,ckl->cikjl", out, mats).reshape(c, dd * d, dd * d)
    return out

def _stack_kron_diag(diags: np.ndarray, words: np.ndarray) -> np.ndarray:
    """(m, d) diagonals -> (C, d^n) per-word tensor-power diagonals."""
    c, n = words.shape
    d = diags.shape[-1]
    out = np.ones((c, 1), dtype=diags.dtype)
    for k in range(n):
        vecs = diags[words[:, k]]
        out = (out[:, :, None] * vecs[:, None, :]).reshape(c, -1)
    return out


def _single_copy_ops(ext: Extension) -> np.ndarray:
    """Per-u single-copy operator on the full quantum output (product of factors)."""
    out = ext.factors[0]
    for stack in ext.factors[1:]:
        u, da, _ = out.shape
        db = stack.shape[-1]
        out = np.einsum("uij,ukl->uikjl", out, stack).reshape(u, da * db, da * db)
    return out


def _encoder_weights(ext: Extension, words: np.ndarray, x_seqs: np.ndarray) -> np.ndarray:
    """W[s, c] = P(i | x^n = s, j) / num_bins flattened over codewords c = (j, i)."""
    num_bins, bin_size, n = words.shape
    table = _x_given_u(ext)
    flat = words.reshape(-1, n)  # (C, n)
    likes = np.prod(table[flat[:, None, :], x_seqs[None, :, :]], axis=2)  # (C, S)
    likes = likes.reshape(num_bins, bin_size, -1)
    sums = likes.sum(axis=1, keepdims=True)
    zero = sums <= 0.0
    norm = np.where(zero, 1.0, sums)
    cond = likes / norm
    cond = np.where(np.broadcast_to(zero, cond.shape), 1.0 / bin_size, cond)
    return cond.reshape(num_bins * bin_size, -1).T / num_bins  # (S, C)


def _check_caps(m: int, d: int, n: int, caps) -> None:
    if m**n > caps.classical_blocks:
        raise DimensionCap(f"{m}^{n} classical blocks exceed cap {caps.classical_blocks}")
    if d**n > caps.block_dim:
        raise DimensionCap(f"block dim {d}^{n} exceeds cap {caps.block_dim}")


def _mixtures_from_codebook(ext, ops, codebook, x_seqs, diagonal) -> np.ndarray:
    """Per-block unit-trace mixtures induced by one codebook draw."""
    n = codebook.n
    d = ops.shape[-1]
    w_enc = _encoder_weights(ext, codebook.codewords, x_seqs)  # (S, C)
    flat_words = codebook.codewords.reshape(-1, n)
    if diagonal:
        theta = _stack_kron_diag(np.diagonal(ops, axis1=1, axis2=2).real, flat_words)  # (C, d^n)
        return w_enc @ theta
    theta = _stack_kron(ops, flat_words)  # (C, d^n, d^n)
    return (w_enc @ theta.reshape(theta.shape[0], -1)).reshape(-1, d**n, d**n)


def _induced_blocks(
    ext: Extension,
    target: CqNetworkState,
    codebook: Codebook,
    caps,
) -> InducedBlocks:
    n = codebook.n
    m = target.alphabet_size
    ops = _single_copy_ops(ext)
    _check_caps(m, ops.shape[-1], n, caps)
    diagonal = _all_diagonal((ops,)) and _all_diagonal((target.conditionals,))
    x_seqs = _enumerate_sequences(m, n)
    weights = np.prod(target.pmf[x_seqs], axis=1)
    mixtures = _mixtures_from_codebook(ext, ops, codebook, x_seqs, diagonal)
    return InducedBlocks(x_seqs, weights, mixtures, diagonal)


def induced_state_two_node(code: TwoNodeCode, caps=None) -> InducedBlocks:
    """Exact induced joint state of a two-node code, as a classical block map."""
    caps = caps if caps is not None else default_caps()
    from .cqmodel import marginalize_extension

    return _induced_blocks(code.extension, marginalize_extension(code.extension), code.codebook, caps)


def _target_blocks(target_conds: np.ndarray, x_seqs: np.ndarray, diagonal: bool) -> np.ndarray:
    if diagonal:
        return _stack_kron_diag(np.diagonal(target_conds, axis1=1, axis2=2).real, x_seqs)
    return _stack_kron(target_conds, x_seqs)


def _blocks_gap(
    blocks: InducedBlocks,
    target_conds: np.ndarray,
    tolerances: Tolerances,
    t_blocks: np.ndarray | None = None,
) -> float:
    """Sum over x^n of || p(x^n) (mixture - target^{x^n}) ||_1, block by block."""
    bad = np.abs(
        (blocks.mixtures.sum(axis=1) if blocks.diagonal else np.trace(blocks.mixtures, axis1=1, axis2=2))
        - 1.0
    )
    if np.any(bad > 100 * tolerances.tau_num):
        raise ArithmeticError(f"induced block trace off by {bad.max():.3e}")
    if t_blocks is None:
        t_blocks = _target_blocks(target_conds, blocks.x_seqs, blocks.diagonal)
    if blocks.diagonal:
        per_block = np.sum(np.abs(blocks.mixtures.real - t_blocks), axis=1)
        return float(np.dot(blocks.weights, per_block))
    total = 0.0
    for s in range(blocks.x_seqs.shape[0]):
        if blocks.weights[s] == 0.0:
            continue
        total += blocks.weights[s] * trace_distance_matrices(blocks.mixtures[s], t_blocks[s])
    return total


def protocol_gap_two_node(
    code: TwoNodeCode,
    target: CqNetworkState | None = None,
    caps=None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> float:
    """Trace distance between the induced state and target^{tensor n} in [0, 2]."""
    caps = caps if caps is not None else default_caps()
    from .cqmodel import marginalize_extension

    if target is None:
        target = marginalize_extension(code.extension)
    blocks = _induced_blocks(code.extension, target, code.codebook, caps)
    return _blocks_gap(blocks, target.conditionals, tolerances)


# --- full runs --------------------------------------------------------------


def _check_feasible(ext: Extension, target: CqNetworkState, tolerances: Tolerances) -> None:
    residual = feasibility_residual(ext, target, tolerances)
    if residual > tolerances.tau_feas:
        raise InfeasibleExtension(
            f"extension residual {residual:.3e} exceeds tau_feas {tolerances.tau_feas:.1e}"
        )


def _run_cq_protocol(
    topology: str,
    target: CqNetworkState,
    ext: Extension,
    r0: float,
    r1: float,
    n_list,
    trials: int,
    seed: int,
    caps,
    tolerances: Tolerances,
    workers: int,
) -> list[ProtocolRow]:
    _check_feasible(ext, target, tolerances)
    ops = _single_copy_ops(ext)
    m = target.alphabet_size
    diagonal = _all_diagonal((ops,)) and _all_diagonal((target.conditionals,))
    rows = []
    for n in n_list:
        _check_caps(m, ops.shape[-1], n, caps)
        num_bins = codebook_size(n, r0)
        bin_size = codebook_size(n, r1)
        x_seqs = _enumerate_sequences(m, n)
        weights = np.prod(target.pmf[x_seqs], axis=1)
        t_blocks = _target_blocks(target.conditionals, x_seqs, diagonal)

        def one_trial(t, n=n, num_bins=num_bins, bin_size=bin_size,
                      x_seqs=x_seqs, weights=weights, t_blocks=t_blocks):
            cb = draw_codebook(ext.u_pmf, n, num_bins, bin_size, derive_seed(seed, n, t), caps)
            mixtures = _mixtures_from_codebook(ext, ops, cb, x_seqs, diagonal)
            blocks = InducedBlocks(x_seqs, weights, mixtures, diagonal)
            expected = np.prod(target.pmf[x_seqs], axis=1)
            if not np.array_equal(blocks.weights, expected):
                raise ArithmeticError("classical marginal of the induced state drifted")
            return _blocks_gap(blocks, target.conditionals, tolerances, t_blocks)

        gaps = map_trials(one_trial, trials, workers)
        mean, stderr = _mean_and_stderr(gaps)
        rows.append(ProtocolRow(topology, int(n), float(r0), float(r1), int(trials), mean, stderr))
    return rows


def run_two_node(
    target: CqNetworkState,
    ext: Extension,
    r0: float,
    r1: float,
    n_list,
    trials: int,
    seed: int,
    caps=None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    workers: int = 1,
) -> list[ProtocolRow]:
    """Monte Carlo over codebooks of the two-node protocol gap.

    The induced state's classical marginal equals p_X^n exactly at every
    trial (the encoder conditions on the source, never alters it); this is
    asserted per trial.
    """
    if target.topology is not Topology.TWO_NODE:
        raise InfeasibleExtension(f"target topology {target.topology} is not TWO_NODE")
    caps = caps if caps is not None else default_caps()
    return _run_cq_protocol(
        "two-node", target, ext, r0, r1, n_list, trials, seed, caps, tolerances, workers
    )


def run_broadcast(
    target: CqNetworkState,
    ext: Extension,
    r0: float,
    r1: float,
    n_list,
    trials: int,
    seed: int,
    caps=None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    workers: int = 1,
) -> list[ProtocolRow]:
    """Two receivers prepare their halves from the same codeword; exact gap."""
    if target.topology is not Topology.BROADCAST:
        raise InfeasibleExtension(f"target topology {target.topology} is not BROADCAST")
    caps = caps if caps is not None else default_caps()
    return _run_cq_protocol(
        "broadcast", target, ext, r0, r1, n_list, trials, seed, caps, tolerances, workers
    )


def run_no_comm(
    target: CqNetworkState,
    ext: Extension,
    r0: float,
    n_list,
    trials: int,
    seed: int,
    caps=None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    workers: int = 1,
) -> list[ProtocolRow]:
    """All three nodes prepare from the shared element; mixture over j is exact."""
    if target.topology is not Topology.NO_COMM:
        raise InfeasibleExtension(f"target topology {target.topology} is not NO_COMM")
    caps = caps if caps is not None else default_caps()
    _check_feasible(ext, target, tolerances)
    ops = _single_copy_ops(ext)
    d = ops.shape[-1]
    diagonal = _all_diagonal((ops,)) and np.count_nonzero(
        target.conditionals - np.diag(np.diagonal(target.conditionals))
    ) == 0
    rows = []
    for n in n_list:
        if d**n > caps.total_dim:
            raise DimensionCap(f"total dim {d}^{n} exceeds cap {caps.total_dim}")
        ref_word = np.zeros((1, n), dtype=np.int64)
        if diagonal:
            ref = _stack_kron_diag(
                np.diagonal(target.conditionals.reshape(1, d, d), axis1=1, axis2=2).real, ref_word
            )[0]
        else:
            ref = _stack_kron(target.conditionals.reshape(1, d, d), ref_word)[0]

        def one_trial(t, n=n, ref=ref):
            code = make_no_comm_code(ext, n, r0, derive_seed(seed, n, t), caps)
            words = code.codebook.codewords.reshape(-1, n)
            if diagonal:
                per_word = _stack_kron_diag(np.diagonal(ops, axis1=1, axis2=2).real, words)
                return float(np.sum(np.abs(per_word.mean(axis=0) - ref)))
            per_word = _stack_kron(ops, words)
            return trace_distance_matrices(per_word.sum(axis=0) / words.shape[0], ref)

        gaps = map_trials(one_trial, trials, workers)
        mean, stderr = _mean_and_stderr(gaps)
        rows.append(ProtocolRow("no-comm", int(n), float(r0), None, int(trials), mean, stderr))
    return rows
