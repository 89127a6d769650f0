"""Numerical characterization of the three coordination capacity regions.

The information functionals are minimized over feasible auxiliary extensions
by multi-start alternating optimization: exponentiated-gradient steps on the
classical joint PMF alternate with gradient steps on square-root-factorized
per-u states, with the marginal constraint enforced by a ramped penalty and a
final projection (exact for classical targets).  Results are best-found, never
claimed globally optimal; every reported objective is evaluated on a
feasibility-repaired extension whose residual passes the tau_feas gate.

Entangled targets are screened with the positive-partial-transpose test,
which certifies infeasibility (capacity +infinity, carried as an explicit
status, never a sentinel float).

A separate brute-force oracle scans grid-discretized conditional PMFs of the
auxiliary variable given the full classical configuration, keeping exactly
those grid points whose induced joint is conditionally independent across the
registers; it serves as an independent check on classical instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .config import DEFAULT_TOLERANCES, Tolerances
from .cqmodel import (
    CqNetworkState,
    Extension,
    Topology,
    broadcast_extension,
    cardinality_bound,
    no_comm_extension,
    two_node_extension,
    u_equals_x_extension,
)
from .errors import BudgetExceeded, TopologyMismatch
from . import cqmodel, qstate
from .qstate import RegisterCut

_LN2 = math.log(2.0)

FEASIBLE = "FEASIBLE"
INFEASIBLE_ENTANGLED = "INFEASIBLE_ENTANGLED"
UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class RatePoint:
    r0: float
    r1: float | None = None

    def __post_init__(self):
        if self.r0 < 0 or (self.r1 is not None and self.r1 < 0):
            raise ValueError("rates must be nonnegative")


@dataclass
class RegionResult:
    topology: Topology
    objective: str
    value: float | None
    argmin: Extension | None
    status: str
    r0_sufficient: float | None = None
    ppt_certificate: tuple[str, float] | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class RegionBoundary:
    topology: Topology
    variant: str
    r0_values: list[float]
    r1_values: list[float]
    status: str
    ppt_certificate: tuple[str, float] | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SearchOptions:
    restarts: int = 32
    u_values: tuple[int, ...] | None = None  # default: 1..cardinality bound
    outer_iters: int = 24
    theta_steps: int = 2
    w_steps: int = 4
    seed: int = 0
    penalty_init: float = 1.0
    penalty_growth: float = 1.8
    penalty_max: float = 1e7
    step_w: float = 0.4
    step_theta: float = 0.25


@dataclass
class _Candidate:
    joint: np.ndarray
    factors: tuple[np.ndarray, ...]
    residual: float
    values: tuple[float, ...]  # (ixu, ixbu) or (i_uabc,)
    order: tuple[int, int]  # (layer, restart) for deterministic tie-break


# --- batched entropy helpers on raw arrays ----------------------------------


def _entropy_pmf(p: np.ndarray) -> float:
    pos = p[p > 0]
    return float(-np.sum(pos * np.log2(pos)))


def _entropy_stack(stack: np.ndarray) -> np.ndarray:
    """Entropies in bits of a (..., d, d) stack of Hermitian PSD matrices."""
    vals = np.linalg.eigvalsh(stack)
    vals = np.clip(vals, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(vals > 0, vals * np.log2(vals), 0.0)
    return -terms.sum(axis=-1)


def _log2_matrix(mat: np.ndarray, floor: float = 1e-18) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, floor, None)
    return (vecs * np.log2(vals)) @ vecs.conj().T


def _log2_stack(stack: np.ndarray, floor: float = 1e-18) -> np.ndarray:
    vals, vecs = np.linalg.eigh(stack)
    vals = np.clip(vals, floor, None)
    return np.einsum("...ij,...j,...kj->...ik", vecs, np.log2(vals), vecs.conj())


def _classical_mi(joint: np.ndarray) -> float:
    return cqmodel.classical_mutual_information(joint)


def _theta_from_a(a_stack: np.ndarray) -> np.ndarray:
    gram = np.einsum("...ij,...kj->...ik", a_stack, a_stack.conj())
    traces = np.trace(gram, axis1=-2, axis2=-1).real
    traces = np.where(traces <= 0, 1.0, traces)
    return gram / traces[..., None, None]


def _a_gradient(a_stack: np.ndarray, thetas: np.ndarray, g_stack: np.ndarray) -> np.ndarray:
    """Gradient wrt the square-root factor A of f(theta), theta = A A^dag / tr."""
    traces = np.einsum("...ij,...ij->...", a_stack, a_stack.conj()).real
    traces = np.where(traces <= 0, 1.0, traces)
    inner = np.einsum("...ij,...ji->...", g_stack, thetas).real
    centered = g_stack - inner[..., None, None] * np.eye(a_stack.shape[-1])
    return 2.0 * np.einsum("...ij,...jk->...ik", centered, a_stack) / traces[..., None, None]


# --- two-node / broadcast shared machinery ----------------------------------
#
# Both topologies optimize a joint PMF w over (X, U) and per-u product states;
# broadcast per-u states are theta (x) eta, handled through per-factor
# gradients of the same full-output objective.


def _per_u_products(factors: tuple[np.ndarray, ...]) -> np.ndarray:
    out = factors[0]
    for stack in factors[1:]:
        u, da, _ = out.shape
        db = stack.shape[-1]
        out = np.einsum("uij,ukl->uikjl", out, stack).reshape(u, da * db, da * db)
    return out


def _cq_mixes(p_x: np.ndarray, w: np.ndarray, products: np.ndarray) -> np.ndarray:
    mixes = np.einsum("xu,uij->xij", w, products)
    safe = np.where(p_x > 0, p_x, 1.0)
    return mixes / safe[:, None, None]


def _cq_residual(p_x, omegas, w, products) -> float:
    weighted = np.einsum("xu,uij->xij", w, products)
    total = 0.0
    for x in range(p_x.size):
        total += qstate.trace_distance_matrices(weighted[x], p_x[x] * omegas[x])
    return total


def _cq_penalty_and_deltas(p_x, omegas, w, products):
    deltas = np.einsum("xu,uij->xij", w, products) - p_x[:, None, None] * omegas
    return float(np.sum(np.abs(deltas) ** 2).real), deltas


def _cq_objectives(p_x, w, products) -> tuple[float, float]:
    """(I(X;U), I(X out;U)) for a structurally product extension."""
    ixu = _classical_mi(w)
    q_u = w.sum(axis=0)
    mixes = _cq_mixes(p_x, w, products)
    h_mix = _entropy_stack(mixes)
    h_u = _entropy_stack(products)
    ixbu = ixu + float(np.dot(p_x, h_mix)) - float(np.dot(q_u, h_u))
    return ixu, max(ixbu, 0.0)


def _cq_loss(p_x, omegas, w, products, lam, objective) -> float:
    pen, _ = _cq_penalty_and_deltas(p_x, omegas, w, products)
    ixu, ixbu = _cq_objectives(p_x, w, products)
    return (ixu if objective == "ixu" else ixbu) + lam * pen


def _cq_w_gradient(p_x, omegas, w, products, lam, objective) -> np.ndarray:
    q_u = w.sum(axis=0)
    grad = np.zeros_like(w)
    mask = w > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = w / (p_x[:, None] * q_u[None, :])
        grad[mask] = np.log2(ratio[mask])
    _, deltas = _cq_penalty_and_deltas(p_x, omegas, w, products)
    grad += lam * 2.0 * np.einsum("xij,uji->xu", deltas, products).real
    if objective == "ixbu":
        mixes = _cq_mixes(p_x, w, products)
        log_mix = _log2_stack(mixes)
        c = 1.0 / _LN2
        kernel = -(log_mix + c * np.eye(mixes.shape[-1]))
        grad += np.einsum("xij,uji->xu", kernel, products).real
        grad -= _entropy_stack(products)[None, :]
    return grad


def _eg_w_step(p_x, omegas, w, factors, lam, objective, step, tries=4):
    """Exponentiated-gradient step on w with rows rescaled to the target PMF."""
    products = _per_u_products(factors)
    grad = _cq_w_gradient(p_x, omegas, w, products, lam, objective)
    grad = grad - grad.mean(axis=1, keepdims=True)
    scale = np.max(np.abs(grad))
    if scale == 0.0:
        return w
    base = _cq_loss(p_x, omegas, w, products, lam, objective)
    eta = step / scale
    for _ in range(tries):
        cand = w * np.exp(-eta * grad)
        sums = cand.sum(axis=1)
        safe = np.where(sums > 0, sums, 1.0)
        cand = cand * (p_x / safe)[:, None]
        if _cq_loss(p_x, omegas, cand, products, lam, objective) <= base + 1e-12:
            return cand
        eta *= 0.5
    return w


def _cq_full_gradients(p_x, omegas, w, products, lam, objective) -> np.ndarray:
    """Hermitian gradient wrt each per-u full-output state."""
    q_u = w.sum(axis=0)
    _, deltas = _cq_penalty_and_deltas(p_x, omegas, w, products)
    g = lam * 2.0 * np.einsum("xu,xij->uij", w, deltas)
    if objective == "ixbu":
        mixes = _cq_mixes(p_x, w, products)
        c = 1.0 / _LN2
        eye = np.eye(products.shape[-1])
        kernel = -(_log2_stack(mixes) + c * eye)
        g += np.einsum("xu,xij->uij", w, kernel)
        g += q_u[:, None, None] * (_log2_stack(products) + c * eye)
    return g


def _factor_gradients(full_grad: np.ndarray, factors: tuple[np.ndarray, ...]):
    """Split the full-output Hermitian gradient into per-factor gradients."""
    if len(factors) == 1:
        return (full_grad,)
    theta, eta = factors
    d1, d2 = theta.shape[-1], eta.shape[-1]
    view = full_grad.reshape(-1, d1, d2, d1, d2)
    g_theta = np.einsum("uabcd,udb->uac", view, eta)
    g_eta = np.einsum("uabcd,uca->ubd", view, theta)
    return g_theta, g_eta


def _theta_descent(p_x, omegas, w, a_factors, lam, objective, step, steps, tries=3):
    a_factors = [a.copy() for a in a_factors]
    for _ in range(steps):
        factors = tuple(_theta_from_a(a) for a in a_factors)
        products = _per_u_products(factors)
        base = _cq_loss(p_x, omegas, w, products, lam, objective)
        full_grad = _cq_full_gradients(p_x, omegas, w, products, lam, objective)
        per_factor = _factor_gradients(full_grad, factors)
        a_grads = [
            _a_gradient(a, f, g) for a, f, g in zip(a_factors, factors, per_factor)
        ]
        scale = max(float(np.max(np.abs(g))) for g in a_grads)
        if scale == 0.0:
            break
        eta = step / scale
        improved = False
        for _ in range(tries):
            trial = [a - eta * g for a, g in zip(a_factors, a_grads)]
            trial_products = _per_u_products(tuple(_theta_from_a(a) for a in trial))
            if _cq_loss(p_x, omegas, w, trial_products, lam, objective) <= base + 1e-12:
                a_factors = trial
                improved = True
                break
            eta *= 0.5
        if not improved:
            break
    return a_factors


def _alternate_cq(p_x, omegas, w, a_factors, objective, opts: SearchOptions):
    lam = opts.penalty_init
    iters = 0
    for _ in range(opts.outer_iters):
        a_factors = _theta_descent(
            p_x, omegas, w, a_factors, lam, objective, opts.step_theta, opts.theta_steps
        )
        factors = tuple(_theta_from_a(a) for a in a_factors)
        for _ in range(opts.w_steps):
            w = _eg_w_step(p_x, omegas, w, factors, lam, objective, opts.step_w)
        lam = min(lam * opts.penalty_growth, opts.penalty_max)
        iters += 1
    return w, tuple(_theta_from_a(a) for a in a_factors), iters


# --- repair (projection back onto the marginal constraint) -------------------


def _nnls_weights(columns: np.ndarray, rhs: np.ndarray, total: float) -> np.ndarray:
    """min ||columns @ v - rhs|| with v >= 0, then rescaled to sum exactly total."""
    kappa = 64.0
    m = np.vstack([columns, kappa * np.ones((1, columns.shape[1]))])
    b = np.concatenate([rhs, [kappa * total]])
    v, _ = nnls(m, b)
    s = v.sum()
    if s <= 0:
        return np.full(columns.shape[1], total / columns.shape[1])
    return v * (total / s)


def _stack_to_real_columns(products: np.ndarray) -> np.ndarray:
    u = products.shape[0]
    flat = products.reshape(u, -1)
    return np.vstack([flat.real.T, flat.imag.T])  # (2 d^2, |U|)


def _pinch_diagonal(stack: np.ndarray) -> np.ndarray:
    diags = np.diagonal(stack, axis1=-2, axis2=-1).real
    diags = np.clip(diags, 0.0, None)
    sums = diags.sum(axis=-1, keepdims=True)
    sums = np.where(sums > 0, sums, 1.0)
    diags = diags / sums
    out = np.zeros_like(stack)
    idx = np.arange(stack.shape[-1])
    out[..., idx, idx] = diags
    return out


def _is_classical(omegas: np.ndarray) -> bool:
    off = omegas - np.einsum(
        "...i,ij->...ij", np.diagonal(omegas, axis1=-2, axis2=-1), np.eye(omegas.shape[-1])
    )
    return bool(np.max(np.abs(off)) < 1e-12)


def _repair_cq(p_x, omegas, w, factors):
    """Project w onto the marginal constraint given the per-u states.

    For classical (diagonal) targets the per-u states are pinched to their
    diagonals first (never increases the residual) and the weight solve is
    then exact whenever the states span the target conditionals.
    """
    variants = [factors]
    if _is_classical(omegas):
        variants.append(tuple(_pinch_diagonal(f) for f in factors))
    best = None
    for fac in variants:
        products = _per_u_products(fac)
        columns = _stack_to_real_columns(products)
        new_w = np.zeros_like(w)
        for x in range(p_x.size):
            rhs = (p_x[x] * omegas[x]).reshape(-1)
            rhs = np.concatenate([rhs.real, rhs.imag])
            new_w[x] = _nnls_weights(columns, rhs, p_x[x])
        residual = _cq_residual(p_x, omegas, new_w, products)
        if best is None or residual < best[2]:
            best = (new_w, fac, residual)
    return best


# --- candidate pools ---------------------------------------------------------


def _two_node_arrays(target: CqNetworkState):
    return target.pmf, target.conditionals


def _seed_list_cq(target: CqNetworkState):
    """Canonical starting points: |U| = 1, U = X, and U = output for classical."""
    p_x = target.pmf
    omegas = target.conditionals
    d = omegas.shape[-1]
    seeds = []
    avg = np.einsum("x,xij->ij", p_x, omegas)
    if target.topology is Topology.TWO_NODE:
        seeds.append((p_x[:, None].copy(), (avg[None, :, :].copy(),)))
        ux = u_equals_x_extension(target)
        seeds.append((ux.joint_pmf.copy(), tuple(f.copy() for f in ux.factors)))
        if _is_classical(omegas):
            joint = p_x[:, None] * np.diagonal(omegas, axis1=1, axis2=2).real
            projectors = np.stack([np.diag(qstate.basis_ket(y, d)).astype(complex) for y in range(d)])
            seeds.append((joint, (projectors,)))
    else:
        d1 = target.quantum_labels[0][1]
        d2 = target.quantum_labels[1][1]
        avg_1 = np.trace(avg.reshape(d1, d2, d1, d2), axis1=1, axis2=3)
        avg_2 = np.trace(avg.reshape(d1, d2, d1, d2), axis1=0, axis2=2)
        seeds.append((p_x[:, None].copy(), (avg_1[None], avg_2[None])))
        ux = u_equals_x_extension(target)
        seeds.append((ux.joint_pmf.copy(), tuple(f.copy() for f in ux.factors)))
        if _is_classical(omegas):
            diag = np.diagonal(omegas, axis1=1, axis2=2).real  # (|X|, d1*d2)
            joint = p_x[:, None] * diag
            proj_1 = np.stack(
                [np.diag(qstate.basis_ket(y // d2, d1)).astype(complex) for y in range(d1 * d2)]
            )
            proj_2 = np.stack(
                [np.diag(qstate.basis_ket(y % d2, d2)).astype(complex) for y in range(d1 * d2)]
            )
            seeds.append((joint, (proj_1, proj_2)))
    return seeds


def _random_cq_start(rng, m, u_size, p_x, factor_dims):
    w = p_x[:, None] * rng.dirichlet(np.ones(u_size), size=m)
    a_factors = [
        (rng.standard_normal((u_size, d, d)) + 1j * rng.standard_normal((u_size, d, d)))
        / math.sqrt(2.0)
        for d in factor_dims
    ]
    return w, a_factors


def _u_layers(target: CqNetworkState, opts: SearchOptions) -> tuple[int, ...]:
    if opts.u_values is not None:
        return tuple(opts.u_values)
    dims = [d for _, d in target.quantum_labels]
    m = target.alphabet_size if target.topology is not Topology.NO_COMM else 0
    bound = cardinality_bound(target.topology, m, dims)
    return tuple(range(1, bound + 1))


def _cq_pool(target: CqNetworkState, objective: str, opts: SearchOptions):
    p_x, omegas = _two_node_arrays(target)
    factor_dims = [d for _, d in target.quantum_labels]
    candidates = []
    iters = 0

    def add(joint, factors, order):
        new_w, fac, residual = _repair_cq(p_x, omegas, joint, factors)
        vals = _cq_objectives(p_x, new_w, _per_u_products(fac))
        candidates.append(_Candidate(new_w, fac, residual, vals, order))
        # the unrepaired point is kept too when it is already tight
        raw_res = _cq_residual(p_x, omegas, joint, _per_u_products(factors))
        if raw_res < residual:
            vals_raw = _cq_objectives(p_x, joint, _per_u_products(factors))
            candidates.append(_Candidate(joint, factors, raw_res, vals_raw, order))

    for k, (joint, factors) in enumerate(_seed_list_cq(target)):
        add(joint, factors, (0, k))

    for layer in _u_layers(target, opts):
        for restart in range(opts.restarts):
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence(opts.seed, spawn_key=(layer, restart)))
            )
            w, a_factors = _random_cq_start(rng, p_x.size, layer, p_x, factor_dims)
            w, factors, it = _alternate_cq(p_x, omegas, w, a_factors, objective, opts)
            iters += it
            add(w, factors, (layer, restart + 1))
    return candidates, iters


def _make_extension(target: CqNetworkState, cand: _Candidate) -> Extension:
    if target.topology is Topology.TWO_NODE:
        return two_node_extension(cand.joint, cand.factors[0])
    if target.topology is Topology.BROADCAST:
        return broadcast_extension(cand.joint, cand.factors[0], cand.factors[1])
    return no_comm_extension(cand.joint, *cand.factors)


def _best(candidates, key_index, tau_feas):
    feasible = [c for c in candidates if c.residual <= tau_feas]
    if not feasible:
        return None, feasible
    winner = min(feasible, key=lambda c: (c.values[key_index], c.order))
    return winner, feasible


def _pool_diagnostics(candidates, feasible, iters, opts):
    best_res = min((c.residual for c in candidates), default=math.inf)
    return {
        "restarts": opts.restarts,
        "candidates": len(candidates),
        "feasible": len(feasible),
        "best_residual": best_res,
        "iterations": iters,
    }


def min_comm_rate(
    target: CqNetworkState,
    opts: SearchOptions | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> RegionResult:
    """Best-found min I(X;U): the communication rate with unlimited shared randomness.

    Also reports the shared-randomness rate I(U;B|X) sufficient at the argmin.
    """
    if target.topology is not Topology.TWO_NODE:
        raise TopologyMismatch("min_comm_rate needs a two-node target")
    opts = opts or SearchOptions()
    candidates, iters = _cq_pool(target, "ixu", opts)
    winner, feasible = _best(candidates, 0, tolerances.tau_feas)
    diag = _pool_diagnostics(candidates, feasible, iters, opts)
    if winner is None:
        return RegionResult(target.topology, "min I(X;U)", None, None, UNKNOWN, diagnostics=diag)
    return RegionResult(
        target.topology,
        "min I(X;U)",
        winner.values[0],
        _make_extension(target, winner),
        FEASIBLE,
        r0_sufficient=max(winner.values[1] - winner.values[0], 0.0),
        diagnostics=diag,
    )


def min_no_cr_rate(
    target: CqNetworkState,
    opts: SearchOptions | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> RegionResult:
    """Best-found min I(XB;U): the description rate without shared randomness."""
    if target.topology is not Topology.TWO_NODE:
        raise TopologyMismatch("min_no_cr_rate needs a two-node target")
    opts = opts or SearchOptions()
    candidates, iters = _cq_pool(target, "ixbu", opts)
    winner, feasible = _best(candidates, 1, tolerances.tau_feas)
    diag = _pool_diagnostics(candidates, feasible, iters, opts)
    if winner is None:
        return RegionResult(target.topology, "min I(XB;U)", None, None, UNKNOWN, diagnostics=diag)
    return RegionResult(
        target.topology,
        "min I(XB;U)",
        winner.values[1],
        _make_extension(target, winner),
        FEASIBLE,
        diagnostics=diag,
    )


def _boundary_from_pool(feasible, r0_grid, variant):
    r1_values = []
    for r0 in r0_grid:
        if variant == "proof":
            best = min(max(c.values[0], c.values[1] - r0) for c in feasible)
        else:
            eligible = [c for c in feasible if c.values[0] <= r0 + 1e-12]
            best = (
                min(max(0.0, c.values[1] - r0) for c in eligible) if eligible else math.inf
            )
        r1_values.append(max(best, 0.0) if best != math.inf else math.inf)
    return r1_values


def trace_two_node_region(
    target: CqNetworkState,
    r0_grid,
    opts: SearchOptions | None = None,
    variant: str = "proof",
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> RegionBoundary:
    """Minimal R1 over the grid of R0 values.

    ``variant='proof'`` uses the proof-consistent constraint set
    {R1 >= I(X;U), R0+R1 >= I(XB;U)}; ``variant='printed'`` uses the
    as-printed set {R0 >= I(X;U), R0+R1 >= I(XB;U)}.  Neither is chosen
    silently: the variant is echoed in the result.
    """
    if variant not in ("proof", "printed"):
        raise ValueError(f"unknown region variant {variant!r}")
    if target.topology is not Topology.TWO_NODE:
        raise TopologyMismatch("trace_two_node_region needs a two-node target")
    opts = opts or SearchOptions()
    cand_a, it_a = _cq_pool(target, "ixu", opts)
    cand_b, it_b = _cq_pool(target, "ixbu", opts)
    candidates = cand_a + cand_b
    feasible = [c for c in candidates if c.residual <= tolerances.tau_feas]
    diag = _pool_diagnostics(candidates, feasible, it_a + it_b, opts)
    grid = [float(r) for r in r0_grid]
    if not feasible:
        return RegionBoundary(
            target.topology, variant, grid, [math.inf] * len(grid), UNKNOWN, diagnostics=diag
        )
    return RegionBoundary(
        target.topology,
        variant,
        grid,
        _boundary_from_pool(feasible, grid, variant),
        FEASIBLE,
        diagnostics=diag,
    )


# --- no-communication topology ----------------------------------------------


def _nc_arrays(target: CqNetworkState):
    dims = [d for _, d in target.quantum_labels]
    return target.conditionals, dims


def _nc_objective(p_u: np.ndarray, factors, omega) -> float:
    products = _per_u_products(factors)
    mix = np.einsum("u,uij->ij", p_u, products)
    h_mix = _entropy_stack(mix[None])[0]
    h_cond = sum(float(np.dot(p_u, _entropy_stack(stack))) for stack in factors)
    return max(float(h_mix - h_cond), 0.0)


def _nc_residual(p_u, factors, omega) -> float:
    mix = np.einsum("u,uij->ij", p_u, _per_u_products(factors))
    return qstate.trace_distance_matrices(mix, omega)


def _nc_loss(p_u, factors, omega, lam) -> float:
    mix = np.einsum("u,uij->ij", p_u, _per_u_products(factors))
    pen = float(np.sum(np.abs(mix - omega) ** 2).real)
    return _nc_objective(p_u, factors, omega) + lam * pen


def _nc_p_step(p_u, factors, omega, lam, step, tries=4):
    products = _per_u_products(factors)
    mix = np.einsum("u,uij->ij", p_u, products)
    c = 1.0 / _LN2
    kernel = -(_log2_matrix(mix) + c * np.eye(mix.shape[-1]))
    grad = np.einsum("ij,uji->u", kernel, products).real
    grad -= sum(_entropy_stack(stack) for stack in factors)
    grad += lam * 2.0 * np.einsum("ij,uji->u", mix - omega, products).real
    grad -= grad.mean()
    scale = np.max(np.abs(grad))
    if scale == 0.0:
        return p_u
    base = _nc_loss(p_u, factors, omega, lam)
    eta = step / scale
    for _ in range(tries):
        cand = p_u * np.exp(-eta * grad)
        cand = cand / cand.sum()
        if _nc_loss(cand, factors, omega, lam) <= base + 1e-12:
            return cand
        eta *= 0.5
    return p_u


def _nc_factor_gradients(p_u, factors, omega, lam):
    products = _per_u_products(factors)
    mix = np.einsum("u,uij->ij", p_u, products)
    c = 1.0 / _LN2
    eye = np.eye(mix.shape[-1])
    base = -(_log2_matrix(mix) + c * eye) + lam * 2.0 * (mix - omega)
    dims = [f.shape[-1] for f in factors]
    view = base.reshape(dims + dims)
    grads = []
    letters = "abcdef"
    bra = [letters[k] for k in range(len(dims))]
    ket = [letters[k].upper() for k in range(len(dims))]
    for r, stack in enumerate(factors):
        # contract the full gradient against the other registers' factors per u
        operands = [view]
        subscript = "".join(bra) + "".join(ket)
        for k in range(len(factors)):
            if k != r:
                operands.append(factors[k])
                subscript += f",u{ket[k]}{bra[k]}"
        subscript += f"->u{bra[r]}{ket[r]}"
        g_r = np.einsum(subscript, *operands)
        g_r = p_u[:, None, None] * g_r
        g_r += p_u[:, None, None] * (_log2_stack(stack) + c * np.eye(dims[r]))
        grads.append(g_r)
    return grads


def _nc_theta_descent(p_u, a_factors, omega, lam, step, steps, tries=3):
    a_factors = [a.copy() for a in a_factors]
    for _ in range(steps):
        factors = tuple(_theta_from_a(a) for a in a_factors)
        base = _nc_loss(p_u, factors, omega, lam)
        grads = _nc_factor_gradients(p_u, factors, omega, lam)
        a_grads = [_a_gradient(a, f, g) for a, f, g in zip(a_factors, factors, grads)]
        scale = max(float(np.max(np.abs(g))) for g in a_grads)
        if scale == 0.0:
            break
        eta = step / scale
        improved = False
        for _ in range(tries):
            trial = [a - eta * g for a, g in zip(a_factors, a_grads)]
            if _nc_loss(p_u, tuple(_theta_from_a(a) for a in trial), omega, lam) <= base + 1e-12:
                a_factors = trial
                improved = True
                break
            eta *= 0.5
        if not improved:
            break
    return a_factors


def _nc_repair(p_u, factors, omega):
    variants = [factors]
    if _is_classical(omega[None]):
        variants.append(tuple(_pinch_diagonal(f) for f in factors))
    best = None
    for fac in variants:
        products = _per_u_products(fac)
        columns = _stack_to_real_columns(products)
        rhs = np.concatenate([omega.reshape(-1).real, omega.reshape(-1).imag])
        new_p = _nnls_weights(columns, rhs, 1.0)
        residual = _nc_residual(new_p, fac, omega)
        if best is None or residual < best[2]:
            best = (new_p, fac, residual)
    return best


def _nc_seeds(target: CqNetworkState):
    omega, dims = _nc_arrays(target)
    seeds = []
    full = qstate.DensityOperator(omega.copy(), target.quantum_labels)
    marginals = [qstate.partial_trace(full, (name,)).matrix for name, _ in target.quantum_labels]
    seeds.append((np.ones(1), tuple(m[None] for m in marginals)))
    if _is_classical(omega[None]):
        diag = np.diagonal(omega).real
        atoms = [tuple(np.unravel_index(i, dims)) for i in np.flatnonzero(diag > 1e-14)]
        p_u = np.array([diag[np.ravel_multi_index(a, dims)] for a in atoms])
        p_u = p_u / p_u.sum()
        stacks = []
        for r, d in enumerate(dims):
            stacks.append(
                np.stack([np.diag(qstate.basis_ket(a[r], d)).astype(complex) for a in atoms])
            )
        seeds.append((p_u, tuple(stacks)))
    return seeds


def nc_screen_ppt(target: CqNetworkState, tolerances: Tolerances = DEFAULT_TOLERANCES):
    """PPT on all three bipartitions; a failure certifies entanglement."""
    full = qstate.DensityOperator(target.conditionals.copy(), target.quantum_labels)
    names = [name for name, _ in target.quantum_labels]
    results = {}
    for name in names:
        rest = tuple(n for n in names if n != name)
        cut = RegisterCut((name,), rest)
        results[f"{name}|{''.join(rest)}"] = qstate.ppt_check(full, cut, tolerances)
    return results


def nc_capacity(
    target: CqNetworkState,
    opts: SearchOptions | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> RegionResult:
    """Best-found inf I(U;ABC); +infinity (as a status) for entangled targets.

    The PPT screen runs first on all three bipartitions: any failure certifies
    entanglement and hence an empty feasible set.  PPT is only necessary for
    separability above 2x3, so a passing screen with no feasible decomposition
    found within budget reports UNKNOWN.
    """
    if target.topology is not Topology.NO_COMM:
        raise TopologyMismatch("nc_capacity needs a no-communication target")
    opts = opts or SearchOptions()
    ppt = nc_screen_ppt(target, tolerances)
    for cut_name, res in ppt.items():
        if not res.passed:
            return RegionResult(
                target.topology,
                "inf I(U;ABC)",
                None,
                None,
                INFEASIBLE_ENTANGLED,
                ppt_certificate=(cut_name, res.min_eigenvalue),
                diagnostics={"ppt": {k: v.min_eigenvalue for k, v in ppt.items()}},
            )
    omega, dims = _nc_arrays(target)
    candidates = []
    iters = 0

    def add(p_u, factors, order):
        new_p, fac, residual = _nc_repair(p_u, factors, omega)
        candidates.append(
            _Candidate(new_p, fac, residual, (_nc_objective(new_p, fac, omega),), order)
        )
        raw_res = _nc_residual(p_u, factors, omega)
        if raw_res < residual:
            candidates.append(
                _Candidate(p_u, factors, raw_res, (_nc_objective(p_u, factors, omega),), order)
            )

    for k, (p_u, factors) in enumerate(_nc_seeds(target)):
        add(p_u, factors, (0, k))
    for layer in _u_layers(target, opts):
        for restart in range(opts.restarts):
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence(opts.seed, spawn_key=(layer, restart)))
            )
            p_u = rng.dirichlet(np.ones(layer))
            a_factors = [
                (rng.standard_normal((layer, d, d)) + 1j * rng.standard_normal((layer, d, d)))
                / math.sqrt(2.0)
                for d in dims
            ]
            lam = opts.penalty_init
            for _ in range(opts.outer_iters):
                a_factors = _nc_theta_descent(
                    p_u, a_factors, omega, lam, opts.step_theta, opts.theta_steps
                )
                factors = tuple(_theta_from_a(a) for a in a_factors)
                for _ in range(opts.w_steps):
                    p_u = _nc_p_step(p_u, factors, omega, lam, opts.step_w)
                lam = min(lam * opts.penalty_growth, opts.penalty_max)
                iters += 1
            add(p_u, tuple(_theta_from_a(a) for a in a_factors), (layer, restart + 1))

    winner, feasible = _best(candidates, 0, tolerances.tau_feas)
    diag = _pool_diagnostics(candidates, feasible, iters, opts)
    diag["ppt"] = {k: v.min_eigenvalue for k, v in ppt.items()}
    if winner is None:
        return RegionResult(target.topology, "inf I(U;ABC)", None, None, UNKNOWN, diagnostics=diag)
    return RegionResult(
        target.topology,
        "inf I(U;ABC)",
        winner.values[0],
        _make_extension(target, winner),
        FEASIBLE,
        diagnostics=diag,
    )


# --- broadcast topology -------------------------------------------------------


def broadcast_no_cr_rate(
    target: CqNetworkState,
    opts: SearchOptions | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> RegionResult:
    """Best-found min I(XB1B2;U) over broadcast extensions (sum-rate corner)."""
    if target.topology is not Topology.BROADCAST:
        raise TopologyMismatch("broadcast_no_cr_rate needs a broadcast target")
    opts = opts or SearchOptions()
    for name, res in broadcast_screen_ppt(target, tolerances).items():
        if not res.passed:
            return RegionResult(
                target.topology,
                "min I(XB1B2;U)",
                None,
                None,
                INFEASIBLE_ENTANGLED,
                ppt_certificate=(name, res.min_eigenvalue),
            )
    candidates, iters = _cq_pool(target, "ixbu", opts)
    winner, feasible = _best(candidates, 1, tolerances.tau_feas)
    diag = _pool_diagnostics(candidates, feasible, iters, opts)
    if winner is None:
        return RegionResult(target.topology, "min I(XB1B2;U)", None, None, UNKNOWN, diagnostics=diag)
    return RegionResult(
        target.topology,
        "min I(XB1B2;U)",
        winner.values[1],
        _make_extension(target, winner),
        FEASIBLE,
        diagnostics=diag,
    )


def broadcast_screen_ppt(target: CqNetworkState, tolerances: Tolerances = DEFAULT_TOLERANCES):
    """PPT across B1:B2 of every conditional and of the average state."""
    results = {}
    cut = RegisterCut(("B1",), ("B2",))
    for x in range(target.alphabet_size):
        op = qstate.DensityOperator(target.conditionals[x].copy(), target.quantum_labels)
        results[f"conditional[{x}]"] = qstate.ppt_check(op, cut, tolerances)
    avg = np.einsum("x,xij->ij", target.pmf, target.conditionals)
    results["average"] = qstate.ppt_check(
        qstate.DensityOperator(avg, target.quantum_labels), cut, tolerances
    )
    return results


def broadcast_region(
    target: CqNetworkState,
    r0_grid,
    opts: SearchOptions | None = None,
    variant: str = "proof",
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> RegionBoundary:
    """Boundary of the broadcast region over an R0 grid, after a PPT prescreen."""
    if variant not in ("proof", "printed"):
        raise ValueError(f"unknown region variant {variant!r}")
    if target.topology is not Topology.BROADCAST:
        raise TopologyMismatch("broadcast_region needs a broadcast target")
    opts = opts or SearchOptions()
    grid = [float(r) for r in r0_grid]
    ppt = broadcast_screen_ppt(target, tolerances)
    ppt_diag = {k: v.min_eigenvalue for k, v in ppt.items()}
    for name, res in ppt.items():
        if not res.passed:
            return RegionBoundary(
                target.topology,
                variant,
                grid,
                [math.inf] * len(grid),
                INFEASIBLE_ENTANGLED,
                ppt_certificate=(name, res.min_eigenvalue),
                diagnostics={"ppt": ppt_diag},
            )
    cand_a, it_a = _cq_pool(target, "ixu", opts)
    cand_b, it_b = _cq_pool(target, "ixbu", opts)
    candidates = cand_a + cand_b
    feasible = [c for c in candidates if c.residual <= tolerances.tau_feas]
    diag = _pool_diagnostics(candidates, feasible, it_a + it_b, opts)
    diag["ppt"] = ppt_diag
    if not feasible:
        return RegionBoundary(
            target.topology, variant, grid, [math.inf] * len(grid), UNKNOWN, diagnostics=diag
        )
    return RegionBoundary(
        target.topology,
        variant,
        grid,
        _boundary_from_pool(feasible, grid, variant),
        FEASIBLE,
        diagnostics=diag,
    )


# --- brute-force oracle -------------------------------------------------------


def _classical_table(target: CqNetworkState):
    """Joint classical table and register dims; requires a diagonal target."""
    if target.topology is Topology.NO_COMM:
        if not _is_classical(target.conditionals[None]):
            raise ValueError("oracle needs a fully classical target")
        dims = [d for _, d in target.quantum_labels]
        return np.diagonal(target.conditionals).real.reshape(dims), dims, None
    if not _is_classical(target.conditionals):
        raise ValueError("oracle needs a fully classical target")
    diag = np.diagonal(target.conditionals, axis1=1, axis2=2).real
    if target.topology is Topology.TWO_NODE:
        dims = [target.alphabet_size, diag.shape[1]]
        table = target.pmf[:, None] * diag
        return table.reshape(dims), dims, 0
    d1 = target.quantum_labels[0][1]
    d2 = target.quantum_labels[1][1]
    dims = [target.alphabet_size, d1, d2]
    table = (target.pmf[:, None] * diag).reshape(dims)
    return table, dims, 0


def _compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``total``."""
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    bars = np.array(
        list(itertools.combinations(range(total + parts - 1), parts - 1)), dtype=np.int64
    )
    padded = np.hstack(
        [
            np.full((bars.shape[0], 1), -1, dtype=np.int64),
            bars,
            np.full((bars.shape[0], 1), total + parts - 1, dtype=np.int64),
        ]
    )
    return np.diff(padded, axis=1) - 1


def _mi_from_masses(masses: np.ndarray, t_atoms: np.ndarray) -> np.ndarray:
    """I(V;U) per point from masses (B, m, S); t_atoms is the V marginal."""
    p_u = masses.sum(axis=2)
    denom = p_u[:, :, None] * t_atoms[None, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(masses > 0, masses * np.log2(masses / denom), 0.0)
    return terms.sum(axis=(1, 2))


def _mi_input_from_masses(masses: np.ndarray, x_of_atom: np.ndarray, p_x: np.ndarray) -> np.ndarray:
    num_x = p_x.size
    indicator = np.zeros((masses.shape[2], num_x))
    indicator[np.arange(masses.shape[2]), x_of_atom] = 1.0
    mx = masses @ indicator  # (B, m, |X|)
    p_u = masses.sum(axis=2)
    denom = p_u[:, :, None] * p_x[None, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(mx > 0, mx * np.log2(mx / denom), 0.0)
    return terms.sum(axis=(1, 2))


def _ci_feasible(masses: np.ndarray, atoms: np.ndarray, dims, ci_tol: float) -> np.ndarray:
    """Exact conditional-independence filter per scanned point.

    A point passes iff, for every u with positive mass, the conditional
    distribution over the classical configuration factorizes across registers
    (checked at the support atoms plus a total-mass check that rules out
    leakage off the support).
    """
    b, m, s = masses.shape
    p_u = masses.sum(axis=2)
    safe = np.where(p_u > 0, p_u, 1.0)
    cond = masses / safe[:, :, None]
    prod = np.ones_like(cond)
    for r in range(len(dims)):
        indicator = np.zeros((s, dims[r]))
        indicator[np.arange(s), atoms[:, r]] = 1.0
        marg = cond @ indicator  # (B, m, d_r)
        prod = prod * np.take(marg, atoms[:, r], axis=2)
    ok_atoms = np.all(np.abs(cond - prod) <= ci_tol, axis=2)
    ok_mass = np.abs(prod.sum(axis=2) - 1.0) <= ci_tol * s
    ok = (ok_atoms & ok_mass) | (p_u <= 0)
    return np.all(ok, axis=1)


def brute_force_oracle(
    target: CqNetworkState,
    objective: str = "joint",
    max_u: int = 4,
    grid_step: float = 1.0 / 64,
    point_budget: int = 5_000_000,
    ci_tol: float = 1e-9,
    chunk: int = 1 << 16,
) -> float:
    """Exhaustive grid scan for the minimal objective over classical extensions.

    Scans conditional PMFs p(u | v) on a 1/2^k grid, where v ranges over the
    support of the classical configuration, keeping exactly the points whose
    induced joint is conditionally independent across registers (each such
    point IS a feasible extension with the exact target marginal).  Layers
    |U| = 1..max_u run in order; two-atom supports collapse to a provable
    closed form, so the scan stays exhaustive without enumerating the
    (astronomically many) equal-valued points.  Deterministic.

    objective: "joint" minimizes I(V;U) over the whole configuration
    (description rate / no-communication objective); "input" minimizes
    I(X;U) against the first register (two-node and broadcast only).
    Raises BudgetExceeded (carrying the best value so far) if a layer's scan
    would overrun ``point_budget``.
    """
    inv = 1.0 / grid_step
    n_grid = int(round(inv))
    if abs(inv - n_grid) > 1e-9 or n_grid & (n_grid - 1):
        raise ValueError(f"grid_step must be 1/2^k, got {grid_step}")
    if max_u < 1:
        raise ValueError("max_u must be at least 1")
    table, dims, x_register = _classical_table(target)
    if objective == "input" and x_register is None:
        raise ValueError("'input' objective needs a classical input register")
    if objective not in ("joint", "input"):
        raise ValueError(f"unknown objective {objective!r}")

    flat = table.reshape(-1)
    support = np.flatnonzero(flat > 1e-14)
    atoms = np.stack(np.unravel_index(support, dims), axis=1)  # (S, n_regs)
    t_atoms = flat[support]
    s = atoms.shape[0]
    if s == 1:
        return 0.0
    x_of_atom = atoms[:, 0] if x_register is not None else None
    p_x = None
    if x_of_atom is not None:
        p_x = np.zeros(dims[0])
        np.add.at(p_x, x_of_atom, t_atoms)

    # |U| = 1: feasible iff the table is a product distribution; objective 0.
    marg_prod = np.ones(s)
    for r in range(len(dims)):
        marg_r = np.zeros(dims[r])
        np.add.at(marg_r, atoms[:, r], t_atoms)
        marg_prod = marg_prod * marg_r[atoms[:, r]]
    if np.max(np.abs(marg_prod - t_atoms)) <= ci_tol and abs(marg_prod.sum() - 1.0) <= ci_tol * s:
        return 0.0
    if max_u == 1:
        return math.inf

    if s == 2:
        # Two support atoms differing in >= 2 registers (a 1-register difference
        # would have made the table a product above): conditional independence
        # forces every u onto a single atom, so U determines V at every feasible
        # point and the objective is the same constant on all of them.
        if objective == "joint":
            return _entropy_pmf(t_atoms)
        return _entropy_pmf(p_x)

    best = math.inf
    spent = 0
    for m in range(2, max_u + 1):
        rows = _compositions(n_grid, m).astype(float) / n_grid  # (R, m)
        r_count = rows.shape[0]
        layer_points = r_count**s
        if spent + layer_points > point_budget:
            raise BudgetExceeded(
                f"layer |U|={m} needs {layer_points} points with {point_budget - spent} left",
                best_value=None if math.isinf(best) else best,
            )
        spent += layer_points
        for start in range(0, layer_points, chunk):
            idx = np.arange(start, min(start + chunk, layer_points))
            multi = np.stack(np.unravel_index(idx, (r_count,) * s), axis=1)  # (B, S)
            q = rows[multi]  # (B, S, m)
            masses = np.transpose(q, (0, 2, 1)) * t_atoms[None, None, :]  # (B, m, S)
            ok = _ci_feasible(masses, atoms, dims, ci_tol)
            if not np.any(ok):
                continue
            masses_ok = masses[ok]
            if objective == "joint":
                vals = _mi_from_masses(masses_ok, t_atoms)
            else:
                vals = _mi_input_from_masses(masses_ok, x_of_atom, p_x)
            best = min(best, float(vals.min()))
            if best <= 1e-12:
                return max(best, 0.0)
    return best
