"""Random codebooks and quantum soft covering.

A rate-R codebook drawn i.i.d. from the source PMF induces a uniform mixture
of tensor-product states; once the rate exceeds the ensemble's mutual
information the mixture approaches the i.i.d. average state in trace norm.
This module draws codebooks reproducibly, builds the induced mixture exactly,
and estimates the expected gap by Monte Carlo over codebooks.

RNG contract: PCG64 seeded through ``numpy.random.SeedSequence``.  Codeword
(i, j) of a codebook with master seed s uses SeedSequence(s, spawn_key=(j, i));
trial t at blocklength n derives its codebook seed via spawn_key=(n, t).
Trials therefore parallelize without sequence coupling, and regeneration from
(seed, shape, pmf) is bit-identical.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances, default_caps
from .errors import DimensionCap, DimMismatch, ShapeOverflow
from .qstate import entropy_of_spectrum, trace_distance_matrices


@dataclass(frozen=True)
class Codebook:
    """Indexed family u^n(i, j): ``codewords[j, i]`` is the n-symbol word."""

    n: int
    codewords: np.ndarray  # (num_bins, bin_size, n) integer symbols
    seed: int
    source_pmf: np.ndarray

    def __post_init__(self):
        self.codewords.flags.writeable = False
        self.source_pmf.flags.writeable = False

    @property
    def num_bins(self) -> int:
        return int(self.codewords.shape[0])

    @property
    def bin_size(self) -> int:
        return int(self.codewords.shape[1])


@dataclass(frozen=True)
class CEnsemble:
    """Classical-quantum ensemble: PMF p(x) with a conditional state per symbol."""

    pmf: np.ndarray
    conditionals: np.ndarray  # (|X|, d, d)

    def __post_init__(self):
        self.pmf.flags.writeable = False
        self.conditionals.flags.writeable = False

    @property
    def dim(self) -> int:
        return int(self.conditionals.shape[-1])

    @property
    def average_state(self) -> np.ndarray:
        return np.einsum("x,xij->ij", self.pmf, self.conditionals)


def make_ensemble(pmf, conditionals, tolerances: Tolerances = DEFAULT_TOLERANCES) -> CEnsemble:
    p = np.asarray(pmf, dtype=float)
    conds = np.asarray(conditionals, dtype=complex)
    if p.ndim != 1 or conds.ndim != 3 or conds.shape[0] != p.size:
        raise ValueError("ensemble needs one conditional per PMF entry")
    if abs(p.sum() - 1.0) > tolerances.tau_tr or np.any(p < 0):
        raise ValueError(f"PMF sums to {p.sum():.12g} or has negative entries")
    if conds.shape[-1] != conds.shape[-2]:
        raise ValueError("conditionals must be square")
    return CEnsemble(p, conds)


def derive_seed(master: int, *key: int) -> int:
    """Deterministic 64-bit sub-seed from a master seed and an integer key path."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def _codeword_rng(seed: int, j: int, i: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(j), int(i))))
    )


def codebook_size(n: int, rate: float) -> int:
    """ceil(2^{n rate}), exact when n*rate lands on an integer."""
    exponent = n * rate
    nearest = round(exponent)
    if abs(exponent - nearest) < 1e-9:
        return 1 << int(nearest) if nearest >= 0 else 1
    return int(math.ceil(2.0**exponent))


def draw_codebook(pmf, n, num_bins, bin_size, seed, caps=None) -> Codebook:
    """i.i.d. codebook; codeword (i, j) is reproducible from (seed, j, i) alone."""
    caps = caps if caps is not None else default_caps()
    p = np.asarray(pmf, dtype=float)
    if abs(p.sum() - 1.0) > 1e-9 or np.any(p < 0):
        raise ValueError("source PMF must be a distribution")
    total = int(num_bins) * int(bin_size) * int(n)
    if total > caps.codebook_symbols:
        raise ShapeOverflow(f"{total} symbols exceeds cap {caps.codebook_symbols}")
    alphabet = p.size
    # cumulative-inverse sampling keeps each codeword a pure function of its sub-seed
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    words = np.empty((num_bins, bin_size, n), dtype=np.int64)
    for j in range(num_bins):
        for i in range(bin_size):
            rng = _codeword_rng(seed, j, i)
            words[j, i] = np.searchsorted(cdf, rng.random(n), side="right")
    words = np.minimum(words, alphabet - 1)
    return Codebook(int(n), words, int(seed), p.copy())


def _factorize_conditionals(conds: np.ndarray) -> tuple[list[np.ndarray], list[int]]:
    """Per-symbol factors L with rho = L L^dag; rank-deficient states shrink L."""
    factors = []
    ranks = []
    for x in range(conds.shape[0]):
        vals, vecs = np.linalg.eigh(0.5 * (conds[x] + conds[x].conj().T))
        keep = vals > 1e-12
        factors.append(vecs[:, keep] * np.sqrt(vals[keep]))
        ranks.append(int(keep.sum()))
    return factors, ranks


def _kron_chain(mats) -> np.ndarray:
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def mixture_state(cb: Codebook, ens: CEnsemble, caps=None) -> np.ndarray:
    """Uniform mixture over codewords of the tensor-product conditionals.

    Exact (no sampling).  Returns the dim^n density matrix.
    """
    caps = caps if caps is not None else default_caps()
    if ens.pmf.size < int(cb.codewords.max()) + 1:
        raise DimMismatch("codebook alphabet larger than ensemble alphabet")
    d = ens.dim
    dim = d**cb.n
    if dim > caps.tensor_dim:
        raise DimensionCap(f"dim {d}^{cb.n} = {dim} exceeds cap {caps.tensor_dim}")
    words, counts = np.unique(cb.codewords.reshape(-1, cb.n), axis=0, return_counts=True)
    total = cb.num_bins * cb.bin_size

    factors, ranks = _factorize_conditionals(ens.conditionals)
    rank_arr = np.asarray(ranks, dtype=np.int64)
    cols = int(np.sum(np.prod(rank_arr[words], axis=1)))
    if cols <= max(4 * dim, 1024):
        # Gram form: mixture = F F^dag with one scaled column block per codeword
        blocks = []
        for word, count in zip(words, counts):
            block = _kron_chain([factors[x] for x in word])
            blocks.append(block * math.sqrt(count / total))
        f = np.hstack(blocks)
        mix = f @ f.conj().T
    else:
        mix = np.zeros((dim, dim), dtype=complex)
        for word, count in zip(words, counts):
            mix += (count / total) * _kron_chain([ens.conditionals[x] for x in word])
    return 0.5 * (mix + mix.conj().T)


def holevo_information(ens: CEnsemble, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """I(X;A) of the ensemble: H(avg) - sum_x p(x) H(rho^x).  In bits."""
    avg = ens.average_state
    h_avg = entropy_of_spectrum(np.linalg.eigvalsh(0.5 * (avg + avg.conj().T)), tolerances.tau_psd)
    h_cond = 0.0
    for x in range(ens.pmf.size):
        if ens.pmf[x] > 0:
            vals = np.linalg.eigvalsh(0.5 * (ens.conditionals[x] + ens.conditionals[x].conj().T))
            h_cond += ens.pmf[x] * entropy_of_spectrum(vals, tolerances.tau_psd)
    return max(h_avg - h_cond, 0.0)


def resolvability_gap(cb: Codebook, ens: CEnsemble, caps=None) -> float:
    """Trace distance between the i.i.d. average state and the codebook mixture."""
    mix = mixture_state(cb, ens, caps)
    ref = _kron_chain([ens.average_state] * cb.n)
    return trace_distance_matrices(ref, mix)


@dataclass(frozen=True)
class CurveRow:
    n: int
    rate: float
    trials: int
    mean_gap: float
    std_err: float
    mutual_info_ref: float


def _mean_and_stderr(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return mean, stderr


def map_trials(fn, trials: int, workers: int = 1) -> list:
    """Run fn(t) for t in range(trials); results always in trial-index order."""
    if workers <= 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(trials)))


def resolvability_curve(
    ens: CEnsemble,
    rate: float,
    n_list,
    trials: int,
    seed: int,
    caps=None,
    workers: int = 1,
) -> list[CurveRow]:
    """Monte Carlo mean of the resolvability gap over independent codebooks.

    The gap itself is computed exactly per codebook; only the expectation over
    codebooks is sampled.
    """
    if trials < 2:
        raise ValueError("need at least 2 trials for a standard error")
    caps = caps if caps is not None else default_caps()
    mi = holevo_information(ens)
    rows = []
    for n in n_list:
        size = codebook_size(n, rate)

        def one_trial(t, n=n, size=size):
            cb = draw_codebook(ens.pmf, n, 1, size, derive_seed(seed, n, t), caps)
            return resolvability_gap(cb, ens, caps)

        gaps = map_trials(one_trial, trials, workers)
        mean, stderr = _mean_and_stderr(gaps)
        rows.append(CurveRow(int(n), float(rate), int(trials), mean, stderr, mi))
    return rows
