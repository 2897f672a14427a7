"""
Exhaustive-search reference detectors.

Exact-Log-MAP and Max-Log-MAP evaluate every candidate transmit vector; the
true-posterior oracle returns exact Bayesian symbol marginals.  All of them
cost M^N_t per channel use and are guarded against runaway sizes.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from receiver.modem import (
    Constellation,
    LlrFrame,
    LlrRole,
    SymbolProbMatrix,
)
from receiver.numerics import LogSum, OpCounter, max_star_reduce

MAX_CANDIDATES = 1 << 20

# Upper bound on (uses x candidates x bits) held in memory at once
_CHUNK_ELEMENTS = 1 << 20


class CandidateLimitError(ValueError):
    """M^N_t exceeds the enumeration guard."""


@dataclass(frozen=True, eq=False)
class CandidateTable:
    indices: np.ndarray     # (K, N_t) point indices
    symbols: np.ndarray     # (K, N_t) complex
    bits: np.ndarray        # (K, N_t * M_b) signed

    @property
    def size(self) -> int:
        return len(self.indices)


@lru_cache(maxsize=16)
def build_candidate_table(c: Constellation, n_t: int) -> CandidateTable:
    """All M^N_t transmit vectors, in lexicographic index order."""
    size = c.order ** n_t
    if size > MAX_CANDIDATES:
        raise CandidateLimitError(f"{c} with {n_t} streams needs {size} candidates "
                                  f"(limit {MAX_CANDIDATES})")
    indices = np.stack(np.unravel_index(np.arange(size), (c.order,) * n_t), axis=-1)
    return CandidateTable(
        indices=indices,
        symbols=c.points[indices],
        bits=c.labels[indices].reshape(size, -1).astype(float),
    )


def _stack(y: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=complex)
    h = np.asarray(h, dtype=complex)
    if y.ndim == 1:
        y = y[None]
    if h.ndim == 2:
        h = np.broadcast_to(h, (y.shape[0],) + h.shape)
    if h.shape[:2] != y.shape:
        raise ValueError(f"received shape {y.shape} does not match channel shape {h.shape}")
    return y, h


def log_likelihoods(y: np.ndarray, h: np.ndarray, sigma2: float, table: CandidateTable) -> np.ndarray:
    """-||y - H s||^2 / (2 sigma^2) for every candidate, shape (uses, K)."""
    hs = np.einsum("urk,ck->ucr", h, table.symbols)
    dist = np.sum(np.abs(y[:, None, :] - hs) ** 2, axis=-1)
    return -dist / (2.0 * sigma2)


def map_llrs(y: np.ndarray, h: np.ndarray, sigma2: float, llr_a: LlrFrame | None,
             c: Constellation, mode: LogSum | str = LogSum.EXACT,
             counter: OpCounter | None = None) -> tuple[LlrFrame, LlrFrame]:
    """
    A-posteriori and extrinsic bit LLRs by candidate enumeration.

    Args:
        y: (N_r,) or (uses, N_r)
        h: (N_r, N_t) or (uses, N_r, N_t)
        llr_a: a-priori LLRs, antenna-major per use (None = all zero)
        mode: exact max-star folding or max-log

    Returns:
        (L_D, L_E); L_E excludes bit k's own prior from the metric of bit k
    """
    mode = LogSum(mode)
    y, h = _stack(y, h)
    uses, n_r = y.shape
    n_t = h.shape[-1]
    table = build_candidate_table(c, n_t)
    n_bits = n_t * c.bits_per_symbol

    if llr_a is None:
        la = np.zeros((uses, n_bits))
    else:
        if len(llr_a) != uses * n_bits:
            raise ValueError(f"a-priori frame length {len(llr_a)} != {uses * n_bits}")
        la = llr_a.values.reshape(uses, n_bits)

    plus = table.bits > 0
    ld = np.empty((uses, n_bits))
    le = np.empty((uses, n_bits))
    step = max(1, _CHUNK_ELEMENTS // (table.size * n_bits))

    for start in range(0, uses, step):
        sl = slice(start, start + step)
        metric = log_likelihoods(y[sl], h[sl], sigma2, table) + 0.5 * la[sl] @ table.bits.T
        full = np.broadcast_to(metric[..., None], metric.shape + (n_bits,))
        own = 0.5 * table.bits[None] * la[sl][:, None, :]
        excl = full - own

        ld[sl] = (max_star_reduce(np.where(plus, full, -np.inf), axis=1, mode=mode)
                  - max_star_reduce(np.where(plus, -np.inf, full), axis=1, mode=mode))
        le[sl] = (max_star_reduce(np.where(plus, excl, -np.inf), axis=1, mode=mode)
                  - max_star_reduce(np.where(plus, -np.inf, excl), axis=1, mode=mode))

        if counter is not None:
            # prior exclusion, then K folds per bit for each of L_D and L_E at 4 ops a fold
            counter.add("logsum", 9 * excl.size + 2 * ld[sl].size)

    if counter is not None:
        per_use = table.size * (4 * n_r * n_t + 6 * n_r + n_bits)
        counter.add("candidates", uses * per_use)

    return (
        LlrFrame(ld.reshape(-1), LlrRole.APOSTERIORI, c.bits_per_symbol, n_t),
        LlrFrame(le.reshape(-1), LlrRole.EXTRINSIC, c.bits_per_symbol, n_t),
    )


def exact_log_map(y, h, sigma2: float, llr_a: LlrFrame | None, c: Constellation,
                  counter: OpCounter | None = None) -> LlrFrame:
    return map_llrs(y, h, sigma2, llr_a, c, LogSum.EXACT, counter)[1]


def max_log_map(y, h, sigma2: float, llr_a: LlrFrame | None, c: Constellation,
                counter: OpCounter | None = None) -> LlrFrame:
    return map_llrs(y, h, sigma2, llr_a, c, LogSum.MAX_LOG, counter)[1]


def true_posterior_marginals(y: np.ndarray, h: np.ndarray, sigma2: float,
                             priors: SymbolProbMatrix | np.ndarray | None,
                             c: Constellation) -> SymbolProbMatrix:
    """
    Exact per-stream marginals of the joint posterior.

    Args:
        priors: (N_t, M) or (uses, N_t, M) symbol priors; None means uniform

    Returns:
        SymbolProbMatrix shaped (N_t, M) for a single use, else (uses, N_t, M)
    """
    single = np.asarray(y).ndim == 1
    y, h = _stack(y, h)
    uses = y.shape[0]
    n_t = h.shape[-1]
    table = build_candidate_table(c, n_t)

    if priors is None:
        prior = np.full((uses, n_t, c.order), 1.0 / c.order)
    else:
        prior = priors.probs if isinstance(priors, SymbolProbMatrix) else np.asarray(priors, dtype=float)
        prior = np.broadcast_to(prior, (uses, n_t, c.order))

    log_prior = np.log(np.maximum(prior, 1e-300))
    streams = np.arange(n_t)
    joint = log_likelihoods(y, h, sigma2, table)
    joint = joint + log_prior[:, streams, table.indices].sum(axis=-1)

    marg = np.empty((uses, n_t, c.order))
    for i in range(n_t):
        for m in range(c.order):
            hit = table.indices[:, i] == m
            marg[:, i, m] = np.logaddexp.reduce(joint[:, hit], axis=-1)

    out = SymbolProbMatrix.from_log(marg)
    return SymbolProbMatrix(out.probs[0]) if single else out
