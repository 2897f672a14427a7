"""
Log-domain PDA soft detector with improper-Gaussian interference modelling.

For each transmit stream i the remaining streams plus noise are replaced by
one Gaussian whose mean, covariance and pseudo-covariance come from the
current symbol probabilities.  The row update uses only the other rows, so
the stream's own prior never enters its output: what comes out is a
normalized symbol likelihood, and the bit LLRs derived from it are already
extrinsic.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from receiver.modem import (
    Constellation,
    LlrFrame,
    LlrRole,
    PROB_FLOOR,
    SymbolProbMatrix,
    apriori_llrs_to_symbol_probs,
    symbol_probs_to_bit_llrs,
)
from receiver.numerics import (
    LogSum,
    OpCounter,
    compose_covariance,
    low_rank_update,
    max_star_reduce,
    pd_inverse,
    quadratic_form,
    to_composite,
)


class Schedule(str, Enum):
    SERIAL = "serial"       # row i sees rows < i from the current sweep
    PARALLEL = "parallel"   # every row uses the previous sweep


@dataclass
class PdaConfig:
    inner_iterations: int = 0
    log_sum: LogSum = LogSum.EXACT
    schedule: Schedule = Schedule.SERIAL
    use_downdate_inverse: bool = False

    def __post_init__(self):
        self.log_sum = LogSum(self.log_sum)
        self.schedule = Schedule(self.schedule)
        if self.log_sum is LogSum.APPROX:
            raise ValueError("PDA supports exact or max-log normalization only")
        if self.inner_iterations < 0:
            raise ValueError(f"inner_iterations must be >= 0, got {self.inner_iterations}")


@dataclass
class PdaState:
    """
    Working state of one detect call over a stack of channel uses.

    probs/psi are (uses, N_t, M). sym_mean/sym_var/sym_pseudo hold the symbol
    moments the next row update builds its interference model from: under
    the serial schedule they follow every row update, under the parallel one
    they are refreshed once per sweep.
    """
    probs: np.ndarray
    psi: np.ndarray
    mean: np.ndarray            # (uses, N_t, N_r)
    cov: np.ndarray             # (uses, N_t, N_r, N_r), direct inverses only
    pseudo: np.ndarray          # (uses, N_t, N_r, N_r), direct inverses only
    sym_mean: np.ndarray | None = None
    sym_var: np.ndarray | None = None
    sym_pseudo: np.ndarray | None = None
    counter: OpCounter = field(default_factory=OpCounter)
    lam_total_inv: np.ndarray | None = None
    sweeps: int = 0

    @property
    def matrix(self) -> SymbolProbMatrix:
        return SymbolProbMatrix(self.probs.copy())


def symbol_moments(row: np.ndarray, c: Constellation,
                   counter: OpCounter | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Mean, variance and pseudo-variance of a symbol under a probability row.

    `row` may carry leading dims; the last axis runs over the M points.
    """
    row = np.asarray(row, dtype=float)
    mean = row @ c.points
    dev = c.points - mean[..., None]
    var = np.maximum(np.sum(row * np.abs(dev) ** 2, axis=-1), 0.0)
    pseudo = np.sum(row * dev * dev, axis=-1)

    if counter is not None:
        # per point: mean 2, deviation 2, weighted |dev|^2 4, weighted dev^2 6
        counter.add("moments", 14 * row.size)
    return mean, var, pseudo


def _interference_mean(i: int, sym_mean: np.ndarray, h: np.ndarray,
                       counter: OpCounter | None = None) -> np.ndarray:
    others = [k for k in range(h.shape[-1]) if k != i]
    h_k = h[..., :, others]
    mu = np.einsum("...rk,...k->...r", h_k, sym_mean[..., others])
    if counter is not None:
        counter.add("interference", 4 * h_k.size)
    return mu


def _interference_moments(i: int, sym_mean: np.ndarray, sym_var: np.ndarray,
                          sym_pseudo: np.ndarray, h: np.ndarray, sigma2: float,
                          counter: OpCounter | None = None):
    mu = _interference_mean(i, sym_mean, h, counter)
    others = [k for k in range(h.shape[-1]) if k != i]
    h_k = h[..., :, others]
    n_r = h.shape[-2]

    cov = np.einsum("...rk,...k,...sk->...rs", h_k, sym_var[..., others], h_k.conj())
    cov = cov + 2.0 * sigma2 * np.eye(n_r)
    pseudo = np.einsum("...rk,...k,...sk->...rs", h_k, sym_pseudo[..., others], h_k)

    if counter is not None:
        # outer products 12 N_r^2 and scaled columns 6 N_r per stream, plus the composite build
        uses = int(np.prod(h.shape[:-2], dtype=np.int64))
        counter.add("interference", 12 * h_k.size * n_r + 6 * h_k.size + uses * (n_r + 8 * n_r * n_r))
    return mu, cov, pseudo


def interference_stats(i: int, probs: np.ndarray, h: np.ndarray, sigma2: float,
                       c: Constellation) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gaussian model of everything except stream i.

    Args:
        i: stream index
        probs: (..., N_t, M) probability rows
        h: (..., N_r, N_t) channel
        sigma2: noise variance per real dimension

    Returns:
        (mu, cov, pseudo) with shapes (..., N_r), (..., N_r, N_r), (..., N_r, N_r)
    """
    mean, var, pseudo_var = symbol_moments(probs, c)
    return _interference_moments(i, mean, var, pseudo_var, h, sigma2)


def _total_inverse(sym_var: np.ndarray, sym_pseudo: np.ndarray, h: np.ndarray, sigma2: float,
                   counter: OpCounter | None = None) -> np.ndarray:
    n_r = h.shape[-2]
    cov = np.einsum("...rk,...k,...sk->...rs", h, sym_var, h.conj()) + 2.0 * sigma2 * np.eye(n_r)
    pseudo = np.einsum("...rk,...k,...sk->...rs", h, sym_pseudo, h)
    if counter is not None:
        uses = int(np.prod(h.shape[:-2], dtype=np.int64))
        counter.add("setup", 12 * h.size * n_r + 6 * h.size + uses * (n_r + 8 * n_r * n_r))
    return pd_inverse(compose_covariance(cov, pseudo), counter, category="setup")


def total_inverse(probs: np.ndarray, h: np.ndarray, sigma2: float, c: Constellation,
                  counter: OpCounter | None = None) -> np.ndarray:
    """Inverse composite covariance with every stream's contribution included."""
    _, var, pseudo_var = symbol_moments(probs, c)
    return _total_inverse(var, pseudo_var, h, sigma2, counter)


def refresh_moments(state: PdaState, c: Constellation):
    state.sym_mean, state.sym_var, state.sym_pseudo = symbol_moments(state.probs, c, state.counter)


def init_state(llr_a: LlrFrame | None, n_t: int, c: Constellation, uses: int, n_r: int,
               counter: OpCounter | None = None) -> PdaState:
    """Initial probabilities from the a-priori LLRs (uniform when none are given)."""
    if llr_a is None:
        probs = np.full((uses, n_t, c.order), 1.0 / c.order)
    else:
        if llr_a.n_streams != n_t or len(llr_a) != uses * n_t * c.bits_per_symbol:
            raise ValueError(f"a-priori frame of length {len(llr_a)} does not cover "
                             f"{uses} uses x {n_t} streams x {c.bits_per_symbol} bits")
        probs = apriori_llrs_to_symbol_probs(llr_a, c).probs.copy()

    state = PdaState(
        probs=probs,
        psi=np.log(probs),
        mean=np.zeros((uses, n_t, n_r), dtype=complex),
        cov=np.zeros((uses, n_t, n_r, n_r), dtype=complex),
        pseudo=np.zeros((uses, n_t, n_r, n_r), dtype=complex),
        counter=counter if counter is not None else OpCounter(),
    )
    refresh_moments(state, c)
    return state


def symbol_update(i: int, y: np.ndarray, h: np.ndarray, sigma2: float, state: PdaState,
                  config: PdaConfig, c: Constellation) -> np.ndarray:
    """
    Recompute row i of the probability matrix from the cached symbol moments.

    Returns:
        the new row, shape (uses, M)
    """
    counter = state.counter
    h_i = h[..., :, i]

    if config.use_downdate_inverse:
        mu = _interference_mean(i, state.sym_mean, h, counter)
        lam_inv = low_rank_update(state.lam_total_inv, h_i, state.sym_var[:, i],
                                  state.sym_pseudo[:, i], -1.0, counter)
    else:
        mu, cov, pseudo = _interference_moments(i, state.sym_mean, state.sym_var,
                                                state.sym_pseudo, h, sigma2, counter)
        state.cov[:, i], state.pseudo[:, i] = cov, pseudo
        lam_inv = pd_inverse(compose_covariance(cov, pseudo), counter)
    state.mean[:, i] = mu

    residual = y - mu
    w = residual[:, None, :] - c.points[None, :, None] * h_i[:, None, :]
    counter.add("residual", 2 * residual.size + 8 * w.size)
    beta = quadratic_form(to_composite(w), lam_inv[:, None], counter)

    shifted = beta - beta.max(axis=-1, keepdims=True)
    if config.log_sum is LogSum.MAX_LOG:
        psi = shifted
    else:
        psi = shifted - max_star_reduce(shifted, axis=-1, mode=config.log_sum)[..., None]

    row = np.maximum(np.exp(psi), PROB_FLOOR)
    row = row / row.sum(axis=-1, keepdims=True)
    counter.add("normalize", 6 * beta.size)

    if config.schedule is Schedule.SERIAL:
        mean, var, pseudo_var = symbol_moments(row, c, counter)
        state.sym_mean[:, i], state.sym_var[:, i], state.sym_pseudo[:, i] = mean, var, pseudo_var
        if config.use_downdate_inverse:
            # keep the running inverse in step with the new row
            state.lam_total_inv = low_rank_update(lam_inv, h_i, var, pseudo_var, 1.0, counter)

    state.psi[:, i] = psi
    state.probs[:, i] = row
    return row


def sweep(y: np.ndarray, h: np.ndarray, sigma2: float, state: PdaState,
          config: PdaConfig, c: Constellation) -> PdaState:
    """One pass over all streams."""
    n_t = h.shape[-1]
    parallel = config.schedule is Schedule.PARALLEL
    if parallel and state.sweeps > 0:
        refresh_moments(state, c)

    # the serial schedule carries its running inverse across sweeps
    if config.use_downdate_inverse and (parallel or state.lam_total_inv is None):
        state.lam_total_inv = _total_inverse(state.sym_var, state.sym_pseudo, h, sigma2, state.counter)

    for i in range(n_t):
        symbol_update(i, y, h, sigma2, state, config, c)

    state.sweeps += 1
    return state


def _as_stack(y: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    y = np.asarray(y, dtype=complex)
    h = np.asarray(h, dtype=complex)
    single = y.ndim == 1
    y2 = y[None] if single else y
    if h.ndim == 2:
        h = np.broadcast_to(h, (y2.shape[0],) + h.shape)
    if h.shape[0] != y2.shape[0] or h.shape[1] != y2.shape[1]:
        raise ValueError(f"received shape {y.shape} does not match channel shape {h.shape}")
    return y2, h, single



def detect(y: np.ndarray, h: np.ndarray, sigma2: float, llr_a: LlrFrame | None,
           config: PdaConfig, c: Constellation, counter: OpCounter | None = None,
           subtract_prior: bool = False) -> tuple[SymbolProbMatrix, LlrFrame]:
    """
    Soft detection of a single channel use or a stack of them.

    Args:
        y: received vectors, (N_r,) or (uses, N_r)
        h: channel, (N_r, N_t) or (uses, N_r, N_t)
        sigma2: noise variance per real dimension
        llr_a: a-priori bit LLRs, antenna-major per use (None = all zero)
        config: PDA settings
        c: constellation
        counter: optional op counter to accumulate into
        subtract_prior: return L_D - L_A instead of L_D

    Returns:
        (P, L_E): symbol probabilities shaped like the input and extrinsic bit LLRs
    """
    y2, h2, single = _as_stack(y, h)
    uses, n_r = y2.shape
    n_t = h2.shape[-1]

    state = init_state(llr_a, n_t, c, uses, n_r, counter)

    for _ in range(1 + config.inner_iterations):
        sweep(y2, h2, sigma2, state, config, c)

    probs = state.probs[0] if single else state.probs
    p = SymbolProbMatrix(probs.copy())
    llr = symbol_probs_to_bit_llrs(p, c, max_log=config.log_sum is LogSum.MAX_LOG)
    state.counter.add("llr", state.probs.size * c.bits_per_symbol)

    values = llr.values
    if subtract_prior and llr_a is not None:
        values = values - llr_a.values
    return p, LlrFrame(values, LlrRole.EXTRINSIC, c.bits_per_symbol, n_t)
