"""
Exact interference-plus-noise densities versus the PDA's Gaussian model.

Given s_i = a, each real component of y is a finite Gaussian mixture over the
other streams' symbols. The PDA replaces it with one Gaussian of the same
mean and variance; these helpers put both on a common grid.
"""

import logging
from datetime import datetime, timezone

import numpy as np
from scipy import stats

from harness.config import ExperimentConfig
from harness.metrics import MixtureDensity, RunReport, gaussian_priors, j_inverse
from harness.simulator import stream_rng
from receiver.channel import sample_channel
from receiver.map_detector import build_candidate_table
from receiver.modem import (
    Constellation,
    LlrFrame,
    LlrRole,
    apriori_llrs_to_symbol_probs,
    demap_bits,
)
from receiver.numerics import compose_covariance, to_composite
from receiver.pda_detector import interference_stats

log = logging.getLogger(__name__)

_MIXTURE_KEY = 5


def conditional_densities(h: np.ndarray, sigma2: float, probs: np.ndarray, c: Constellation,
                          stream: int, symbol: int, dimension: int,
                          grid: np.ndarray | None = None, points: int = 401) -> MixtureDensity:
    """
    Exact and Gaussian-approximated PDF of one component of [Re y; Im y].

    Args:
        h: (N_r, N_t) channel
        sigma2: noise variance per real dimension
        probs: (N_t, M) symbol probabilities of every stream; row `stream` is unused
        stream: the conditioned stream i
        symbol: point index of a in the constellation
        dimension: component of the composite vector, in [0, 2 N_r)
        grid: evaluation points; by default a span covering every mixture centre

    Raises:
        ValueError: bad indices or shapes
        CandidateLimitError: M^(N_t - 1) mixture components exceed the enumeration guard
    """
    h = np.asarray(h, dtype=complex)
    probs = np.asarray(probs, dtype=float)
    n_r, n_t = h.shape
    if probs.shape != (n_t, c.order):
        raise ValueError(f"probabilities shape {probs.shape} != {(n_t, c.order)}")
    if not 0 <= stream < n_t or not 0 <= symbol < c.order:
        raise ValueError(f"stream {stream} / symbol {symbol} out of range")
    if not 0 <= dimension < 2 * n_r:
        raise ValueError(f"dimension {dimension} outside [0, {2 * n_r})")

    own = h[:, stream] * c.points[symbol]
    others = [k for k in range(n_t) if k != stream]
    if others:
        table = build_candidate_table(c, len(others))
        weights = np.prod(probs[others][np.arange(len(others)), table.indices], axis=-1)
        centers = to_composite(own + table.symbols @ h[:, others].T)[:, dimension]
    else:
        weights = np.ones(1)
        centers = to_composite(own)[None, dimension]
    weights = weights / weights.sum()

    mu, cov, pseudo = interference_stats(stream, probs, h, sigma2, c)
    lam = compose_covariance(cov, pseudo).lam
    mean = float(to_composite(own + mu)[dimension])
    variance = float(lam[dimension, dimension]) / 2.0

    noise_std = np.sqrt(sigma2)
    if grid is None:
        span = max(8.0 * np.sqrt(variance), float(np.max(np.abs(centers - mean))) + 8.0 * noise_std)
        grid = np.linspace(mean - span, mean + span, points)
    grid = np.asarray(grid, dtype=float)

    mixture = weights @ stats.norm.pdf(grid[None, :], centers[:, None], noise_std)
    gaussian = stats.norm.pdf(grid, mean, np.sqrt(variance))
    return MixtureDensity(stream=stream, symbol=symbol, dimension=dimension, grid=grid,
                          mixture=mixture, gaussian=gaussian, mean=mean, variance=variance)


def gaussian_mixture_study(cfg: ExperimentConfig, ia: float = 0.0, stream: int = 0,
                           dimension: int = 0, points: int = 401) -> RunReport:
    """
    Compare the mixture and Gaussian densities for every symbol of one stream.

    One channel draw at ebn0_db[0]; the other streams' probabilities come
    from Gaussian a-priori LLRs of mutual information `ia` (uniform at 0).
    """
    cfg.ensure_valid()
    c = cfg.constellation()
    ebn0 = cfg.ebn0_db[0]
    sigma2 = cfg.sigma2(ebn0)
    rng = stream_rng(cfg.seed, _MIXTURE_KEY)

    h = sample_channel(cfg.nakagami_m, cfg.omega, cfg.nr, cfg.nt, rng).h
    indices = rng.integers(0, c.order, size=(1, cfg.nt))
    bits = demap_bits(indices, c).reshape(-1)
    llr = LlrFrame(gaussian_priors(bits, j_inverse(ia), rng), LlrRole.APRIORI,
                   c.bits_per_symbol, cfg.nt)
    probs = apriori_llrs_to_symbol_probs(llr, c).probs[0]

    report = RunReport("mixture", {**cfg.echo(), "mixture_ia": f"{ia:g}",
                                   "mixture_stream": str(stream)},
                       cfg.seed, datetime.now(timezone.utc).isoformat(timespec="seconds"))
    for symbol in range(c.order):
        density = conditional_densities(h, sigma2, probs, c, stream, symbol, dimension, points=points)
        report.mixture.append(density)
        log.debug(f"symbol {symbol}: mean {density.mean:.4f} var {density.variance:.4f} "
                  f"L1 {density.l1:.4f}")

    worst = max(report.mixture, key=lambda d: d.l1)
    log.info(f"Gaussian approximation at Eb/N0={ebn0:.2f} dB, I_A={ia:g}: "
             f"largest L1 distance {worst.l1:.4f} (symbol {worst.symbol})")
    return report
