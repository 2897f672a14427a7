"""
Statistics for the experiments.

BER/FER bookkeeping, mutual information and the J-function for EXIT
charts, the LLR consistency regression, analytic operation counts and the
text summary printed by the CLI.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, stats


class InsufficientSamplesError(ValueError):
    """Too few LLR samples for a meaningful consistency regression."""


@dataclass
class BerPoint:
    """Error counts for one (Eb/N0, outer iteration) pair."""
    ebn0_db: float
    iteration: int
    bit_errors: int
    bits: int
    frame_errors: int
    frames: int
    stopped_on: str = "errors"     # or "max_frames"

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else 0.0

    @property
    def fer(self) -> float:
        return self.frame_errors / self.frames if self.frames else 0.0


@dataclass
class ExitPoint:
    ia: float
    ie: float
    detector: str
    ebn0_db: float                 # nan for the decoder, which never sees the channel
    kind: str = "detector"         # or "decoder"


@dataclass
class TrajectoryPoint:
    """
    Mutual information at each hand-over of one outer pass, pooled over frames.

    Measured on the coded bits; padding fillers are left out.
    """
    iteration: int
    detector_ia: float
    detector_ie: float
    decoder_ie: float | None       # None on the last pass, which feeds nothing back


@dataclass
class ConsistencyReport:
    slope: float
    intercept: float
    slope_ci: tuple[float, float]
    intercept_ci: tuple[float, float]
    bin_centers: np.ndarray
    log_ratios: np.ndarray
    counts: np.ndarray
    samples: int
    label: str = ""


@dataclass
class ProbeIteration:
    """Convergence statistics after inner sweep `iteration`."""
    iteration: int
    ber: float
    mean_abs_delta: float | None = None
    frac_positive: float | None = None
    frac_negative: float | None = None
    frac_converged: float | None = None


@dataclass
class ProbeReport:
    iterations: list[ProbeIteration]
    delta_p: list[np.ndarray]         # one (uses, N_t) array per sweep after the first
    sign_change_fraction: float
    epsilon: float


@dataclass
class MixtureDensity:
    """
    One real component of y given s_i = a: the exact conditional mixture
    against the single Gaussian with matched mean and variance.
    """
    stream: int
    symbol: int
    dimension: int                 # index into [Re y; Im y]
    grid: np.ndarray
    mixture: np.ndarray
    gaussian: np.ndarray
    mean: float
    variance: float

    @property
    def l1(self) -> float:
        return float(integrate.trapezoid(np.abs(self.mixture - self.gaussian), self.grid))


@dataclass
class ComplexityRow:
    nt: int
    nr: int
    m_order: int
    detector: str
    counted_ops: float          # per channel use, setup excluded
    analytic_ops: int
    setup_ops: float = 0.0      # full-covariance build and factorization

    @property
    def ratio(self) -> float:
        return self.counted_ops / self.analytic_ops


@dataclass
class RunReport:
    kind: str
    config: dict[str, str]
    seed: int
    timestamp: str
    ber_points: list[BerPoint] = field(default_factory=list)
    exit_points: list[ExitPoint] = field(default_factory=list)
    trajectory: list[TrajectoryPoint] = field(default_factory=list)
    consistency: list[ConsistencyReport] = field(default_factory=list)
    probe: ProbeReport | None = None
    complexity: list[ComplexityRow] = field(default_factory=list)
    mixture: list[MixtureDensity] = field(default_factory=list)
    op_counts: dict[str, list[float]] = field(default_factory=dict)


def mutual_information(llrs: np.ndarray, bits: np.ndarray) -> float:
    """
    Time-average estimate of I(b; L) for signed bits.

    1 - E[log2(1 + e^{-b L})], valid for consistent LLRs.
    """
    llrs = np.asarray(llrs, dtype=float)
    bits = np.asarray(bits, dtype=float)
    if llrs.shape != bits.shape:
        raise ValueError(f"LLR shape {llrs.shape} != bit shape {bits.shape}")
    return float(1.0 - np.mean(np.logaddexp(0.0, -bits * llrs)) / math.log(2.0))


def j_function(sigma: float) -> float:
    """Mutual information carried by consistent Gaussian LLRs N(sigma^2/2, sigma^2)."""
    if sigma <= 0:
        return 0.0
    mu = 0.5 * sigma * sigma

    def integrand(x):
        pdf = math.exp(-(x - mu) ** 2 / (2 * sigma * sigma)) / math.sqrt(2 * math.pi * sigma * sigma)
        return pdf * np.logaddexp(0.0, -x) / math.log(2.0)

    loss, _ = integrate.quad(integrand, mu - 12 * sigma, mu + 12 * sigma, limit=200)
    return float(min(1.0, max(0.0, 1.0 - loss)))


def j_inverse(info: float) -> float:
    """sigma_A such that j_function(sigma_A) == info."""
    if not 0.0 <= info < 1.0:
        raise ValueError(f"mutual information must lie in [0, 1), got {info}")
    if info == 0.0:
        return 0.0

    upper = 1.0
    while j_function(upper) < info:
        upper *= 2.0
        if upper > 256.0:
            raise ValueError(f"mutual information {info} too close to 1")
    return float(optimize.brentq(lambda s: j_function(s) - info, 0.0, upper, xtol=1e-10))


def gaussian_priors(bits: np.ndarray, sigma_a: float, rng: np.random.Generator) -> np.ndarray:
    """Consistent Gaussian a-priori LLRs: L = (sigma_a^2/2) b + sigma_a n."""
    bits = np.asarray(bits, dtype=float)
    return 0.5 * sigma_a * sigma_a * bits + sigma_a * rng.standard_normal(bits.shape)


def consistency_from_llrs(llrs: np.ndarray, bits: np.ndarray, n_bins: int = 40,
                          min_samples: int = 10_000, min_count: int = 100,
                          confidence: float = 0.95, label: str = "") -> ConsistencyReport:
    """
    Regress ln p(x)/p(-x) on x for x = b*L.

    Consistent LLRs give slope 1 and intercept 0.

    Raises:
        InsufficientSamplesError: fewer than `min_samples` LLRs, or too few
            populated mirror-bin pairs to fit a line
    """
    llrs = np.asarray(llrs, dtype=float).reshape(-1)
    bits = np.asarray(bits, dtype=float).reshape(-1)
    if len(llrs) != len(bits):
        raise ValueError(f"{len(llrs)} LLRs but {len(bits)} bits")
    if len(llrs) < min_samples:
        raise InsufficientSamplesError(f"{len(llrs)} samples, need at least {min_samples}")

    x = bits * llrs
    limit = float(np.quantile(np.abs(x), 0.99))
    if limit <= 0:
        raise InsufficientSamplesError("all LLRs are zero")

    edges = np.linspace(-limit, limit, 2 * n_bins + 1)
    counts, _ = np.histogram(x, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])

    pos = counts[n_bins:]
    neg = counts[:n_bins][::-1]
    keep = (pos >= min_count) & (neg >= min_count)
    if keep.sum() < 3:
        raise InsufficientSamplesError(f"only {int(keep.sum())} usable mirror-bin pairs")

    xs = centers[n_bins:][keep]
    ratios = np.log(pos[keep] / neg[keep])
    fit = stats.linregress(xs, ratios)
    t_crit = stats.t.ppf(0.5 + confidence / 2, len(xs) - 2)

    return ConsistencyReport(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        slope_ci=(fit.slope - t_crit * fit.stderr, fit.slope + t_crit * fit.stderr),
        intercept_ci=(fit.intercept - t_crit * fit.intercept_stderr,
                      fit.intercept + t_crit * fit.intercept_stderr),
        bin_centers=xs,
        log_ratios=ratios,
        counts=(pos + neg)[keep],
        samples=len(x),
        label=label,
    )


def pda_analytic_ops(nt: int, nr: int, m_order: int) -> int:
    """Real operations per PDA iteration: 4MN_tN_r^2 + 2MN_tN_r + 4N_tN_r^2."""
    return 4 * m_order * nt * nr ** 2 + 2 * m_order * nt * nr + 4 * nt * nr ** 2


def map_analytic_ops(nt: int, nr: int, m_order: int) -> int:
    """Real operations per MAP detection: M^N_t (4N_rN_t + 6N_r)."""
    return m_order ** nt * (4 * nr * nt + 6 * nr)


def aggregate_ber(ebn0_db: float, iteration: int, errors: list[int], frames_in_error: list[bool],
                  bits_per_frame: int, stopped_on: str) -> BerPoint:
    return BerPoint(
        ebn0_db=ebn0_db,
        iteration=iteration,
        bit_errors=int(sum(errors)),
        bits=bits_per_frame * len(errors),
        frame_errors=int(sum(frames_in_error)),
        frames=len(errors),
        stopped_on=stopped_on,
    )


def format_report(report: RunReport) -> str:
    """Format a run report for display."""
    lines = [
        "=" * 60,
        f"{report.kind.upper()} RESULTS",
        "=" * 60,
        f"  Seed:      {report.seed}",
        f"  Started:   {report.timestamp}",
        f"  Setup:     {report.config.get('nt')}x{report.config.get('nr')} "
        f"{report.config.get('m_order')}{report.config.get('modulation')}, "
        f"m={report.config.get('nakagami_m')}, rho={report.config.get('rho')}, "
        f"detector={report.config.get('detector')}",
        "",
    ]

    if report.ber_points:
        lines += ["BER", f"  {'Eb/N0':>6} {'iter':>4} {'BER':>10} {'FER':>8} {'errors':>8} {'frames':>7}  stop"]
        for p in report.ber_points:
            lines.append(
                f"  {p.ebn0_db:>6.2f} {p.iteration:>4d} {p.ber:>10.3e} {p.fer:>8.4f} "
                f"{p.bit_errors:>8d} {p.frames:>7d}  {p.stopped_on}"
            )
        lines.append("")

    if report.op_counts:
        lines.append("DETECTOR OPS PER CHANNEL USE (by outer iteration)")
        for name, per_iter in report.op_counts.items():
            lines.append(f"  {name:<16} " + " ".join(f"{v:.0f}" for v in per_iter))
        lines.append("")

    if report.exit_points:
        lines += ["EXIT", f"  {'curve':<16} {'Eb/N0':>6} {'I_A':>6} {'I_E':>8}"]
        for e in report.exit_points:
            snr = "-" if e.kind == "decoder" else f"{e.ebn0_db:.2f}"
            lines.append(f"  {e.detector:<16} {snr:>6} {e.ia:>6.3f} {e.ie:>8.4f}")
        lines.append("")

    if report.trajectory:
        lines += ["IDD TRAJECTORY", f"  {'z':>3} {'det I_A':>8} {'det I_E':>8} {'dec I_E':>8}"]
        for t in report.trajectory:
            dec = "-" if t.decoder_ie is None else f"{t.decoder_ie:.4f}"
            lines.append(f"  {t.iteration:>3d} {t.detector_ia:>8.4f} {t.detector_ie:>8.4f} {dec:>8}")
        lines.append("")

    for c in report.consistency:
        lines += [
            f"CONSISTENCY {c.label}".rstrip(),
            f"  Samples:    {c.samples}",
            f"  Slope:      {c.slope:.4f}  [{c.slope_ci[0]:.4f}, {c.slope_ci[1]:.4f}]",
            f"  Intercept:  {c.intercept:.4f}  [{c.intercept_ci[0]:.4f}, {c.intercept_ci[1]:.4f}]",
            "",
        ]

    if report.probe is not None:
        lines += ["PDA CONVERGENCE", f"  {'it_i':>4} {'BER':>10} {'mean|dP|':>10} {'dP>0':>7} {'dP<0':>7} {'conv':>7}"]
        for it in report.probe.iterations:
            if it.mean_abs_delta is None:
                lines.append(f"  {it.iteration:>4d} {it.ber:>10.3e} {'-':>10} {'-':>7} {'-':>7} {'-':>7}")
            else:
                lines.append(
                    f"  {it.iteration:>4d} {it.ber:>10.3e} {it.mean_abs_delta:>10.2e} "
                    f"{it.frac_positive:>7.1%} {it.frac_negative:>7.1%} {it.frac_converged:>7.1%}"
                )
        lines += [f"  Sign changes: {report.probe.sign_change_fraction:.1%} of symbols "
                  f"(epsilon={report.probe.epsilon:g})", ""]

    if report.mixture:
        lines += ["GAUSSIAN APPROXIMATION", f"  {'stream':>6} {'symbol':>6} {'dim':>4} {'mean':>9} {'var':>9} {'L1':>7}"]
        for d in report.mixture:
            lines.append(f"  {d.stream:>6d} {d.symbol:>6d} {d.dimension:>4d} "
                         f"{d.mean:>9.4f} {d.variance:>9.4f} {d.l1:>7.4f}")
        lines.append("")

    if report.complexity:
        lines += ["COMPLEXITY", f"  {'NtxNr':>6} {'M':>4} {'detector':<16} {'counted':>10} {'analytic':>10} {'ratio':>6} {'setup':>9}"]
        for r in report.complexity:
            lines.append(
                f"  {r.nt:>3}x{r.nr:<2} {r.m_order:>4} {r.detector:<16} "
                f"{r.counted_ops:>10.0f} {r.analytic_ops:>10d} {r.ratio:>6.2f} {r.setup_ops:>9.0f}"
            )
        lines.append("")

    lines.append("=" * 60)
    return "\n".join(lines)
