"""
Experiment drivers: BER sweeps, EXIT curves, LLR consistency, PDA
convergence probes and complexity accounting.
"""

import logging
from contextlib import contextmanager
from datetime import datetime, timezone
from multiprocessing import Pool

import numpy as np

from harness.config import ExperimentConfig
from harness.metrics import (
    ComplexityRow,
    ConsistencyReport,
    ExitPoint,
    ProbeIteration,
    ProbeReport,
    RunReport,
    TrajectoryPoint,
    aggregate_ber,
    consistency_from_llrs,
    gaussian_priors,
    j_inverse,
    map_analytic_ops,
    mutual_information,
    pda_analytic_ops,
)
from harness.simulator import FrameResult, FrameSimulator, init_worker, simulate_task, stream_rng
from receiver.channel import add_noise, sample_channel
from receiver.idd import DetectorKind
from receiver.map_detector import MAX_CANDIDATES, map_llrs
from receiver.modem import ModulationKind, build_constellation, demap_bits
from receiver.numerics import LogSum, OpCounter
from receiver.pda_detector import PdaConfig, Schedule, detect, init_state, sweep
from receiver.turbo_fec import decode, encode

log = logging.getLogger(__name__)

DEFAULT_COMPLEXITY_GRID = [(2, 4), (2, 16), (4, 4), (4, 16)]

# Stream keys for the uncoded studies; coded frames use (snr_index, frame_index)
_EXIT_KEY = 1
_CONSISTENCY_KEY = 2
_PROBE_KEY = 3
_DECODER_EXIT_KEY = 4


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@contextmanager
def _frame_pool(cfg: ExperimentConfig):
    if cfg.workers <= 1:
        yield None
        return
    pool = Pool(processes=cfg.workers, initializer=init_worker, initargs=(cfg,))
    try:
        yield pool
    finally:
        pool.terminate()
        pool.join()


def _collect_frames(sim: FrameSimulator, pool, snr_index: int) -> tuple[list[FrameResult], str]:
    """
    Simulate frames in index order until the stop rule fires.

    Frames are dispatched in batches but consumed strictly in order, so the
    stopping frame is the same for any worker count.
    """
    cfg = sim.cfg
    batch = max(1, 4 * cfg.workers)
    results: list[FrameResult] = []
    frame_errors = 0
    start = 0

    while start < cfg.max_frames:
        tasks = [(snr_index, f) for f in range(start, min(start + batch, cfg.max_frames))]
        outputs = pool.imap(simulate_task, tasks) if pool else (sim.simulate_frame(*t) for t in tasks)
        for result in outputs:
            results.append(result)
            frame_errors += result.frame_errors[-1]
            if frame_errors >= cfg.min_frame_errors:
                log.debug(f"SNR point {snr_index}: stop rule met after {len(results)} frames")
                return results, "errors"
        start += len(tasks)
        log.debug(f"SNR point {snr_index}: {len(results)} frames, {frame_errors} frame errors")

    return results, "max_frames"


def run_ber_experiment(cfg: ExperimentConfig) -> RunReport:
    """
    BER/FER versus Eb/N0 for every outer pass z = 0..it_o.

    Returns:
        RunReport with one BerPoint per (Eb/N0, z) and mean detector
        operations per channel use for each pass
    """
    cfg.ensure_valid()
    sim = FrameSimulator(cfg)
    report = RunReport("ber", cfg.echo(), cfg.seed, _now())
    k = sim.layout.code.info_length
    ops: list[list[float]] = []

    log.info(f"BER run: {cfg}, {sim.layout.channel_uses} channel uses per frame")
    with _frame_pool(cfg) as pool:
        for snr_index, ebn0 in enumerate(cfg.ebn0_db):
            frames, stopped_on = _collect_frames(sim, pool, snr_index)

            for z in range(cfg.it_o + 1):
                point = aggregate_ber(
                    ebn0, z,
                    [f.bit_errors[z] for f in frames],
                    [f.frame_errors[z] for f in frames],
                    k, stopped_on,
                )
                report.ber_points.append(point)

            final = report.ber_points[-1]
            ops.extend(f.ops_per_use for f in frames)
            log.info(f"Eb/N0={ebn0:.2f} dB: BER={final.ber:.3e} FER={final.fer:.4f} "
                     f"({final.frame_errors} frame errors in {final.frames} frames)")
            if stopped_on == "max_frames" and final.frame_errors < cfg.min_frame_errors:
                log.warning(f"Eb/N0={ebn0:.2f} dB stopped at max_frames={cfg.max_frames} "
                            f"with only {final.frame_errors} frame errors")

    report.op_counts[cfg.detector] = [float(v) for v in np.mean(ops, axis=0)]
    return report


def measure_exit(cfg: ExperimentConfig, detectors: list[str] | None = None,
                 ia_grid: list[float] | None = None, with_decoder: bool = False,
                 trajectory: bool = False) -> RunReport:
    """
    EXIT characteristic I_E(I_A) of the detectors at every swept Eb/N0.

    A-priori LLRs are consistent Gaussian with sigma_A = J^-1(I_A).  All
    detectors see the same channel draws and priors at a given point.

    Args:
        with_decoder: add the turbo decoder's curve over the same I_A grid
        trajectory: add the coded receiver's per-pass MI at ebn0_db[0]
    """
    cfg.ensure_valid()
    detectors = [cfg.detector] if detectors is None else [DetectorKind(d.strip()).value for d in detectors]
    ia_grid = cfg.ia_grid if ia_grid is None else ia_grid
    if any(not 0.0 <= ia < 1.0 for ia in ia_grid):
        raise ValueError("I_A values must lie in [0, 1)")

    sim = FrameSimulator(cfg)
    report = RunReport("exit", cfg.echo(), cfg.seed, _now())
    log.info(f"EXIT run: {cfg}, detectors={detectors}, {cfg.uncoded_uses} uses per point")

    for snr_index, ebn0 in enumerate(cfg.ebn0_db):
        for ia_index, ia in enumerate(ia_grid):
            rng = stream_rng(cfg.seed, _EXIT_KEY, snr_index, ia_index)
            batch = sim.uncoded_batch(rng, cfg.uncoded_uses, ebn0)
            priors = gaussian_priors(batch.bits, j_inverse(ia), rng)

            for name in detectors:
                llr = sim.detect_uncoded(name, batch, priors)
                ie = mutual_information(llr.values, batch.bits.reshape(-1))
                report.exit_points.append(ExitPoint(ia=ia, ie=ie, detector=name, ebn0_db=ebn0))
                log.debug(f"{name} Eb/N0={ebn0:.2f} I_A={ia:.3f} -> I_E={ie:.4f}")

    if with_decoder:
        report.exit_points.extend(decoder_exit(cfg, ia_grid))
    if trajectory:
        report.trajectory = idd_trajectory(cfg)
    return report


def decoder_exit(cfg: ExperimentConfig, ia_grid: list[float] | None = None,
                 frames: int | None = None) -> list[ExitPoint]:
    """
    Outer EXIT characteristic: coded-bit extrinsic MI of the turbo decoder
    when its only input is consistent Gaussian LLRs of mutual information I_A.

    The channel plays no part, so every point carries ebn0_db = nan.
    """
    ia_grid = cfg.ia_grid if ia_grid is None else ia_grid
    frames = cfg.exit_frames if frames is None else frames
    if any(not 0.0 <= ia < 1.0 for ia in ia_grid):
        raise ValueError("I_A values must lie in [0, 1)")

    layout = cfg.layout()
    spec, pi = layout.code, layout.turbo_interleaver
    points = []
    for ia_index, ia in enumerate(ia_grid):
        rng = stream_rng(cfg.seed, _DECODER_EXIT_KEY, ia_index)
        sigma_a = j_inverse(ia)
        extrinsic, signed = [], []
        for _ in range(frames):
            coded = encode(rng.integers(0, 2, spec.info_length).astype(np.int8), spec, pi)
            bits = 1.0 - 2.0 * coded.bits
            extrinsic.append(decode(gaussian_priors(bits, sigma_a, rng), spec, pi).coded_extrinsic)
            signed.append(bits)
        ie = mutual_information(np.concatenate(extrinsic), np.concatenate(signed))
        points.append(ExitPoint(ia=ia, ie=ie, detector="turbo", ebn0_db=float("nan"), kind="decoder"))
        log.debug(f"decoder I_A={ia:.3f} -> I_E={ie:.4f} over {frames} frames")
    return points


def idd_trajectory(cfg: ExperimentConfig, frames: int | None = None,
                   snr_index: int = 0) -> list[TrajectoryPoint]:
    """
    Mutual information exchanged on each outer pass of the coded receiver.

    Frames are the BER run's frames at ebn0_db[snr_index]; the detector's
    a-priori MI on pass z is the decoder's output MI from pass z-1.
    """
    frames = cfg.exit_frames if frames is None else frames
    sim = FrameSimulator(cfg)
    pi, coded_len = sim.layout.channel_interleaver, sim.layout.coded_length

    det: list[list[np.ndarray]] = [[] for _ in range(cfg.it_o + 1)]
    dec: list[list[np.ndarray]] = [[] for _ in range(cfg.it_o)]
    signed = []
    for f in range(frames):
        tx, result = sim.receive_frame(snr_index, f)
        signed.append(1.0 - 2.0 * tx.coded.bits)
        for z, llr in enumerate(result.detector_llrs):
            det[z].append(pi.deinterleave(llr.values)[:coded_len])
        for z, llr in enumerate(result.decoder_llrs):
            dec[z].append(llr.values[:coded_len])

    bits = np.concatenate(signed)
    points = []
    ia = 0.0
    for z in range(cfg.it_o + 1):
        ie = mutual_information(np.concatenate(det[z]), bits)
        out = mutual_information(np.concatenate(dec[z]), bits) if z < cfg.it_o else None
        points.append(TrajectoryPoint(iteration=z, detector_ia=ia, detector_ie=ie, decoder_ie=out))
        ia = out if out is not None else ia
    log.info(f"IDD trajectory at Eb/N0={cfg.ebn0_db[snr_index]:.2f} dB: detector I_E "
             f"{points[0].detector_ie:.4f} -> {points[-1].detector_ie:.4f} over {frames} frames")
    return points


def consistency_test(cfg: ExperimentConfig, detector: str | None = None,
                     inner_iterations: int | None = None) -> ConsistencyReport:
    """
    LLR consistency of one detector at the first swept Eb/N0.

    Raises:
        InsufficientSamplesError: fewer than 10^4 LLRs
    """
    detector = cfg.detector if detector is None else detector
    sim = FrameSimulator(cfg)
    ebn0 = cfg.ebn0_db[0]
    rng = stream_rng(cfg.seed, _CONSISTENCY_KEY, 0)
    batch = sim.uncoded_batch(rng, cfg.uncoded_uses, ebn0)
    priors = gaussian_priors(batch.bits, j_inverse(cfg.consistency_ia), rng) if cfg.consistency_ia > 0 else None

    pda = cfg.pda()
    label = detector
    if DetectorKind(detector) is DetectorKind.PDA:
        if inner_iterations is not None:
            pda.inner_iterations = inner_iterations
        label = f"{detector} it_i={pda.inner_iterations}"

    llr = sim.detect_uncoded(detector, batch, priors, pda=pda)
    result = consistency_from_llrs(llr.values, batch.bits.reshape(-1), label=label)
    log.info(f"Consistency {label}: slope={result.slope:.4f} intercept={result.intercept:.4f}")
    return result


def run_consistency(cfg: ExperimentConfig, inner_iterations: list[int] | None = None) -> RunReport:
    """Consistency reports for the configured detector (PDA: one per it_i)."""
    cfg.ensure_valid()
    report = RunReport("consistency", cfg.echo(), cfg.seed, _now())
    if DetectorKind(cfg.detector) is DetectorKind.PDA:
        for it_i in (inner_iterations or [cfg.it_i]):
            report.consistency.append(consistency_test(cfg, inner_iterations=it_i))
    else:
        report.consistency.append(consistency_test(cfg))
    return report


def pda_convergence_probe(cfg: ExperimentConfig, iterations: int | None = None,
                          epsilon: float | None = None) -> RunReport:
    """
    Uncoded PDA: BER and the change of the true symbol's probability per sweep.

    Sweep 0 has no predecessor, so its change is undefined.
    """
    cfg.ensure_valid()
    iterations = cfg.probe_iterations if iterations is None else iterations
    epsilon = cfg.probe_epsilon if epsilon is None else epsilon

    sim = FrameSimulator(cfg)
    c = sim.constellation
    rng = stream_rng(cfg.seed, _PROBE_KEY, 0)
    batch = sim.uncoded_batch(rng, cfg.uncoded_uses, cfg.ebn0_db[0])
    pda = cfg.pda()

    state = init_state(None, cfg.nt, c, batch.uses, cfg.nr)
    rows: list[ProbeIteration] = []
    deltas: list[np.ndarray] = []
    previous = None

    for it in range(iterations + 1):
        sweep(batch.y, batch.h, batch.sigma2, state, pda, c)
        decided = np.argmax(state.probs, axis=-1)
        ber = float(np.mean(demap_bits(decided, c).reshape(batch.bits.shape) != batch.bits))
        p_true = np.take_along_axis(state.probs, batch.indices[..., None], axis=-1)[..., 0]

        if previous is None:
            rows.append(ProbeIteration(iteration=it, ber=ber))
        else:
            delta = p_true - previous
            deltas.append(delta)
            rows.append(ProbeIteration(
                iteration=it,
                ber=ber,
                mean_abs_delta=float(np.mean(np.abs(delta))),
                frac_positive=float(np.mean(delta >= epsilon)),
                frac_negative=float(np.mean(delta <= -epsilon)),
                frac_converged=float(np.mean(np.abs(delta) < epsilon)),
            ))
        previous = p_true

    if len(deltas) >= 2:
        stack = np.stack(deltas)
        flipped = np.any(stack >= epsilon, axis=0) & np.any(stack <= -epsilon, axis=0)
        sign_changes = float(np.mean(flipped))
    else:
        sign_changes = 0.0

    report = RunReport("pda-probe", cfg.echo(), cfg.seed, _now())
    report.probe = ProbeReport(iterations=rows, delta_p=deltas,
                               sign_change_fraction=sign_changes, epsilon=epsilon)
    log.info(f"PDA probe: BER {rows[0].ber:.3e} -> {rows[-1].ber:.3e} over {iterations} extra sweeps, "
             f"{sign_changes:.1%} of symbols change direction")
    return report


def complexity_report(grid: list[tuple[int, ...]] | None = None, uses: int = 8,
                      seed: int = 0, sigma2: float = 0.1) -> RunReport:
    """
    Counted versus analytic real operations per channel use.

    Grid entries are (N, M) for N_t = N_r = N, or (N_t, N_r, M). The PDA is
    instrumented on one parallel sweep with downdated inverses; building and
    factorizing the full composite covariance is reported as setup, apart
    from the per-use count. The MAP detector is charged for one full
    enumeration and skipped where M^N_t exceeds the candidate guard.
    """
    grid = DEFAULT_COMPLEXITY_GRID if grid is None else grid
    report = RunReport("complexity", {"uses": str(uses), "sigma2": f"{sigma2:g}"}, seed, _now())
    pda = PdaConfig(schedule=Schedule.PARALLEL, use_downdate_inverse=True)

    for entry in grid:
        nt, nr, order = (entry[0], entry[0], entry[1]) if len(entry) == 2 else entry
        c = build_constellation(ModulationKind.QAM, order)
        rng = stream_rng(seed, nt, nr, order)
        indices = rng.integers(0, order, size=(uses, nt))
        h = sample_channel(1.0, 1.0, nr, nt, rng, uses=uses).h
        y = add_noise(np.einsum("urk,uk->ur", h, c.points[indices]), sigma2, rng)

        counter = OpCounter()
        detect(y, h, sigma2, None, pda, c, counter=counter)
        setup = counter.total("setup")
        report.complexity.append(ComplexityRow(
            nt=nt, nr=nr, m_order=order, detector=DetectorKind.PDA.value,
            counted_ops=(counter.total() - setup) / uses,
            analytic_ops=pda_analytic_ops(nt, nr, order),
            setup_ops=setup / uses,
        ))
        log.debug(f"PDA {nt}x{nr} M={order}: {counter.counts}")

        if order ** nt > MAX_CANDIDATES:
            log.warning(f"Skipping MAP at {nt}x{nr} M={order}: {order ** nt} candidates")
            continue
        counter = OpCounter()
        map_llrs(y, h, sigma2, None, c, LogSum.EXACT, counter)
        report.complexity.append(ComplexityRow(
            nt=nt, nr=nr, m_order=order, detector=DetectorKind.EXACT_MAP.value,
            counted_ops=counter.total() / uses,
            analytic_ops=map_analytic_ops(nt, nr, order),
        ))

    return report
