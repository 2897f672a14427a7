"""
Monte-Carlo frame simulation.

Every random draw of a frame comes from its own stream,
SeedSequence(master_seed, spawn_key=(snr_index, frame_index)), so results do
not depend on how frames are spread across workers.
"""

from dataclasses import dataclass

import numpy as np

from harness.config import ExperimentConfig
from receiver.channel import add_noise, corrupt_csi, sample_channel
from receiver.idd import DetectorKind, ReceiverResult, TransmitFrame, run_receiver, transmit_frame
from receiver.map_detector import exact_log_map, max_log_map
from receiver.modem import LlrFrame, LlrRole, demap_bits
from receiver.numerics import OpCounter
from receiver.pda_detector import PdaConfig, detect


@dataclass
class FrameResult:
    """Outcome of one coded frame, one entry per outer pass."""
    snr_index: int
    frame_index: int
    bit_errors: list[int]
    frame_errors: list[bool]
    ops_per_use: list[float]


@dataclass
class UncodedBatch:
    """Independent channel uses with random symbols, no coding."""
    bits: np.ndarray            # (uses, N_t * M_b) signed
    indices: np.ndarray         # (uses, N_t)
    y: np.ndarray               # (uses, N_r)
    h: np.ndarray               # (uses, N_r, N_t) as seen by the receiver
    sigma2: float

    @property
    def uses(self) -> int:
        return len(self.y)


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


class FrameSimulator:
    """Transmitter, channel and receiver for one experiment configuration."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.constellation = cfg.constellation()
        self.layout = cfg.layout()
        self.idd = cfg.idd()

    def _propagate(self, symbols: np.ndarray, sigma2: float,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.cfg
        uses = len(symbols)
        channel = sample_channel(cfg.nakagami_m, cfg.omega, cfg.nr, cfg.nt, rng,
                                 uses=uses, per_frame=cfg.per_frame_channel)
        if cfg.rho < 1.0:
            channel = channel.with_estimate(corrupt_csi(channel.h, cfg.rho, rng), cfg.rho)
        y = add_noise(np.einsum("urk,uk->ur", channel.h, symbols), sigma2, rng)
        return y, channel.receiver_view if self.idd.use_estimated_csi else channel.h

    def receive_frame(self, snr_index: int, frame_index: int) -> tuple[TransmitFrame, ReceiverResult]:
        """
        Run one coded frame through transmitter, channel and receiver.

        Args:
            snr_index: index into cfg.ebn0_db
            frame_index: position of the frame in the SNR point's sequence

        Returns:
            (what was sent, everything the receiver produced)
        """
        ebn0 = self.cfg.ebn0_db[snr_index]
        sigma2 = self.cfg.sigma2(ebn0)
        rng = stream_rng(self.cfg.seed, snr_index, frame_index)

        info = rng.integers(0, 2, self.layout.code.info_length).astype(np.int8)
        tx = transmit_frame(info, self.layout, rng)
        y, h_rx = self._propagate(tx.symbols, sigma2, rng)
        return tx, run_receiver(y, h_rx, sigma2, self.idd, self.layout)

    def simulate_frame(self, snr_index: int, frame_index: int) -> FrameResult:
        """Error counts after each outer pass for one frame."""
        tx, result = self.receive_frame(snr_index, frame_index)
        info = tx.coded.systematic
        errors = [int(np.count_nonzero(bits != info)) for bits in result.iteration_bits]
        uses = self.layout.channel_uses
        return FrameResult(
            snr_index=snr_index,
            frame_index=frame_index,
            bit_errors=errors,
            frame_errors=[e > 0 for e in errors],
            ops_per_use=[ops / uses for ops in result.detector_ops],
        )

    def uncoded_batch(self, rng: np.random.Generator, uses: int, ebn0_db: float) -> UncodedBatch:
        c = self.constellation
        indices = rng.integers(0, c.order, size=(uses, self.cfg.nt))
        sigma2 = self.cfg.sigma2(ebn0_db)
        y, h_rx = self._propagate(c.points[indices], sigma2, rng)
        bits = demap_bits(indices, c).reshape(uses, -1)
        return UncodedBatch(bits=bits, indices=indices, y=y, h=h_rx, sigma2=sigma2)

    def detect_uncoded(self, detector: DetectorKind | str, batch: UncodedBatch,
                       priors: np.ndarray | None = None, pda: PdaConfig | None = None,
                       counter: OpCounter | None = None) -> LlrFrame:
        """Extrinsic LLRs of one detector on an uncoded batch."""
        detector = DetectorKind(detector)
        c = self.constellation
        llr_a = None
        if priors is not None:
            llr_a = LlrFrame(np.asarray(priors).reshape(-1), LlrRole.APRIORI,
                             c.bits_per_symbol, self.cfg.nt)

        if detector is DetectorKind.PDA:
            pda = self.cfg.pda() if pda is None else pda
            return detect(batch.y, batch.h, batch.sigma2, llr_a, pda, c, counter=counter)[1]
        if detector is DetectorKind.EXACT_MAP:
            return exact_log_map(batch.y, batch.h, batch.sigma2, llr_a, c, counter)
        return max_log_map(batch.y, batch.h, batch.sigma2, llr_a, c, counter)


_worker_sim: FrameSimulator | None = None


def init_worker(cfg: ExperimentConfig):
    """Pool initializer: build the simulator once per worker process."""
    global _worker_sim
    _worker_sim = FrameSimulator(cfg)


def simulate_task(task: tuple[int, int]) -> FrameResult:
    return _worker_sim.simulate_frame(*task)
