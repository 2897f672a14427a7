"""
Outer detection/decoding loop.

Pass z = 0 runs the detector with zero priors; every further pass feeds the
decoder's coded-bit extrinsics back through the channel interleaver as the
detector's priors.  The PDA already emits extrinsic information (its row for
stream i never uses stream i's prior), so its output goes to the decoder
as is; the MAP detectors subtract their priors in the classical way.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from receiver.map_detector import map_llrs
from receiver.modem import Constellation, LlrFrame, LlrRole, map_bits
from receiver.numerics import LogSum, OpCounter
from receiver.pda_detector import PdaConfig, detect
from receiver.turbo_fec import (
    CodedFrame,
    Interleaver,
    TurboCodeSpec,
    build_interleaver,
    decode,
    encode,
)

log = logging.getLogger(__name__)


class DetectorKind(str, Enum):
    PDA = "ab-log-pda"
    EXACT_MAP = "exact-log-map"
    MAX_LOG_MAP = "max-log-map"


class Direction(str, Enum):
    TO_DECODER = "to-decoder"
    TO_DETECTOR = "to-detector"


@dataclass
class IddConfig:
    detector: DetectorKind = DetectorKind.PDA
    outer_iterations: int = 3
    pda: PdaConfig = field(default_factory=PdaConfig)
    code: TurboCodeSpec = field(default_factory=TurboCodeSpec)
    use_estimated_csi: bool = True      # False hands the receiver the true channel
    pda_subtract_prior: bool = False

    def __post_init__(self):
        self.detector = DetectorKind(self.detector)
        if self.outer_iterations < 0:
            raise ValueError(f"outer_iterations must be >= 0, got {self.outer_iterations}")


@dataclass(frozen=True, eq=False)
class FrameLayout:
    """How one coded block is spread over channel uses."""
    code: TurboCodeSpec
    constellation: Constellation
    n_t: int
    turbo_interleaver: Interleaver
    channel_interleaver: Interleaver

    @property
    def bits_per_use(self) -> int:
        return self.n_t * self.constellation.bits_per_symbol

    @property
    def coded_length(self) -> int:
        return self.code.coded_length

    @property
    def padded_length(self) -> int:
        return self.channel_interleaver.length

    @property
    def channel_uses(self) -> int:
        return self.padded_length // self.bits_per_use


def build_frame_layout(code: TurboCodeSpec, constellation: Constellation, n_t: int,
                       seed: int = 0) -> FrameLayout:
    """Layout with the coded block padded up to a whole number of channel uses."""
    if n_t < 1:
        raise ValueError(f"n_t must be positive, got {n_t}")
    per_use = n_t * constellation.bits_per_symbol
    padded = -(-code.coded_length // per_use) * per_use
    return FrameLayout(
        code=code,
        constellation=constellation,
        n_t=n_t,
        turbo_interleaver=build_interleaver(code.info_length, code.interleaver_seed),
        channel_interleaver=build_interleaver(padded, seed),
    )


@dataclass(frozen=True, eq=False)
class TransmitFrame:
    coded: CodedFrame
    bits: np.ndarray              # padded, interleaved, 0/1
    symbol_indices: np.ndarray    # (uses, N_t)
    symbols: np.ndarray           # (uses, N_t)


def transmit_frame(info: np.ndarray, layout: FrameLayout, rng: np.random.Generator) -> TransmitFrame:
    """Encode, pad with random fillers, interleave and map onto the antennas."""
    coded = encode(info, layout.code, layout.turbo_interleaver)
    filler = rng.integers(0, 2, layout.padded_length - layout.coded_length).astype(np.int8)
    bits = layout.channel_interleaver.interleave(np.concatenate([coded.bits, filler]))

    c = layout.constellation
    groups = bits.reshape(-1, c.bits_per_symbol).astype(np.int64)
    weights = 1 << np.arange(c.bits_per_symbol - 1, -1, -1)
    indices = (groups @ weights).reshape(layout.channel_uses, layout.n_t)
    symbols = map_bits(1 - 2 * bits.astype(np.int64), c).reshape(layout.channel_uses, layout.n_t)
    return TransmitFrame(coded=coded, bits=bits, symbol_indices=indices, symbols=symbols)


def llr_route(frame: LlrFrame, direction: Direction | str, interleaver: Interleaver) -> LlrFrame:
    """Move LLRs between the detector (interleaved) and decoder (natural) domains."""
    direction = Direction(direction)
    if len(frame) != interleaver.length:
        raise ValueError(f"frame length {len(frame)} != interleaver length {interleaver.length}")
    if direction is Direction.TO_DECODER:
        values = interleaver.deinterleave(frame.values)
    else:
        values = interleaver.interleave(frame.values)
    return LlrFrame(values, LlrRole.APRIORI, frame.bits_per_symbol, frame.n_streams)


@dataclass
class ReceiverResult:
    info_bits: np.ndarray
    iteration_bits: list[np.ndarray]          # decisions after each pass z
    detector_llrs: list[LlrFrame]             # what the detector handed on
    detector_posteriors: list[LlrFrame]       # its a-posteriori LLRs
    decoder_llrs: list[LlrFrame]              # coded extrinsics fed back (empty on the last pass)
    detector_ops: list[int]


def _run_detector(y: np.ndarray, h: np.ndarray, sigma2: float, llr_a: LlrFrame,
                  config: IddConfig, c: Constellation,
                  counter: OpCounter) -> tuple[LlrFrame, LlrFrame]:
    if config.detector is DetectorKind.PDA:
        _, posterior = detect(y, h, sigma2, llr_a, config.pda, c, counter=counter)
        if config.pda_subtract_prior:
            out = LlrFrame(posterior.values - llr_a.values, LlrRole.EXTRINSIC,
                           c.bits_per_symbol, posterior.n_streams)
        else:
            out = posterior
        return out, posterior.restamp(LlrRole.APOSTERIORI)

    mode = LogSum.EXACT if config.detector is DetectorKind.EXACT_MAP else LogSum.MAX_LOG
    posterior, extrinsic = map_llrs(y, h, sigma2, llr_a, c, mode, counter)
    return extrinsic, posterior


def run_receiver(y: np.ndarray, h: np.ndarray, sigma2: float, config: IddConfig,
                 layout: FrameLayout) -> ReceiverResult:
    """
    Iterative detection and decoding of one frame.

    Args:
        y: received vectors, (uses, N_r)
        h: channel the receiver believes in, (uses, N_r, N_t)
        sigma2: noise variance per real dimension
        config: detector choice, iteration counts and code
        layout: frame layout shared with the transmitter

    Returns:
        ReceiverResult; decisions come from the decoder's info-bit APPs
    """
    y = np.asarray(y, dtype=complex)
    h = np.asarray(h, dtype=complex)
    uses = layout.channel_uses
    if y.ndim != 2 or y.shape[0] != uses:
        raise ValueError(f"expected {uses} received vectors, got shape {y.shape}")
    if h.shape != (uses, y.shape[1], layout.n_t):
        raise ValueError(f"channel shape {h.shape} does not match {(uses, y.shape[1], layout.n_t)}")
    if config.code != layout.code:
        raise ValueError("receiver and layout use different codes")

    c = layout.constellation
    pi = layout.channel_interleaver
    coded_len = layout.coded_length
    llr_a = LlrFrame.zeros(layout.padded_length, LlrRole.APRIORI, c.bits_per_symbol, layout.n_t)

    result = ReceiverResult(np.empty(0, dtype=np.int8), [], [], [], [], [])
    for z in range(config.outer_iterations + 1):
        counter = OpCounter()
        to_decoder, posterior = _run_detector(y, h, sigma2, llr_a, config, c, counter)
        result.detector_llrs.append(to_decoder)
        result.detector_posteriors.append(posterior)
        result.detector_ops.append(counter.total())

        dec_in = llr_route(to_decoder, Direction.TO_DECODER, pi)
        decoded = decode(dec_in.values[:coded_len], layout.code, layout.turbo_interleaver)
        result.iteration_bits.append(decoded.info_bits)

        if z < config.outer_iterations:
            feedback = np.zeros(layout.padded_length)
            feedback[:coded_len] = decoded.coded_extrinsic
            back = LlrFrame(feedback, LlrRole.EXTRINSIC, c.bits_per_symbol, layout.n_t)
            result.decoder_llrs.append(back)
            llr_a = llr_route(back, Direction.TO_DETECTOR, pi)

    result.info_bits = result.iteration_bits[-1]
    log.debug(f"Receiver finished {config.outer_iterations + 1} passes over {uses} channel uses")
    return result
