"""
Constellations, bit/symbol mapping and LLR <-> symbol-probability conversion.

Bits are signed: +1 / -1, and an LLR is ln(P(+1) / P(-1)).  Within a channel
use the bits of antenna 0 come first, then antenna 1, and so on:
position k = M_b * antenna + bit.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

LLR_MAX = 50.0
PROB_FLOOR = 1e-300
ROW_SUM_TOL = 1e-9


class ModulationKind(str, Enum):
    PAM = "PAM"
    QAM = "QAM"


class LlrRole(str, Enum):
    APRIORI = "a-priori"
    APOSTERIORI = "a-posteriori"
    EXTRINSIC = "extrinsic"


@dataclass(frozen=True, eq=False)
class Constellation:
    """
    Gray-labeled point set.

    Index m of `points` is the label read MSB-first with bit value 0 <-> +1,
    so `labels[m]` is the signed bit vector of point m.
    """
    kind: ModulationKind
    points: np.ndarray          # (M,) complex
    labels: np.ndarray          # (M, M_b) int8 in {+1, -1}
    energy: float | None        # None: integer grid kept unnormalized

    @property
    def order(self) -> int:
        return len(self.points)

    @property
    def bits_per_symbol(self) -> int:
        return self.labels.shape[1]

    @property
    def mean_energy(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))

    def __str__(self):
        return f"{self.order}{self.kind.value}"


def _is_power_of_two(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


def _gray_amplitudes(size: int) -> np.ndarray:
    """Real amplitudes indexed by Gray label; position j sits at (size-1) - 2j."""
    amps = np.empty(size)
    for j in range(size):
        amps[j ^ (j >> 1)] = (size - 1) - 2 * j
    return amps


def _signed_labels(n_bits: int) -> np.ndarray:
    m = np.arange(1 << n_bits)[:, None]
    shifts = np.arange(n_bits - 1, -1, -1)[None, :]
    return (1 - 2 * ((m >> shifts) & 1)).astype(np.int8)


def build_constellation(kind: ModulationKind | str, order: int,
                        energy: float | None = 1.0) -> Constellation:
    """
    Build a Gray-labeled PAM or square QAM constellation.

    Args:
        kind: PAM or QAM
        order: number of points M, a power of two (perfect square for QAM)
        energy: target mean symbol energy, or None for the raw {+-1, +-3, ...} grid

    Returns:
        Constellation with deterministic point order
    """
    kind = ModulationKind(kind)
    if not _is_power_of_two(order):
        raise ValueError(f"constellation size must be a power of two >= 2, got {order}")
    n_bits = order.bit_length() - 1

    if kind is ModulationKind.PAM:
        points = _gray_amplitudes(order).astype(complex)
    else:
        if n_bits % 2:
            raise ValueError(f"square QAM needs an even number of bits, got M={order}")
        half = n_bits // 2
        side = 1 << half
        axis = _gray_amplitudes(side)
        m = np.arange(order)
        points = axis[m >> half] + 1j * axis[m & (side - 1)]

    if energy is not None:
        if energy <= 0:
            raise ValueError(f"energy must be positive, got {energy}")
        points = points * np.sqrt(energy / np.mean(np.abs(points) ** 2))

    return Constellation(kind=kind, points=points, labels=_signed_labels(n_bits), energy=energy)


def bit_partition(c: Constellation) -> np.ndarray:
    """(M_b, M) mask, True where point m has bit l = +1."""
    return (c.labels > 0).T


def labels_to_index(bits: np.ndarray, bits_per_symbol: int) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.size % bits_per_symbol:
        raise ValueError(f"{bits.size} bits is not a multiple of {bits_per_symbol}")
    if not np.all((bits == 1) | (bits == -1)):
        raise ValueError("bits must be +1 or -1")
    groups = ((1 - bits.reshape(-1, bits_per_symbol)) // 2).astype(np.int64)
    weights = 1 << np.arange(bits_per_symbol - 1, -1, -1)
    return groups @ weights


def map_bits(bits: np.ndarray, c: Constellation) -> np.ndarray:
    """Signed bits (length a multiple of M_b) -> constellation points."""
    return c.points[labels_to_index(bits, c.bits_per_symbol)]


def demap_bits(indices: np.ndarray, c: Constellation) -> np.ndarray:
    """Symbol indices -> flat signed bit vector."""
    return c.labels[np.asarray(indices)].reshape(-1)


@dataclass(frozen=True, eq=False)
class LlrFrame:
    """Bit LLRs for a run of channel uses, with their role in the exchange."""
    values: np.ndarray
    role: LlrRole
    bits_per_symbol: int
    n_streams: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError(f"LLR frame must be 1-D, got shape {values.shape}")
        if len(values) % self.bits_per_symbol:
            raise ValueError(f"LLR frame length {len(values)} not divisible by {self.bits_per_symbol}")
        if np.any(np.isnan(values)):
            raise ValueError("LLR frame contains NaN")
        object.__setattr__(self, "values", np.clip(values, -LLR_MAX, LLR_MAX))
        object.__setattr__(self, "role", LlrRole(self.role))

    @classmethod
    def zeros(cls, length: int, role: LlrRole, bits_per_symbol: int, n_streams: int = 1) -> "LlrFrame":
        return cls(np.zeros(length), role, bits_per_symbol, n_streams)

    def __len__(self):
        return len(self.values)

    @property
    def bits_per_use(self) -> int:
        return self.bits_per_symbol * self.n_streams

    def position(self, use: int, antenna: int, bit: int) -> int:
        return use * self.bits_per_use + antenna * self.bits_per_symbol + bit

    def per_symbol(self) -> np.ndarray:
        """View as (uses, n_streams, bits_per_symbol)."""
        return self.values.reshape(-1, self.n_streams, self.bits_per_symbol)

    def restamp(self, role: LlrRole) -> "LlrFrame":
        return replace(self, role=role)


@dataclass(frozen=True, eq=False)
class SymbolProbMatrix:
    """Per-antenna symbol probabilities, shape (..., N_t, M)."""
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim < 2:
            raise ValueError(f"probability matrix needs at least 2 dims, got {p.shape}")
        if np.any(p < 0) or np.any(p > 1 + ROW_SUM_TOL):
            raise ValueError("probabilities outside [0, 1]")
        if np.max(np.abs(p.sum(axis=-1) - 1.0)) > ROW_SUM_TOL:
            raise ValueError("probability rows do not sum to 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_log(cls, logp: np.ndarray) -> "SymbolProbMatrix":
        return cls(normalize_log_rows(logp))

    @classmethod
    def uniform(cls, n_streams: int, order: int, uses: int | None = None) -> "SymbolProbMatrix":
        shape = (n_streams, order) if uses is None else (uses, n_streams, order)
        return cls(np.full(shape, 1.0 / order))

    @property
    def n_streams(self) -> int:
        return self.probs.shape[-2]

    @property
    def order(self) -> int:
        return self.probs.shape[-1]


def normalize_log_rows(logp: np.ndarray) -> np.ndarray:
    """exp and normalize along the last axis, flooring tiny entries."""
    logp = np.asarray(logp, dtype=float)
    peak = np.max(logp, axis=-1, keepdims=True)
    p = np.exp(logp - peak)
    p = np.maximum(p / p.sum(axis=-1, keepdims=True), PROB_FLOOR)
    return p / p.sum(axis=-1, keepdims=True)


def apriori_llrs_to_symbol_probs(frame: LlrFrame, c: Constellation) -> SymbolProbMatrix:
    """
    Product-form symbol prior from a-priori bit LLRs.

    Returns probabilities of shape (uses, N_t, M).
    """
    if frame.role is not LlrRole.APRIORI:
        raise ValueError(f"expected a-priori LLRs, got {frame.role.value}")
    if frame.bits_per_symbol != c.bits_per_symbol:
        raise ValueError(f"frame carries {frame.bits_per_symbol} bits/symbol, "
                         f"constellation has {c.bits_per_symbol}")

    llr = frame.per_symbol()
    log_plus = -np.logaddexp(0.0, -llr)
    log_minus = -np.logaddexp(0.0, llr)

    positive = c.labels > 0
    per_bit = np.where(positive, log_plus[..., None, :], log_minus[..., None, :])
    return SymbolProbMatrix.from_log(per_bit.sum(axis=-1))


def symbol_probs_to_bit_llrs(p: SymbolProbMatrix, c: Constellation,
                             max_log: bool = False) -> LlrFrame:
    """
    Bit LLRs from symbol probabilities by splitting each row over A_l^+ / A_l^-.

    Returns an a-posteriori frame, antenna-major within each channel use.
    """
    if p.order != c.order:
        raise ValueError(f"matrix has {p.order} columns, constellation has {c.order} points")

    logp = np.log(np.maximum(p.probs, PROB_FLOOR))[..., None, :]
    plus = bit_partition(c)
    num = np.where(plus, logp, -np.inf)
    den = np.where(~plus, logp, -np.inf)

    if max_log:
        llr = num.max(axis=-1) - den.max(axis=-1)
    else:
        llr = np.logaddexp.reduce(num, axis=-1) - np.logaddexp.reduce(den, axis=-1)

    return LlrFrame(llr.reshape(-1), LlrRole.APOSTERIORI, c.bits_per_symbol, p.n_streams)


def hard_decision(p: SymbolProbMatrix) -> np.ndarray:
    """Most probable point per row; ties go to the lowest index."""
    return np.argmax(p.probs, axis=-1)
