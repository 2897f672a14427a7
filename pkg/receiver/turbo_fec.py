"""
Rate-1/2 parallel-concatenated turbo code.

Two identical RSC constituents, a random interleaver between them and
alternate puncturing of the parity streams.  Constituent 1 is terminated to
the zero state; constituent 2 is left open.  Decoding runs log-domain BCJR
on each constituent and exchanges extrinsic information; besides the
info-bit APPs it returns extrinsic LLRs on every transmitted coded bit so an
iterative receiver can feed them back to the detector.

Transmitted order, for info index k:
    [systematic_k, parity_k]   parity_k from constituent 1 if k even, 2 if odd
followed by the tail of constituent 1:
    [tail_systematic_j, tail_parity_j] for j < memory
"""

from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache

import numpy as np

from receiver.numerics import LogSum, max_star, max_star_reduce


class BitRole(IntEnum):
    SYSTEMATIC = 0
    PARITY1 = 1
    PARITY2 = 2
    TAIL_SYSTEMATIC = 3
    TAIL_PARITY = 4


class Rsc:
    """
    Recursive systematic convolutional encoder defined by octal polynomials.

    State s packs the register contents a_{k-1} ... a_{k-memory}, most recent
    in the MSB.
    """

    def __init__(self, feedback: int = 0o7, feedforward: int = 0o5):
        self.feedback = feedback
        self.feedforward = feedforward
        self.memory = feedback.bit_length() - 1
        if self.memory < 1:
            raise ValueError(f"feedback polynomial {feedback:o} has no memory")
        if feedforward.bit_length() - 1 > self.memory:
            raise ValueError(f"feedforward {feedforward:o} has higher degree than feedback {feedback:o}")
        if not feedback >> self.memory & 1 or not feedback & 1:
            raise ValueError(f"feedback polynomial {feedback:o} must have both end taps")

        self.n_states = 1 << self.memory
        fb_taps = [(feedback >> (self.memory - j)) & 1 for j in range(self.memory + 1)]
        ff_taps = [(feedforward >> (self.memory - j)) & 1 for j in range(self.memory + 1)]

        self.next_state = np.zeros((self.n_states, 2), dtype=np.int64)
        self.parity = np.zeros((self.n_states, 2), dtype=np.int64)
        self.tail_input = np.zeros(self.n_states, dtype=np.int64)

        for s in range(self.n_states):
            past = [(s >> (self.memory - j)) & 1 for j in range(1, self.memory + 1)]
            fb_sum = 0
            ff_sum = 0
            for j in range(1, self.memory + 1):
                fb_sum ^= fb_taps[j] & past[j - 1]
                ff_sum ^= ff_taps[j] & past[j - 1]
            self.tail_input[s] = fb_sum
            for u in (0, 1):
                a = u ^ fb_sum
                self.next_state[s, u] = (a << (self.memory - 1)) | (s >> 1)
                self.parity[s, u] = (ff_taps[0] & a) ^ ff_sum

        # predecessor (state, input) pairs for every state
        prev_state = [[] for _ in range(self.n_states)]
        prev_input = [[] for _ in range(self.n_states)]
        for s in range(self.n_states):
            for u in (0, 1):
                ns = self.next_state[s, u]
                prev_state[ns].append(s)
                prev_input[ns].append(u)
        self.prev_state = np.array(prev_state, dtype=np.int64)
        self.prev_input = np.array(prev_input, dtype=np.int64)

    def encode(self, bits: np.ndarray, terminate: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Returns:
            (parity, tail_systematic, tail_parity); the tail arrays are empty
            when `terminate` is False
        """
        bits = np.asarray(bits, dtype=np.int64)
        parity = np.empty(len(bits), dtype=np.int8)
        s = 0
        for k, u in enumerate(bits):
            parity[k] = self.parity[s, u]
            s = self.next_state[s, u]

        tail_sys = np.empty(self.memory if terminate else 0, dtype=np.int8)
        tail_par = np.empty_like(tail_sys)
        if terminate:
            for j in range(self.memory):
                u = self.tail_input[s]
                tail_sys[j] = u
                tail_par[j] = self.parity[s, u]
                s = self.next_state[s, u]
        return parity, tail_sys, tail_par


@lru_cache(maxsize=8)
def _rsc(feedback: int, feedforward: int) -> Rsc:
    return Rsc(feedback, feedforward)


@dataclass(frozen=True)
class TurboCodeSpec:
    info_length: int = 2400
    feedback: int = 0o7
    feedforward: int = 0o5
    iterations: int = 4
    log_sum: LogSum = LogSum.APPROX
    interleaver_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "log_sum", LogSum(self.log_sum))
        if self.info_length < 1:
            raise ValueError(f"info_length must be positive, got {self.info_length}")
        if self.iterations < 1:
            raise ValueError(f"turbo iterations must be >= 1, got {self.iterations}")
        _rsc(self.feedback, self.feedforward)

    @property
    def rsc(self) -> Rsc:
        return _rsc(self.feedback, self.feedforward)

    @property
    def constraint_length(self) -> int:
        return self.rsc.memory + 1

    @property
    def rate(self) -> float:
        return 0.5

    @property
    def coded_length(self) -> int:
        return 2 * self.info_length + 2 * self.rsc.memory


@dataclass(frozen=True, eq=False)
class Interleaver:
    perm: np.ndarray
    inverse: np.ndarray = field(init=False)

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(len(perm))):
            raise ValueError("interleaver must be a permutation of 0..n-1")
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "inverse", np.argsort(perm))

    @property
    def length(self) -> int:
        return len(self.perm)

    def interleave(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if len(x) != self.length:
            raise ValueError(f"length {len(x)} != interleaver length {self.length}")
        return x[self.perm]

    def deinterleave(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if len(x) != self.length:
            raise ValueError(f"length {len(x)} != interleaver length {self.length}")
        return x[self.inverse]


def build_interleaver(length: int, seed: int | np.random.SeedSequence) -> Interleaver:
    """Uniform random permutation drawn from `seed`."""
    if length < 1:
        raise ValueError(f"interleaver length must be positive, got {length}")
    return Interleaver(np.random.default_rng(seed).permutation(length))


@lru_cache(maxsize=16)
def frame_roles(info_length: int, memory: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Role and time index of every transmitted coded bit.

    Time is the info index for systematic/parity bits (the interleaved-domain
    index for parity 2) and the tail step for tail bits.
    """
    k = np.arange(info_length)
    roles = np.empty(2 * info_length + 2 * memory, dtype=np.int8)
    times = np.empty_like(roles, dtype=np.int64)
    roles[0:2 * info_length:2] = BitRole.SYSTEMATIC
    roles[1:2 * info_length:2] = np.where(k % 2 == 0, BitRole.PARITY1, BitRole.PARITY2)
    times[0:2 * info_length:2] = k
    times[1:2 * info_length:2] = k

    j = np.arange(memory)
    roles[2 * info_length::2] = BitRole.TAIL_SYSTEMATIC
    roles[2 * info_length + 1::2] = BitRole.TAIL_PARITY
    times[2 * info_length::2] = j
    times[2 * info_length + 1::2] = j
    roles.setflags(write=False)
    times.setflags(write=False)
    return roles, times


@dataclass(frozen=True, eq=False)
class CodedFrame:
    systematic: np.ndarray
    parity1: np.ndarray           # full, before puncturing
    parity2: np.ndarray           # full, before puncturing
    tail_systematic: np.ndarray
    tail_parity: np.ndarray
    bits: np.ndarray              # transmitted order, 0/1
    roles: np.ndarray
    times: np.ndarray

    def __len__(self):
        return len(self.bits)


def encode(info: np.ndarray, spec: TurboCodeSpec, interleaver: Interleaver) -> CodedFrame:
    """Encode one block of 0/1 info bits."""
    info = np.asarray(info, dtype=np.int8)
    if info.ndim != 1 or len(info) != spec.info_length:
        raise ValueError(f"expected {spec.info_length} info bits, got shape {info.shape}")
    if interleaver.length != spec.info_length:
        raise ValueError(f"interleaver length {interleaver.length} != {spec.info_length}")

    rsc = spec.rsc
    p1, tail_sys, tail_par = rsc.encode(info, terminate=True)
    p2, _, _ = rsc.encode(interleaver.interleave(info), terminate=False)

    roles, times = frame_roles(spec.info_length, rsc.memory)
    sources = {
        BitRole.SYSTEMATIC: info,
        BitRole.PARITY1: p1,
        BitRole.PARITY2: p2,
        BitRole.TAIL_SYSTEMATIC: tail_sys,
        BitRole.TAIL_PARITY: tail_par,
    }
    bits = np.empty(len(roles), dtype=np.int8)
    for role, source in sources.items():
        sel = roles == role
        bits[sel] = source[times[sel]]

    return CodedFrame(info.copy(), p1, p2, tail_sys, tail_par, bits, roles, times)


@dataclass
class SisoOutput:
    info_app: np.ndarray
    info_extrinsic: np.ndarray
    parity_extrinsic: np.ndarray


def siso_decode(rsc: Rsc, sys_llr: np.ndarray, apriori: np.ndarray, par_llr: np.ndarray,
                terminated: bool, mode: LogSum | str = LogSum.EXACT) -> SisoOutput:
    """
    Log-domain BCJR over one constituent trellis.

    LLRs are ln(P(bit=0)/P(bit=1)), the signed-bit convention with 0 <-> +1.

    Args:
        sys_llr: channel LLRs of the input bits
        apriori: a-priori LLRs of the input bits
        par_llr: channel LLRs of the parity bits (0 where punctured)
        terminated: trellis ends in the zero state

    Returns:
        SisoOutput with input APP/extrinsic and parity extrinsic LLRs
    """
    mode = LogSum(mode)
    sys_llr = np.asarray(sys_llr, dtype=float)
    apriori = np.asarray(apriori, dtype=float)
    par_llr = np.asarray(par_llr, dtype=float)
    n = len(sys_llr)
    if len(apriori) != n or len(par_llr) != n:
        raise ValueError("systematic, a-priori and parity LLR lengths differ")

    u_sign = np.array([1.0, -1.0])
    p_sign = 1.0 - 2.0 * rsc.parity
    gamma = 0.5 * ((sys_llr + apriori)[:, None, None] * u_sign[None, None, :]
                   + par_llr[:, None, None] * p_sign[None])

    n_states = rsc.n_states
    start = np.full(n_states, -np.inf)
    start[0] = 0.0

    ps0, ps1 = rsc.prev_state[:, 0], rsc.prev_state[:, 1]
    g0 = gamma[:, ps0, rsc.prev_input[:, 0]]
    g1 = gamma[:, ps1, rsc.prev_input[:, 1]]

    alpha = np.empty((n + 1, n_states))
    alpha[0] = start
    for k in range(n):
        a = alpha[k]
        nxt = max_star(a[ps0] + g0[k], a[ps1] + g1[k], mode)
        alpha[k + 1] = nxt - nxt.max()

    beta = np.empty((n + 1, n_states))
    beta[n] = start if terminated else 0.0
    ns0, ns1 = rsc.next_state[:, 0], rsc.next_state[:, 1]
    for k in range(n - 1, -1, -1):
        b = beta[k + 1]
        prv = max_star(b[ns0] + gamma[k, :, 0], b[ns1] + gamma[k, :, 1], mode)
        beta[k] = prv - prv.max()

    branch = alpha[:-1, :, None] + gamma + beta[1:][:, rsc.next_state]
    flat = branch.reshape(n, -1)
    u_zero = np.broadcast_to(np.array([True, False]), (n_states, 2)).reshape(-1)
    p_zero = (rsc.parity == 0).reshape(-1)

    info_app = (max_star_reduce(np.where(u_zero, flat, -np.inf), axis=1, mode=mode)
                - max_star_reduce(np.where(u_zero, -np.inf, flat), axis=1, mode=mode))
    par_app = (max_star_reduce(np.where(p_zero, flat, -np.inf), axis=1, mode=mode)
               - max_star_reduce(np.where(p_zero, -np.inf, flat), axis=1, mode=mode))

    return SisoOutput(
        info_app=info_app,
        info_extrinsic=info_app - sys_llr - apriori,
        parity_extrinsic=par_app - par_llr,
    )


def viterbi_decode(rsc: Rsc, sys_llr: np.ndarray, par_llr: np.ndarray,
                   apriori: np.ndarray | None = None, terminated: bool = True) -> np.ndarray:
    """Maximum-likelihood input sequence (0/1) for one constituent."""
    sys_llr = np.asarray(sys_llr, dtype=float)
    par_llr = np.asarray(par_llr, dtype=float)
    n = len(sys_llr)
    apriori = np.zeros(n) if apriori is None else np.asarray(apriori, dtype=float)

    u_sign = np.array([1.0, -1.0])
    p_sign = 1.0 - 2.0 * rsc.parity
    gamma = 0.5 * ((sys_llr + apriori)[:, None, None] * u_sign[None, None, :]
                   + par_llr[:, None, None] * p_sign[None])

    ps0, ps1 = rsc.prev_state[:, 0], rsc.prev_state[:, 1]
    g0 = gamma[:, ps0, rsc.prev_input[:, 0]]
    g1 = gamma[:, ps1, rsc.prev_input[:, 1]]

    metric = np.full(rsc.n_states, -np.inf)
    metric[0] = 0.0
    choice = np.empty((n, rsc.n_states), dtype=np.int8)
    for k in range(n):
        c0 = metric[ps0] + g0[k]
        c1 = metric[ps1] + g1[k]
        choice[k] = c1 > c0
        metric = np.where(c1 > c0, c1, c0)

    s = 0 if terminated else int(np.argmax(metric))
    decided = np.empty(n, dtype=np.int8)
    for k in range(n - 1, -1, -1):
        branch = choice[k, s]
        decided[k] = rsc.prev_input[s, branch]
        s = rsc.prev_state[s, branch]
    return decided


@dataclass
class TurboDecodeResult:
    info_app: np.ndarray          # (info_length,) ln P(0)/P(1)
    coded_extrinsic: np.ndarray   # (coded_length,) transmitted order
    info_bits: np.ndarray         # hard decisions 0/1


def decode(llrs: np.ndarray, spec: TurboCodeSpec, interleaver: Interleaver,
           iterations: int | None = None) -> TurboDecodeResult:
    """
    Iterative decoding of one received block.

    Args:
        llrs: channel LLRs per transmitted coded bit, ln P(0)/P(1)
        spec: code parameters
        interleaver: the interleaver used by the encoder
        iterations: overrides spec.iterations

    Returns:
        TurboDecodeResult with info APPs and extrinsic LLRs on all coded bits
    """
    iterations = spec.iterations if iterations is None else iterations
    if iterations < 1:
        raise ValueError(f"turbo iterations must be >= 1, got {iterations}")
    llrs = np.asarray(llrs, dtype=float)
    if llrs.shape != (spec.coded_length,):
        raise ValueError(f"expected {spec.coded_length} coded LLRs, got shape {llrs.shape}")

    rsc = spec.rsc
    n_info = spec.info_length
    roles, times = frame_roles(n_info, rsc.memory)

    def gather(role: BitRole, length: int) -> np.ndarray:
        out = np.zeros(length)
        sel = roles == role
        out[times[sel]] = llrs[sel]
        return out

    sys = gather(BitRole.SYSTEMATIC, n_info)
    par1 = np.concatenate([gather(BitRole.PARITY1, n_info), gather(BitRole.TAIL_PARITY, rsc.memory)])
    sys1 = np.concatenate([sys, gather(BitRole.TAIL_SYSTEMATIC, rsc.memory)])
    par2 = gather(BitRole.PARITY2, n_info)
    sys2 = interleaver.interleave(sys)
    tail_prior = np.zeros(rsc.memory)

    le21 = np.zeros(n_info)
    for _ in range(iterations):
        out1 = siso_decode(rsc, sys1, np.concatenate([le21, tail_prior]), par1,
                           terminated=True, mode=spec.log_sum)
        le12 = out1.info_extrinsic[:n_info]
        out2 = siso_decode(rsc, sys2, interleaver.interleave(le12), par2,
                           terminated=False, mode=spec.log_sum)
        le21 = interleaver.deinterleave(out2.info_extrinsic)

    info_app = sys + le12 + le21

    coded_ext = np.empty(spec.coded_length)
    by_role = {
        BitRole.SYSTEMATIC: le12 + le21,
        BitRole.PARITY1: out1.parity_extrinsic[:n_info],
        BitRole.PARITY2: out2.parity_extrinsic,
        BitRole.TAIL_SYSTEMATIC: out1.info_extrinsic[n_info:],
        BitRole.TAIL_PARITY: out1.parity_extrinsic[n_info:],
    }
    for role, values in by_role.items():
        sel = roles == role
        coded_ext[sel] = values[times[sel]]

    return TurboDecodeResult(
        info_app=info_app,
        coded_extrinsic=coded_ext,
        info_bits=(info_app < 0).astype(np.int8),
    )
