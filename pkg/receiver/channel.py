"""
Nakagami-m MIMO channel, AWGN, channel-estimation error and SNR calibration.
"""

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class NoiseSpec:
    sigma2: float   # per real dimension

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"noise variance must be positive, got {self.sigma2}")

    @property
    def n0(self) -> float:
        return 2.0 * self.sigma2


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """True channel plus the estimate the receiver works with."""
    h: np.ndarray                   # (N_r, N_t) or (uses, N_r, N_t)
    m: float
    omega: float
    h_est: np.ndarray | None = None
    rho: float = 1.0

    @property
    def receiver_view(self) -> np.ndarray:
        return self.h if self.h_est is None else self.h_est

    def with_estimate(self, h_est: np.ndarray, rho: float) -> "ChannelRealization":
        if np.shape(h_est) != self.h.shape:
            raise ValueError(f"estimate shape {np.shape(h_est)} != channel shape {self.h.shape}")
        return replace(self, h_est=np.asarray(h_est, dtype=complex), rho=rho)


def sample_channel(m: float, omega: float, n_r: int, n_t: int, rng: np.random.Generator,
                   uses: int | None = None, per_frame: bool = False) -> ChannelRealization:
    """
    Draw i.i.d. Nakagami-m entries r*e^{j theta}.

    r^2 ~ Gamma(shape=m, scale=omega/m) and theta ~ U[0, 2pi), independent.

    Args:
        m: fading parameter, m >= 0.5 (m = 1 is Rayleigh)
        omega: mean square envelope E[r^2]
        uses: when given, return a (uses, N_r, N_t) stack
        per_frame: with `uses`, draw once and hold it for the whole stack
    """
    if m < 0.5:
        raise ValueError(f"Nakagami m must be >= 0.5, got {m}")
    if omega <= 0:
        raise ValueError(f"omega must be positive, got {omega}")
    if n_r < 1 or n_t < 1:
        raise ValueError(f"antenna counts must be positive, got {n_r}x{n_t}")

    if uses is None:
        shape = (n_r, n_t)
    else:
        shape = (1 if per_frame else uses, n_r, n_t)

    power = rng.gamma(shape=m, scale=omega / m, size=shape)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=shape)
    h = np.sqrt(power) * np.exp(1j * theta)

    if uses is not None and per_frame:
        h = np.repeat(h, uses, axis=0)
    return ChannelRealization(h=h, m=m, omega=omega)


def corrupt_csi(h: np.ndarray, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Imperfect estimate rho*H + sqrt(1 - rho^2)*dH with unit-variance complex Gaussian dH."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    h = np.asarray(h, dtype=complex)
    err = (rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)) / np.sqrt(2.0)
    return rho * h + np.sqrt(1.0 - rho * rho) * err


def add_noise(x: np.ndarray, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Add circular complex Gaussian noise with variance sigma2 per real dimension."""
    noise = NoiseSpec(sigma2)
    x = np.asarray(x, dtype=complex)
    std = np.sqrt(noise.sigma2)
    return x + std * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))


def ebn0_to_sigma2(ebn0_db: float, rate: float, bits_per_symbol: int, n_t: int,
                   es: float | None = None) -> float:
    """
    Per-dimension noise variance for a given Eb/N0.

    Eb = Es / (R * M_b * N_t) and N0 = 2 sigma^2; Es defaults to N_t
    (unit-energy symbols on every transmit antenna).
    """
    es = float(n_t) if es is None else es
    if rate <= 0 or rate > 1:
        raise ValueError(f"code rate must lie in (0, 1], got {rate}")
    if bits_per_symbol < 1 or n_t < 1 or es <= 0:
        raise ValueError("bits_per_symbol, n_t and es must be positive")
    return es / (2.0 * rate * bits_per_symbol * n_t * 10.0 ** (ebn0_db / 10.0))
