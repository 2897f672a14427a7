"""
Experiment configuration.

Defaults come from the environment (IDD_* keys, optionally via a .env file);
a flat key=value file and CLI flags override them in that order.
"""

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from dotenv import load_dotenv

from receiver.channel import ebn0_to_sigma2
from receiver.idd import DetectorKind, FrameLayout, IddConfig, build_frame_layout
from receiver.modem import Constellation, ModulationKind, build_constellation
from receiver.numerics import LogSum
from receiver.pda_detector import PdaConfig, Schedule
from receiver.turbo_fec import TurboCodeSpec

load_dotenv()


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _float_list(raw: str) -> list[float]:
    return [float(x) for x in raw.split(",") if x.strip()]


def _parse_bool(raw: str) -> bool:
    return raw.strip().lower() in ("1", "true", "yes", "on")


@dataclass
class ExperimentConfig:
    # MIMO arrangement and modulation
    nt: int = int(os.getenv("IDD_NT", "2"))
    nr: int = int(os.getenv("IDD_NR", "2"))
    modulation: str = os.getenv("IDD_MODULATION", "QAM")
    m_order: int = int(os.getenv("IDD_M_ORDER", "4"))

    # Channel
    nakagami_m: float = float(os.getenv("IDD_NAKAGAMI_M", "1.0"))
    omega: float = float(os.getenv("IDD_OMEGA", "1.0"))
    rho: float = float(os.getenv("IDD_RHO", "1.0"))
    estimated_csi: bool = _parse_bool(os.getenv("IDD_ESTIMATED_CSI", "true"))   # false: genie H at the receiver
    per_frame_channel: bool = _parse_bool(os.getenv("IDD_PER_FRAME_CHANNEL", "false"))
    ebn0_db: list = field(default_factory=list)

    # Receiver
    detector: str = os.getenv("IDD_DETECTOR", DetectorKind.PDA.value)
    it_o: int = int(os.getenv("IDD_IT_O", "3"))
    it_i: int = int(os.getenv("IDD_IT_I", "0"))
    it_tc: int = int(os.getenv("IDD_IT_TC", "4"))
    schedule: str = os.getenv("IDD_SCHEDULE", Schedule.SERIAL.value)
    pda_log_sum: str = os.getenv("IDD_PDA_LOG_SUM", LogSum.EXACT.value)
    downdate: bool = _parse_bool(os.getenv("IDD_DOWNDATE", "false"))
    pda_subtract_prior: bool = _parse_bool(os.getenv("IDD_PDA_SUBTRACT_PRIOR", "false"))
    turbo_log_sum: str = os.getenv("IDD_TURBO_LOG_SUM", LogSum.APPROX.value)
    info_length: int = int(os.getenv("IDD_INFO_LENGTH", "2400"))

    # Monte-Carlo
    min_frame_errors: int = int(os.getenv("IDD_MIN_FRAME_ERRORS", "100"))
    max_frames: int = int(os.getenv("IDD_MAX_FRAMES", "20000"))
    seed: int = int(os.getenv("IDD_SEED", "2024"))
    workers: int = int(os.getenv("IDD_WORKERS", "1"))
    out_dir: str = os.getenv("IDD_OUT_DIR", "results")

    # EXIT, consistency and PDA convergence studies
    ia_grid: list = field(default_factory=list)
    uncoded_uses: int = int(os.getenv("IDD_UNCODED_USES", "20000"))
    consistency_ia: float = float(os.getenv("IDD_CONSISTENCY_IA", "0.0"))
    probe_iterations: int = int(os.getenv("IDD_PROBE_ITERATIONS", "5"))
    probe_epsilon: float = float(os.getenv("IDD_PROBE_EPSILON", "0.001"))
    exit_frames: int = int(os.getenv("IDD_EXIT_FRAMES", "20"))       # coded frames per decoder EXIT point

    def __post_init__(self):
        if not self.ebn0_db:
            self.ebn0_db = _float_list(os.getenv("IDD_EBN0_DB", "0.0,0.5,1.0,1.5"))
        if not self.ia_grid:
            self.ia_grid = _float_list(os.getenv("IDD_IA_GRID", "0.0,0.2,0.4,0.6,0.8,0.9"))

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        """Environment defaults overridden by a flat key=value file."""
        cfg = cls()
        cfg.apply(read_config_file(path))
        return cfg

    def apply(self, overrides: dict[str, str | object]):
        """
        Override fields by name; string values are coerced to the field's type.

        Raises:
            ConfigError: unknown key or unparsable value
        """
        known = {f.name: f for f in fields(self)}
        for key, raw in overrides.items():
            name = key.strip().lower().replace("-", "_")
            if name not in known:
                raise ConfigError(f"unknown config key: {key}")
            current = getattr(self, name)
            if not isinstance(raw, str):
                setattr(self, name, raw)
                continue
            try:
                if isinstance(current, bool):
                    value = _parse_bool(raw)
                elif isinstance(current, int):
                    value = int(raw)
                elif isinstance(current, float):
                    value = float(raw)
                elif isinstance(current, list):
                    value = _float_list(raw)
                else:
                    value = raw.strip()
            except ValueError as e:
                raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from e
            setattr(self, name, value)

    def validate(self) -> list[str]:
        """
        Validate configuration.

        Returns:
            List of error messages (empty if valid)
        """
        errors = []

        if self.nt < 1 or self.nr < 1:
            errors.append("nt and nr must be positive")
        try:
            self.constellation()
        except ValueError as e:
            errors.append(f"modulation: {e}")
        if self.nakagami_m < 0.5:
            errors.append("nakagami_m must be >= 0.5")
        if self.omega <= 0:
            errors.append("omega must be positive")
        if not 0.0 <= self.rho <= 1.0:
            errors.append("rho must lie in [0, 1]")
        if not self.ebn0_db:
            errors.append("ebn0_db sweep must not be empty")

        if self.detector not in {d.value for d in DetectorKind}:
            errors.append(f"detector must be one of {[d.value for d in DetectorKind]}")
        if self.it_o < 0 or self.it_i < 0:
            errors.append("it_o and it_i must be >= 0")
        if self.it_tc < 1:
            errors.append("it_tc must be >= 1")
        if self.schedule not in {s.value for s in Schedule}:
            errors.append(f"schedule must be one of {[s.value for s in Schedule]}")
        if self.pda_log_sum not in (LogSum.EXACT.value, LogSum.MAX_LOG.value):
            errors.append("pda_log_sum must be exact or max-log")
        if self.turbo_log_sum not in {m.value for m in LogSum}:
            errors.append(f"turbo_log_sum must be one of {[m.value for m in LogSum]}")
        if self.info_length < 16:
            errors.append("info_length must be at least 16")

        if self.min_frame_errors < 1:
            errors.append("min_frame_errors must be >= 1")
        if self.max_frames < 1:
            errors.append("max_frames must be >= 1")
        if self.workers < 1:
            errors.append("workers must be >= 1")

        if any(not 0.0 <= ia < 1.0 for ia in self.ia_grid):
            errors.append("ia_grid values must lie in [0, 1)")
        if not 0.0 <= self.consistency_ia < 1.0:
            errors.append("consistency_ia must lie in [0, 1)")
        if self.uncoded_uses < 1:
            errors.append("uncoded_uses must be positive")
        if self.probe_iterations < 1:
            errors.append("probe_iterations must be >= 1")
        if self.probe_epsilon <= 0:
            errors.append("probe_epsilon must be positive")
        if self.exit_frames < 1:
            errors.append("exit_frames must be >= 1")

        return errors

    def ensure_valid(self):
        errors = self.validate()
        if errors:
            raise ConfigError("; ".join(errors))

    # Builders for the receiver objects

    def constellation(self) -> Constellation:
        return _constellation(self.modulation.upper(), self.m_order)

    def code(self) -> TurboCodeSpec:
        return TurboCodeSpec(
            info_length=self.info_length,
            iterations=self.it_tc,
            log_sum=self.turbo_log_sum,
            interleaver_seed=self.seed,
        )

    def pda(self) -> PdaConfig:
        return PdaConfig(
            inner_iterations=self.it_i,
            log_sum=self.pda_log_sum,
            schedule=self.schedule,
            use_downdate_inverse=self.downdate,
        )

    def idd(self) -> IddConfig:
        return IddConfig(
            detector=self.detector,
            outer_iterations=self.it_o,
            pda=self.pda(),
            code=self.code(),
            use_estimated_csi=self.estimated_csi,
            pda_subtract_prior=self.pda_subtract_prior,
        )

    def layout(self) -> FrameLayout:
        return build_frame_layout(self.code(), self.constellation(), self.nt, seed=self.seed + 1)

    def sigma2(self, ebn0_db: float, rate: float = 0.5) -> float:
        return ebn0_to_sigma2(ebn0_db, rate, self.constellation().bits_per_symbol, self.nt)

    def echo(self) -> dict[str, str]:
        """Flat view of every field, for result-file headers."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                value = ",".join(f"{v:g}" for v in value)
            out[f.name] = str(value)
        return out

    def __str__(self):
        return (
            f"ExperimentConfig({self.nt}x{self.nr} {self.m_order}{self.modulation.upper()}, "
            f"m={self.nakagami_m:g}, rho={self.rho:g}, detector={self.detector}, "
            f"it_o={self.it_o}, it_i={self.it_i}, it_tc={self.it_tc})"
        )


_CONSTELLATIONS: dict[tuple[str, int], Constellation] = {}


def _constellation(kind: str, order: int) -> Constellation:
    key = (kind, order)
    if key not in _CONSTELLATIONS:
        _CONSTELLATIONS[key] = build_constellation(ModulationKind(kind), order)
    return _CONSTELLATIONS[key]


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse key=value lines; '#' starts a comment."""
    values = {}
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e

    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values
