"""
Command-line runner for the receiver experiments.

Usage:
    python -m harness.run ber --ebn0-db 0,0.5,1,1.5 --it-o 3 --workers 8
    python -m harness.run exit --detectors ab-log-pda,exact-log-map --ia-grid 0,0.5,0.9
    python -m harness.run consistency --detector ab-log-pda --inner-iterations 0,1,2
    python -m harness.run pda-probe --ebn0-db 4 --probe-iterations 5
    python -m harness.run complexity --grid 2:4,2:16,4:4,4:16
    python -m harness.run mixture --nt 2 --nr 2 --ebn0-db 6 --mixture-ia 0.5
"""

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from harness.config import ConfigError, ExperimentConfig, read_config_file
from harness.experiments import (
    complexity_report,
    measure_exit,
    pda_convergence_probe,
    run_ber_experiment,
    run_consistency,
)
from harness.metrics import format_report
from harness.mixture import gaussian_mixture_study
from harness.writer import ResultWriter

log = logging.getLogger("run")

SUBCOMMANDS = ("ber", "exit", "consistency", "pda-probe", "complexity", "mixture")


def _int_list(raw: str) -> list[int]:
    return [int(x) for x in raw.split(",") if x.strip()]


def _grid(raw: str) -> list[tuple[int, ...]]:
    """'2:4,2:8:16' -> [(2, 4), (2, 8, 16)], i.e. N:M or N_t:N_r:M"""
    out = []
    for item in raw.split(","):
        parts = tuple(int(x) for x in item.split(":"))
        if len(parts) not in (2, 3):
            raise argparse.ArgumentTypeError(f"grid entry {item!r} is not N:M or N_t:N_r:M")
        out.append(parts)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="Flat key=value file with config overrides")
    common.add_argument("--out", dest="out_dir", type=str, help="Output directory for CSV files")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    for f in fields(ExperimentConfig):
        if f.name == "out_dir":
            continue
        common.add_argument(
            f"--{f.name.replace('_', '-')}",
            dest=f.name,
            type=str,
            default=None,
            help=f"Override {f.name} (env IDD_{f.name.upper()})",
        )

    parser = argparse.ArgumentParser(description="IDD receiver experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ber", parents=[common], help="BER/FER versus Eb/N0 per outer iteration")

    p_exit = sub.add_parser("exit", parents=[common], help="Detector and decoder EXIT characteristics")
    p_exit.add_argument("--detectors", type=str, default=None,
                        help="Comma-separated detectors (default: --detector)")
    p_exit.add_argument("--with-decoder", action="store_true",
                        help="Add the turbo decoder curve over the same I_A grid")
    p_exit.add_argument("--trajectory", action="store_true",
                        help="Add the per-pass MI of the coded receiver at the first Eb/N0")

    p_cons = sub.add_parser("consistency", parents=[common], help="LLR consistency regression")
    p_cons.add_argument("--inner-iterations", type=_int_list, default=None,
                        help="PDA inner-iteration counts to compare, e.g. 0,1,2")

    sub.add_parser("pda-probe", parents=[common], help="Uncoded PDA convergence probe")

    p_cx = sub.add_parser("complexity", parents=[common], help="Counted vs analytic operations")
    p_cx.add_argument("--grid", type=_grid, default=None, help="N:M or N_t:N_r:M entries, e.g. 2:4,2:8:16")
    p_cx.add_argument("--uses", type=int, default=8, help="Channel uses per instrumented run")

    p_mix = sub.add_parser("mixture", parents=[common],
                           help="Exact interference-plus-noise PDF versus its Gaussian model")
    p_mix.add_argument("--mixture-ia", type=float, default=0.0,
                       help="A-priori MI behind the other streams' probabilities")
    p_mix.add_argument("--stream", type=int, default=0, help="Conditioned stream")
    p_mix.add_argument("--dimension", type=int, default=0, help="Component of [Re y; Im y]")
    p_mix.add_argument("--points", type=int, default=401, help="Grid points")

    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Environment < --config file < CLI flags."""
    cfg = ExperimentConfig()
    if args.config:
        cfg.apply(read_config_file(args.config))

    overrides = {}
    for f in fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    cfg.apply(overrides)

    errors = cfg.validate()
    if errors:
        raise ConfigError("\n".join(errors))
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)-5s %(name)s | %(message)s",
        datefmt="%H:%M:%S",
    )

    try:
        cfg = load_config(args)
    except ConfigError as e:
        for line in str(e).splitlines():
            print(f"Config error: {line}", file=sys.stderr)
        return 2

    log.info(f"{args.command}: {cfg}")

    if args.command == "ber":
        report = run_ber_experiment(cfg)
    elif args.command == "exit":
        detectors = args.detectors.split(",") if args.detectors else None
        report = measure_exit(cfg, detectors=detectors, with_decoder=args.with_decoder,
                              trajectory=args.trajectory)
    elif args.command == "consistency":
        report = run_consistency(cfg, inner_iterations=args.inner_iterations)
    elif args.command == "pda-probe":
        report = pda_convergence_probe(cfg)
    elif args.command == "mixture":
        report = gaussian_mixture_study(cfg, ia=args.mixture_ia, stream=args.stream,
                                        dimension=args.dimension, points=args.points)
    else:
        report = complexity_report(grid=args.grid, uses=args.uses, seed=cfg.seed)

    print(format_report(report))
    ResultWriter(cfg.out_dir).write_report(report)
    return 0


if __name__ == "__main__":
    sys.exit(main())
