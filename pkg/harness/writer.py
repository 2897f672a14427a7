import csv
import logging
import os
import re

from harness.metrics import RunReport

log = logging.getLogger(__name__)


class ResultWriter:
    """Writes result tables as CSV files headed by '# key=value' config lines."""

    def __init__(self, base_dir: str):
        self.base_dir = base_dir
        os.makedirs(base_dir, exist_ok=True)

    def _path(self, name: str) -> str:
        return os.path.join(self.base_dir, name)

    def write_table(self, name: str, header: list[str], rows: list[tuple],
                    meta: dict[str, str]) -> str:
        """Write one table and return its path."""
        filepath = self._path(name)
        try:
            with open(filepath, "w", newline="", encoding="utf-8") as f:
                for key, value in meta.items():
                    f.write(f"# {key}={value}\n")
                writer = csv.writer(f)
                writer.writerow(header)
                writer.writerows(rows)
        except OSError as e:
            log.error(f"Error writing {filepath}: {e}")
            raise
        log.info(f"Wrote {filepath} ({len(rows)} rows)")
        return filepath

    def write_report(self, report: RunReport) -> list[str]:
        """Write every table the report carries."""
        meta = {**report.config, "seed": str(report.seed), "timestamp": report.timestamp}
        paths = []

        if report.ber_points:
            rows = [(f"{p.ebn0_db:g}", p.iteration, p.bit_errors, p.bits, f"{p.ber:.6e}",
                     p.frame_errors, p.frames) for p in report.ber_points]
            stops = {f"{p.ebn0_db:g}": p.stopped_on for p in report.ber_points}
            ber_meta = {**meta, "stopped_on": ",".join(f"{k}:{v}" for k, v in stops.items())}
            for name, per_iter in report.op_counts.items():
                ber_meta[f"ops_per_use[{name}]"] = ",".join(f"{v:.1f}" for v in per_iter)
            paths.append(self.write_table(
                "ber.csv",
                ["ebn0_db", "iter", "bit_errors", "bits", "ber", "frame_errors", "frames"],
                rows, ber_meta,
            ))

        if report.exit_points:
            rows = [(f"{e.ia:g}", f"{e.ie:.6f}", e.detector, f"{e.ebn0_db:g}", e.kind)
                    for e in report.exit_points]
            paths.append(self.write_table("exit.csv", ["ia", "ie", "detector", "ebn0_db", "kind"], rows, meta))

        if report.trajectory:
            rows = [(t.iteration, f"{t.detector_ia:.6f}", f"{t.detector_ie:.6f}",
                     "" if t.decoder_ie is None else f"{t.decoder_ie:.6f}") for t in report.trajectory]
            paths.append(self.write_table(
                "exit_trajectory.csv", ["iter", "detector_ia", "detector_ie", "decoder_ie"], rows, meta,
            ))

        for c in report.consistency:
            name = "consistency.csv"
            if len(report.consistency) > 1:
                name = f"consistency_{_slug(c.label)}.csv"
            fit_meta = {
                **meta,
                "label": c.label,
                "samples": str(c.samples),
                "slope": f"{c.slope:.6f}",
                "slope_ci": f"{c.slope_ci[0]:.6f},{c.slope_ci[1]:.6f}",
                "intercept": f"{c.intercept:.6f}",
                "intercept_ci": f"{c.intercept_ci[0]:.6f},{c.intercept_ci[1]:.6f}",
            }
            rows = [(f"{x:.6f}", f"{r:.6f}", int(n)) for x, r, n in zip(c.bin_centers, c.log_ratios, c.counts)]
            paths.append(self.write_table(name, ["bin_center", "log_ratio", "count"], rows, fit_meta))

        if report.probe is not None:
            probe = report.probe
            rows = [(it.iteration, f"{it.ber:.6e}",
                     "" if it.mean_abs_delta is None else f"{it.mean_abs_delta:.6e}",
                     "" if it.frac_positive is None else f"{it.frac_positive:.6f}",
                     "" if it.frac_negative is None else f"{it.frac_negative:.6f}",
                     "" if it.frac_converged is None else f"{it.frac_converged:.6f}")
                    for it in probe.iterations]
            probe_meta = {**meta, "epsilon": f"{probe.epsilon:g}",
                          "sign_change_fraction": f"{probe.sign_change_fraction:.6f}"}
            paths.append(self.write_table(
                "pda_probe.csv",
                ["it_i", "ber", "mean_abs_delta_p", "frac_positive", "frac_negative", "frac_converged"],
                rows, probe_meta,
            ))

        if report.mixture:
            rows = [(d.stream, d.symbol, d.dimension, f"{x:.6f}", f"{mix:.6e}", f"{gauss:.6e}")
                    for d in report.mixture for x, mix, gauss in zip(d.grid, d.mixture, d.gaussian)]
            mix_meta = {**meta}
            for d in report.mixture:
                mix_meta[f"l1[{d.stream}:{d.symbol}:{d.dimension}]"] = f"{d.l1:.6f}"
            paths.append(self.write_table(
                "mixture.csv",
                ["stream", "symbol", "dimension", "x", "mixture_pdf", "gaussian_pdf"],
                rows, mix_meta,
            ))

        if report.complexity:
            rows = [(r.nt, r.nr, r.m_order, r.detector, f"{r.counted_ops:.1f}", r.analytic_ops, f"{r.setup_ops:.1f}")
                    for r in report.complexity]
            paths.append(self.write_table(
                "complexity.csv",
                ["nt", "nr", "m_order", "detector", "counted_ops", "analytic_ops", "setup_ops"],
                rows, meta,
            ))

        return paths


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_").lower()


def read_table(filepath: str) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Read a table written by ResultWriter back as (meta, rows)."""
    meta = {}
    with open(filepath, encoding="utf-8") as f:
        lines = f.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# ") and "=" in line:
            key, value = line[2:].split("=", 1)
            meta[key] = value
        else:
            body.append(line)
    return meta, list(csv.DictReader(body))
