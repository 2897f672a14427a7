"""
Tests for the experiment harness: configuration, statistics, result files,
the CLI and the Monte-Carlo drivers.

The reproduction runs at the bottom take tens of minutes; they only run
with IDD_RUN_SLOW=1.
"""

import os
import sys
import tempfile
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from harness.config import ConfigError, ExperimentConfig, read_config_file
from harness.experiments import (
    complexity_report,
    consistency_test,
    decoder_exit,
    idd_trajectory,
    measure_exit,
    pda_convergence_probe,
    run_ber_experiment,
)
from harness.metrics import (
    BerPoint,
    InsufficientSamplesError,
    RunReport,
    aggregate_ber,
    consistency_from_llrs,
    format_report,
    gaussian_priors,
    j_function,
    j_inverse,
    map_analytic_ops,
    mutual_information,
    pda_analytic_ops,
)
from harness.run import main
from harness.simulator import FrameSimulator
from harness.writer import ResultWriter, read_table

RUN_SLOW = os.getenv("IDD_RUN_SLOW", "").lower() in ("1", "true", "yes")
slow = pytest.mark.skipif(not RUN_SLOW, reason="set IDD_RUN_SLOW=1 for reproduction runs")


def _small_cfg(**overrides) -> ExperimentConfig:
    """2x2 4QAM Rayleigh with a short code, cheap enough for unit tests."""
    cfg = ExperimentConfig()
    cfg.apply({
        "nt": 2, "nr": 2, "modulation": "QAM", "m_order": 4,
        "nakagami_m": 1.0, "omega": 1.0, "rho": 1.0, "estimated_csi": True,
        "per_frame_channel": False,
        "detector": "ab-log-pda", "it_o": 1, "it_i": 0, "it_tc": 2,
        "schedule": "serial", "downdate": False, "pda_subtract_prior": False,
        "info_length": 64, "ebn0_db": [0.0], "min_frame_errors": 3, "max_frames": 10,
        "seed": 7, "workers": 1, "uncoded_uses": 2000, "consistency_ia": 0.0,
    })
    cfg.apply(overrides)
    return cfg


# =============================================================================
# Configuration
# =============================================================================

def test_default_config_is_valid():
    cfg = _small_cfg()
    assert cfg.validate() == []
    assert cfg.constellation().order == 4
    assert cfg.layout().channel_uses == (2 * 64 + 4) // 4
    print("[OK] default config validates")


def test_apply_coerces_strings():
    cfg = _small_cfg()
    cfg.apply({"nt": "4", "EBN0-DB": "1, 2.5", "downdate": "yes",
               "detector": "exact-log-map", "rho": "0.97"})
    assert cfg.nt == 4
    assert cfg.ebn0_db == [1.0, 2.5]
    assert cfg.downdate is True
    assert cfg.detector == "exact-log-map"
    assert cfg.rho == 0.97
    assert cfg.idd().use_estimated_csi
    print("[OK] string overrides coerced")


def test_apply_rejects_unknown_and_bad_values():
    cfg = _small_cfg()
    with pytest.raises(ConfigError):
        cfg.apply({"antennas": "2"})
    with pytest.raises(ConfigError):
        cfg.apply({"nt": "two"})
    print("[OK] bad overrides rejected")


def test_validate_collects_errors():
    cfg = _small_cfg(nakagami_m=0.3, rho=1.5, detector="sphere", m_order=6, it_tc=0,
                     ia_grid=[0.5, 1.0])
    errors = cfg.validate()
    joined = " ".join(errors)
    for needle in ("nakagami_m", "rho", "detector", "modulation", "it_tc", "ia_grid"):
        assert needle in joined, needle
    with pytest.raises(ConfigError):
        cfg.ensure_valid()
    print(f"[OK] validate collected {len(errors)} errors")


def test_config_file():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "run.cfg"
        path.write_text(
            "# 4x4 run\n"
            "nt = 4\n"
            "nr=4   # receive antennas\n"
            "\n"
            "ebn0_db = 0,1,2\n",
            encoding="utf-8",
        )
        cfg = ExperimentConfig.from_file(path)
        assert (cfg.nt, cfg.nr) == (4, 4)
        assert cfg.ebn0_db == [0.0, 1.0, 2.0]

        path.write_text("nt 4\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            read_config_file(path)
        with pytest.raises(ConfigError):
            read_config_file(Path(tmp) / "missing.cfg")
    print("[OK] key=value config file")


def test_receiver_channel_follows_csi_flag():
    """With rho < 1 the receiver sees the estimate unless the flag hands it the true H."""
    def noiseless_fit(estimated):
        cfg = _small_cfg(rho=0.5, estimated_csi=estimated)
        sim = FrameSimulator(cfg)
        batch = sim.uncoded_batch(np.random.default_rng(3), 200, 80.0)
        clean = np.einsum("urk,uk->ur", batch.h, sim.constellation.points[batch.indices])
        return np.max(np.abs(batch.y - clean))

    assert noiseless_fit(False) < 1e-3
    assert noiseless_fit(True) > 0.1
    assert _small_cfg(estimated_csi="false").idd().use_estimated_csi is False
    print("[OK] receiver channel follows the CSI flag")


def test_sigma2_and_echo():
    cfg = _small_cfg(ebn0_db=[0.0, 10.0])
    assert np.isclose(cfg.sigma2(0.0), 0.5)
    assert np.isclose(cfg.sigma2(10.0), 0.05)
    echo = cfg.echo()
    assert echo["ebn0_db"] == "0,10"
    assert echo["nt"] == "2"
    assert set(echo) >= {"detector", "it_o", "seed", "nakagami_m"}
    print("[OK] sigma2 and config echo")


# =============================================================================
# Mutual information and the J-function
# =============================================================================

def test_mutual_information_limits():
    rng = np.random.default_rng(0)
    bits = rng.choice([-1, 1], 10_000)
    assert mutual_information(np.zeros(10_000), bits) == 0.0
    assert mutual_information(40.0 * bits, bits) > 0.999
    with pytest.raises(ValueError):
        mutual_information(np.zeros(3), np.ones(4))
    print("[OK] mutual information limits")


def test_j_function():
    assert j_function(0.0) == 0.0
    assert j_function(20.0) >= 0.999
    assert 0.0 < j_function(1.0) < j_function(2.0) < j_function(4.0) < 1.0
    for x in (0.05, 0.3, 0.5, 0.8, 0.95, 0.99):
        assert abs(j_function(j_inverse(x)) - x) <= 1e-4, x
    assert j_inverse(0.0) == 0.0
    with pytest.raises(ValueError):
        j_inverse(1.0)
    print("[OK] J-function and inverse")


def test_gaussian_priors_carry_requested_information():
    rng = np.random.default_rng(1)
    bits = rng.choice([-1, 1], 400_000)
    for ia in (0.2, 0.5, 0.9):
        llrs = gaussian_priors(bits, j_inverse(ia), rng)
        assert abs(mutual_information(llrs, bits) - ia) <= 0.01, ia
    print("[OK] Gaussian priors carry I_A")


# =============================================================================
# Consistency regression
# =============================================================================

def test_consistency_of_synthetic_llrs():
    rng = np.random.default_rng(2)
    bits = rng.choice([-1, 1], 1_000_000)
    llrs = gaussian_priors(bits, 1.5, rng)

    fit = consistency_from_llrs(llrs, bits, label="synthetic")
    assert abs(fit.slope - 1.0) <= 0.05
    assert abs(fit.intercept) <= 0.05
    assert fit.slope_ci[0] < fit.slope < fit.slope_ci[1]
    assert fit.samples == 1_000_000
    assert fit.label == "synthetic"

    # doubled LLRs are overconfident by a factor two
    doubled = consistency_from_llrs(2 * llrs, bits)
    assert abs(doubled.slope - 0.5) <= 0.03
    print(f"[OK] consistency slope {fit.slope:.3f}, doubled {doubled.slope:.3f}")


def test_consistency_insufficient_samples():
    bits = np.ones(500)
    with pytest.raises(InsufficientSamplesError):
        consistency_from_llrs(np.ones(500), bits)
    with pytest.raises(InsufficientSamplesError):
        consistency_from_llrs(np.zeros(20_000), np.ones(20_000))
    with pytest.raises(ValueError):
        consistency_from_llrs(np.ones(20_000), np.ones(10))

    cfg = _small_cfg(uncoded_uses=100)
    with pytest.raises(InsufficientSamplesError):
        consistency_test(cfg)
    print("[OK] insufficient samples rejected")


# =============================================================================
# Complexity
# =============================================================================

def test_analytic_operation_counts():
    assert pda_analytic_ops(2, 2, 4) == 192
    assert map_analytic_ops(2, 2, 4) == 448
    assert pda_analytic_ops(4, 4, 16) == 4864
    assert map_analytic_ops(4, 4, 16) == 16 ** 4 * (64 + 24)
    print("[OK] analytic operation counts")


def test_complexity_report():
    report = complexity_report()
    rows = {(r.nt, r.m_order, r.detector): r for r in report.complexity}
    assert len(rows) == 8

    # 2x2 4QAM: moments 112, per stream (mean 8, downdate 152, residual 68,
    # metric 80, normalize 24), bit LLRs 16
    pda = rows[(2, 4, "ab-log-pda")]
    assert pda.counted_ops == 112 + 2 * (8 + 152 + 68 + 80 + 24) + 16
    assert pda.setup_ops == 4 ** 3 + 12 * 4 * 2 + 6 * 4 + 2 + 8 * 4
    for (n, order, detector), row in rows.items():
        assert 1.0 <= row.ratio <= 5.0, (n, order, detector, row.ratio)
        if detector == "exact-log-map":
            assert row.setup_ops == 0
            k, bits = order ** n, n * int(np.log2(order))
            expected = k * (4 * n * n + 6 * n + bits) + 9 * k * bits + 2 * bits
            assert row.counted_ops == expected, (n, order)

    def gap(n, order):
        return rows[(n, order, "exact-log-map")].counted_ops / rows[(n, order, "ab-log-pda")].counted_ops

    assert gap(2, 4) < gap(2, 16) and gap(4, 4) < gap(4, 16)
    assert gap(2, 4) < gap(4, 4) and gap(2, 16) < gap(4, 16)

    again = complexity_report()
    assert [r.counted_ops for r in again.complexity] == [r.counted_ops for r in report.complexity]
    print(f"[OK] complexity, MAP/PDA gap {gap(2, 4):.1f} -> {gap(4, 16):.0f}")


def test_complexity_ratio_stays_bounded_as_dimensions_grow():
    grid = [(2, 2, 4), (2, 8, 4), (4, 4, 16), (8, 8, 16)]
    report = complexity_report(grid=grid, uses=2)
    pda = {(r.nt, r.nr, r.m_order): r for r in report.complexity if r.detector == "ab-log-pda"}
    assert sorted(pda) == sorted(grid)
    for key, row in pda.items():
        assert 1.0 <= row.ratio <= 5.0, (key, row.ratio)
        assert row.setup_ops > 0

    # the terms the formula leaves out shrink relative to the metric work
    assert pda[(8, 8, 16)].ratio < pda[(4, 4, 16)].ratio < pda[(2, 2, 4)].ratio

    # 16^8 candidates is past the enumeration guard
    maps = {(r.nt, r.nr, r.m_order) for r in report.complexity if r.detector == "exact-log-map"}
    assert (8, 8, 16) not in maps and (2, 8, 4) in maps
    print("[OK] counted/analytic ratio bounded from 2x2 to 8x8")


# =============================================================================
# Reports, result files and CLI
# =============================================================================

def test_aggregate_ber():
    point = aggregate_ber(1.0, 2, [0, 3, 0], [False, True, False], 100, "max_frames")
    assert point.bits == 300
    assert np.isclose(point.ber, 0.01)
    assert np.isclose(point.fer, 1 / 3)
    assert point.stopped_on == "max_frames"
    assert BerPoint(0.0, 0, 0, 0, 0, 0).ber == 0.0
    print("[OK] BER aggregation")


def test_writer_round_trip():
    report = RunReport("ber", {"nt": "2", "detector": "ab-log-pda"}, 11, "2026-01-01T00:00:00+00:00")
    report.ber_points = [
        aggregate_ber(0.0, 0, [5, 2], [True, True], 64, "max_frames"),
        aggregate_ber(0.0, 1, [1, 0], [True, False], 64, "max_frames"),
    ]
    report.op_counts["ab-log-pda"] = [352.0, 352.0]
    report.complexity = complexity_report(grid=[(2, 4)], uses=2).complexity

    with tempfile.TemporaryDirectory() as tmp:
        paths = ResultWriter(os.path.join(tmp, "out")).write_report(report)
        assert sorted(os.path.basename(p) for p in paths) == ["ber.csv", "complexity.csv"]

        meta, rows = read_table(os.path.join(tmp, "out", "ber.csv"))
        assert meta["seed"] == "11"
        assert meta["detector"] == "ab-log-pda"
        assert meta["stopped_on"] == "0:max_frames"
        assert meta["ops_per_use[ab-log-pda]"] == "352.0,352.0"
        assert [r["iter"] for r in rows] == ["0", "1"]
        assert rows[0]["bit_errors"] == "7"
        assert float(rows[1]["ber"]) == pytest.approx(1 / 128)

        _, rows = read_table(os.path.join(tmp, "out", "complexity.csv"))
        assert {r["detector"] for r in rows} == {"ab-log-pda", "exact-log-map"}
        assert float(rows[0]["setup_ops"]) > 0

    text = format_report(report)
    assert "BER" in text and "COMPLEXITY" in text
    print("[OK] result files round trip")


def test_cli_complexity():
    with tempfile.TemporaryDirectory() as tmp:
        code = main(["complexity", "--grid", "2:4,2:16", "--uses", "2", "--out", tmp])
        assert code == 0
        _, rows = read_table(os.path.join(tmp, "complexity.csv"))
        assert len(rows) == 4
    print("[OK] CLI complexity run")


def test_cli_config_errors():
    with tempfile.TemporaryDirectory() as tmp:
        assert main(["ber", "--nakagami-m", "0.2", "--out", tmp]) == 2
        assert main(["ber", "--nt", "two", "--out", tmp]) == 2
        assert main(["complexity", "--config", os.path.join(tmp, "missing.cfg"), "--out", tmp]) == 2
        assert not os.path.exists(os.path.join(tmp, "ber.csv"))
    print("[OK] CLI config errors exit with 2")


# =============================================================================
# Monte-Carlo drivers
# =============================================================================

def test_ber_run_is_reproducible():
    first = run_ber_experiment(_small_cfg())
    second = run_ber_experiment(_small_cfg())
    assert [(p.bit_errors, p.frames) for p in first.ber_points] == \
        [(p.bit_errors, p.frames) for p in second.ber_points]

    pooled = run_ber_experiment(_small_cfg(workers=2))
    assert [(p.bit_errors, p.frame_errors, p.frames) for p in pooled.ber_points] == \
        [(p.bit_errors, p.frame_errors, p.frames) for p in first.ber_points]
    print("[OK] BER runs reproducible across worker counts")


def test_ber_stop_rule_and_bookkeeping():
    cfg = _small_cfg(ebn0_db=[0.0, 8.0], it_o=2)
    report = run_ber_experiment(cfg)
    assert len(report.ber_points) == 2 * 3
    assert len(report.op_counts["ab-log-pda"]) == 3

    for point in report.ber_points:
        assert point.frames <= cfg.max_frames
        assert point.bits == point.frames * cfg.info_length
        if point.iteration == cfg.it_o:
            if point.stopped_on == "errors":
                assert point.frame_errors == cfg.min_frame_errors
            else:
                assert point.frames == cfg.max_frames
    print("[OK] BER stop rule")


def test_exit_measurement():
    cfg = _small_cfg(ebn0_db=[4.0], uncoded_uses=5000)
    report = measure_exit(cfg, detectors=["ab-log-pda", "exact-log-map"], ia_grid=[0.0, 0.5, 0.9])
    assert len(report.exit_points) == 6
    curves = {}
    for p in report.exit_points:
        assert p.ie <= 1.0
        curves.setdefault(p.detector, []).append(p.ie)

    # same draws for both detectors at every point
    for pda_ie, map_ie in zip(curves["ab-log-pda"], curves["exact-log-map"]):
        assert map_ie >= pda_ie - 0.01
    assert curves["exact-log-map"][-1] > curves["exact-log-map"][0]

    with pytest.raises(ValueError):
        measure_exit(cfg, ia_grid=[1.0])
    print(f"[OK] EXIT I_E(0) PDA {curves['ab-log-pda'][0]:.4f} MAP {curves['exact-log-map'][0]:.4f}")


def test_exit_priors_self_check():
    """Synthetic priors on the EXIT pipeline's own bits carry I_A as requested."""
    cfg = _small_cfg(uncoded_uses=20000)
    sim = FrameSimulator(cfg)
    rng = np.random.default_rng(17)
    batch = sim.uncoded_batch(rng, cfg.uncoded_uses, 0.0)
    for ia in cfg.ia_grid:
        priors = gaussian_priors(batch.bits, j_inverse(ia), rng)
        measured = mutual_information(priors.reshape(-1), batch.bits.reshape(-1))
        assert abs(measured - ia) <= 0.01, (ia, measured)
    print("[OK] EXIT priors reproduce I_A")


def test_decoder_exit_curve():
    cfg = _small_cfg(info_length=256, turbo_log_sum="exact", exit_frames=10)
    points = decoder_exit(cfg, ia_grid=[0.0, 0.2, 0.5, 0.8])
    assert all(p.kind == "decoder" and p.detector == "turbo" and np.isnan(p.ebn0_db) for p in points)

    ies = [p.ie for p in points]
    assert abs(ies[0]) < 0.01
    assert ies[1] < ies[2] < ies[3], ies
    assert ies[3] > 0.8

    again = decoder_exit(cfg, ia_grid=[0.0, 0.2, 0.5, 0.8])
    assert [p.ie for p in again] == ies
    print(f"[OK] decoder EXIT {' '.join(f'{ie:.3f}' for ie in ies)}")


def test_idd_trajectory():
    cfg = _small_cfg(ebn0_db=[4.0], it_o=2, info_length=128)
    path = idd_trajectory(cfg, frames=5)
    assert [t.iteration for t in path] == [0, 1, 2]
    assert path[0].detector_ia == 0.0
    assert path[-1].decoder_ie is None
    for prev, cur in zip(path, path[1:]):
        assert cur.detector_ia == prev.decoder_ie
    assert 0.0 < path[0].detector_ie <= 1.0
    assert path[-1].detector_ie >= path[0].detector_ie - 0.02
    print(f"[OK] IDD trajectory detector I_E {path[0].detector_ie:.3f} -> {path[-1].detector_ie:.3f}")


def test_exit_report_with_decoder_and_trajectory():
    cfg = _small_cfg(ebn0_db=[2.0], uncoded_uses=2000, exit_frames=2)
    report = measure_exit(cfg, ia_grid=[0.0, 0.5], with_decoder=True, trajectory=True)
    assert [p.kind for p in report.exit_points] == ["detector"] * 2 + ["decoder"] * 2
    assert len(report.trajectory) == cfg.it_o + 1

    with tempfile.TemporaryDirectory() as tmp:
        paths = ResultWriter(tmp).write_report(report)
        assert sorted(os.path.basename(p) for p in paths) == ["exit.csv", "exit_trajectory.csv"]
        _, rows = read_table(os.path.join(tmp, "exit.csv"))
        assert [r["kind"] for r in rows][-1] == "decoder"
        _, rows = read_table(os.path.join(tmp, "exit_trajectory.csv"))
        assert rows[-1]["decoder_ie"] == ""

        code = main(["exit", "--with-decoder", "--trajectory", "--nt", "2", "--nr", "2",
                     "--info-length", "64", "--it-o", "1", "--it-tc", "2", "--exit-frames", "2",
                     "--uncoded-uses", "1000", "--ia-grid", "0,0.5", "--ebn0-db", "2", "--out", tmp])
        assert code == 0
    assert "IDD TRAJECTORY" in format_report(report)
    print("[OK] EXIT report with decoder curve and trajectory")


def test_pda_probe_structure():
    cfg = _small_cfg(uncoded_uses=5000, probe_iterations=3)
    probe = pda_convergence_probe(cfg).probe
    assert len(probe.iterations) == 4
    assert probe.iterations[0].mean_abs_delta is None
    assert len(probe.delta_p) == 3
    for row, delta in zip(probe.iterations[1:], probe.delta_p):
        assert delta.shape == (5000, 2)
        assert np.isclose(row.frac_positive + row.frac_negative + row.frac_converged, 1.0)
        assert row.mean_abs_delta >= 0
    assert 0.0 < probe.sign_change_fraction <= 1.0
    print(f"[OK] PDA probe, {probe.sign_change_fraction:.1%} direction changes")


# =============================================================================
# Reproduction runs (IDD_RUN_SLOW=1)
# =============================================================================

def _final_ber(report):
    return report.ber_points[-1].ber


@slow
def test_slow_pda_idd_reaches_target_ber():
    cfg = _small_cfg(info_length=2400, it_o=3, it_tc=4, ebn0_db=[1.5],
                     min_frame_errors=100, max_frames=2000, workers=os.cpu_count() or 1)
    ber = _final_ber(run_ber_experiment(cfg))
    assert ber <= 1e-4, ber
    print(f"[OK] AB-Log-PDA IDD BER {ber:.2e} at 1.5 dB")


@slow
def test_slow_subtracting_prior_from_pda_hurts():
    base = dict(info_length=2400, it_o=3, it_tc=4, ebn0_db=[1.5],
                min_frame_errors=100, max_frames=1000, workers=os.cpu_count() or 1)
    plain = _final_ber(run_ber_experiment(_small_cfg(**base)))
    classical = _final_ber(run_ber_experiment(_small_cfg(pda_subtract_prior=True, **base)))
    assert classical > 0 and classical >= 10 * plain, (classical, plain)
    print(f"[OK] classical subtraction BER {classical:.2e} vs {plain:.2e}")


@slow
def test_slow_inner_iterations_degrade_ber():
    base = dict(info_length=2400, it_o=3, it_tc=4, ebn0_db=[0.5],
                min_frame_errors=100, max_frames=2000, workers=os.cpu_count() or 1)
    bers = [_final_ber(run_ber_experiment(_small_cfg(it_i=it_i, **base))) for it_i in (0, 1, 2)]
    assert bers[1] >= bers[0] and bers[2] >= bers[0], bers
    print(f"[OK] BER by it_i: {bers}")


@slow
def test_slow_map_llrs_are_consistent():
    cfg = _small_cfg(ebn0_db=[0.0], uncoded_uses=250_000)
    fit = consistency_test(cfg, detector="exact-log-map")
    assert abs(fit.slope - 1.0) <= 0.05, fit.slope

    pda = [consistency_test(cfg, detector="ab-log-pda", inner_iterations=k).slope for k in (0, 2)]
    assert abs(1 - pda[1]) >= abs(1 - pda[0]), pda
    print(f"[OK] MAP slope {fit.slope:.3f}, PDA slopes {pda}")


def _crossing(report, target):
    """Eb/N0 at which the final-pass BER falls to `target`, log-interpolated."""
    last = max(p.iteration for p in report.ber_points)
    curve = sorted((p.ebn0_db, p.ber) for p in report.ber_points if p.iteration == last)
    for (x0, b0), (x1, b1) in zip(curve, curve[1:]):
        if b0 > target >= b1:
            if b1 <= 0:
                return x1
            return x0 + (x1 - x0) * (np.log(b0) - np.log(target)) / (np.log(b0) - np.log(b1))
    return float("nan")


def _ber_at(report, ebn0, iteration=None):
    iteration = max(p.iteration for p in report.ber_points) if iteration is None else iteration
    return next(p for p in report.ber_points if p.ebn0_db == ebn0 and p.iteration == iteration)


@slow
def test_slow_map_beats_pda_and_crossings_close():
    base = dict(info_length=2400, it_o=3, it_tc=4, ebn0_db=[0.0, 0.5, 1.0, 1.5, 2.0, 2.5],
                min_frame_errors=100, max_frames=2000, workers=os.cpu_count() or 1)
    pda = run_ber_experiment(_small_cfg(**base))
    exact = run_ber_experiment(_small_cfg(detector="exact-log-map", **base))

    assert _ber_at(exact, 1.5).ber <= 1.1 * _ber_at(pda, 1.5).ber
    x_pda, x_map = _crossing(pda, 1e-4), _crossing(exact, 1e-4)
    assert np.isfinite(x_pda) and np.isfinite(x_map), (x_pda, x_map)
    assert abs(x_pda - x_map) <= 1.0, (x_pda, x_map)
    print(f"[OK] BER 1e-4 at {x_pda:.2f} dB (PDA) vs {x_map:.2f} dB (MAP)")


@slow
def test_slow_outer_iterations_converge():
    cfg = _small_cfg(info_length=2400, it_o=4, it_tc=4, ebn0_db=[1.5],
                     min_frame_errors=100, max_frames=2000, workers=os.cpu_count() or 1)
    report = run_ber_experiment(cfg)
    bers = [_ber_at(report, 1.5, z).ber for z in range(5)]
    for z in range(3):
        assert bers[z + 1] <= 1.02 * bers[z], bers
    if bers[3] > 0:
        assert abs(bers[4] - bers[3]) / bers[3] < 0.10, bers
    print(f"[OK] BER by outer pass: {bers}")


@slow
def test_slow_nakagami_ordering():
    base = dict(info_length=2400, it_o=3, it_tc=4, ebn0_db=[1.0],
                min_frame_errors=200, max_frames=2000, workers=os.cpu_count() or 1)
    points = [_ber_at(run_ber_experiment(_small_cfg(nakagami_m=m, **base)), 1.0) for m in (0.5, 1.0, 2.0)]

    def stderr(p):
        return np.sqrt(p.fer * (1 - p.fer) / p.frames)

    for worse, better in zip(points, points[1:]):
        assert worse.ber > better.ber, (worse.ber, better.ber)
        assert worse.fer - better.fer > np.hypot(stderr(worse), stderr(better)), (worse.fer, better.fer)
    print(f"[OK] BER by Nakagami m: {[p.ber for p in points]}")


@slow
def test_slow_exit_ordering_and_reference_point():
    sweep = [float(x) for x in np.arange(-4.0, 4.0001, 0.25)]
    cfg = _small_cfg(ebn0_db=sweep, uncoded_uses=20000)
    report = measure_exit(cfg, detectors=["ab-log-pda", "exact-log-map"], ia_grid=[0.0])
    ie = {(p.detector, p.ebn0_db): p.ie for p in report.exit_points}

    for ebn0 in sweep:
        assert ie[("exact-log-map", ebn0)] >= ie[("ab-log-pda", ebn0)] - 0.005, ebn0
    near = [ebn0 for ebn0 in sweep
            if abs(ie[("exact-log-map", ebn0)] - 0.5596) <= 0.05
            and abs(ie[("ab-log-pda", ebn0)] - 0.5332) <= 0.05]
    assert near, "no swept point near (0.5596, 0.5332)"
    print(f"[OK] I_E(0) pair near reference at {near} dB")


@slow
def test_slow_csi_error_robustness():
    base = dict(info_length=2400, it_o=3, it_tc=4, ebn0_db=[0.5 * k for k in range(9)],
                min_frame_errors=50, max_frames=1000, workers=os.cpu_count() or 1)
    x = {}
    for detector in ("ab-log-pda", "exact-log-map"):
        for rho in (1.0, 0.97):
            report = run_ber_experiment(_small_cfg(detector=detector, rho=rho, **base))
            x[(detector, rho)] = _crossing(report, 1e-3)
    assert all(np.isfinite(v) for v in x.values()), x

    for detector in ("ab-log-pda", "exact-log-map"):
        assert x[(detector, 0.97)] - x[(detector, 1.0)] <= 1.5, x
    assert x[("ab-log-pda", 0.97)] - x[("exact-log-map", 0.97)] <= 1.0, x
    print(f"[OK] BER 1e-3 crossings {x}")


def run_all_tests():
    """Run all tests."""
    print("=" * 60)
    print("        HARNESS TESTS")
    print("=" * 60)
    print()

    tests = [v for k, v in globals().items() if k.startswith("test_") and callable(v)]
    if not RUN_SLOW:
        tests = [t for t in tests if not t.__name__.startswith("test_slow_")]
    passed = 0
    failed = 0

    for test in tests:
        try:
            test()
            passed += 1
        except AssertionError as e:
            print(f"[FAIL] {test.__name__}: {e}")
            failed += 1
        except Exception as e:
            print(f"[ERROR] {test.__name__}: {e}")
            failed += 1

    print()
    print("=" * 60)
    print(f"Results: {passed} passed, {failed} failed")
    print("=" * 60)

    return failed == 0


if __name__ == "__main__":
    success = run_all_tests()
    exit(0 if success else 1)
