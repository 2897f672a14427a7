"""
Tests for the exhaustive-search detectors and the true-posterior oracle.
"""

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest
from scipy.special import softmax

from receiver.channel import add_noise, sample_channel
from receiver.map_detector import (
    CandidateLimitError,
    build_candidate_table,
    exact_log_map,
    map_llrs,
    max_log_map,
    true_posterior_marginals,
)
from receiver.modem import (
    LlrFrame,
    LlrRole,
    apriori_llrs_to_symbol_probs,
    build_constellation,
    symbol_probs_to_bit_llrs,
)
from receiver.numerics import LogSum, OpCounter
from receiver.pda_detector import PdaConfig, Schedule, detect


def _instances(rng, c, n_r, n_t, uses, sigma2):
    h = sample_channel(1.0, 1.0, n_r, n_t, rng, uses=uses).h
    idx = rng.integers(0, c.order, (uses, n_t))
    y = add_noise(np.einsum("urk,uk->ur", h, c.points[idx]), sigma2, rng)
    return y, h


def _probability_domain_extrinsic(y, h, sigma2, la, c, n_t):
    """Sum of exp terms per bit hypothesis, then the log ratio."""
    table = build_candidate_table(c, n_t)
    hs = np.einsum("urk,ck->ucr", h, table.symbols)
    like = np.exp(-np.sum(np.abs(y[:, None, :] - hs) ** 2, axis=-1) / (2 * sigma2))
    n_bits = table.bits.shape[1]
    out = np.empty((len(y), n_bits))
    for k in range(n_bits):
        others = np.delete(np.arange(n_bits), k)
        weight = np.exp(0.5 * la[:, others] @ table.bits[:, others].T)
        terms = like * weight
        plus = table.bits[:, k] > 0
        out[:, k] = np.log(terms[:, plus].sum(axis=1) / terms[:, ~plus].sum(axis=1))
    return out


def test_candidate_table_is_bijective():
    c = build_constellation("QAM", 4)
    table = build_candidate_table(c, 3)
    assert table.size == 64
    assert len({tuple(b) for b in table.bits.astype(int)}) == 64
    assert np.allclose(table.symbols, c.points[table.indices])
    assert table.indices[1].tolist() == [0, 0, 1]
    print("[OK] candidate table")


def test_candidate_guard():
    c = build_constellation("QAM", 64)
    with pytest.raises(CandidateLimitError):
        build_candidate_table(c, 4)
    print("[OK] candidate guard")


def test_two_point_closed_form():
    c = build_constellation("PAM", 2)
    assert np.allclose(c.points, [1, -1])
    rng = np.random.default_rng(0)
    sigma2 = 0.4
    y, h = _instances(rng, c, 2, 1, 20, sigma2)
    le = exact_log_map(y, h, sigma2, None, c).values
    hv = h[:, :, 0]
    expected = (np.sum(np.abs(y + hv) ** 2, axis=1) - np.sum(np.abs(y - hv) ** 2, axis=1)) / (2 * sigma2)
    assert np.allclose(le, np.clip(expected, -50, 50), atol=1e-12)

    # one candidate per side: nothing to fold
    assert np.array_equal(max_log_map(y, h, sigma2, None, c).values, le)
    print("[OK] two-point closed form")


def test_sign_symmetry():
    """Negating y maps every 4QAM candidate to its all-bits-flipped twin."""
    rng = np.random.default_rng(1)
    c = build_constellation("QAM", 4)
    y, h = _instances(rng, c, 2, 2, 30, 0.5)
    a = exact_log_map(y, h, 0.5, None, c).values
    b = exact_log_map(-y, h, 0.5, None, c).values
    assert np.allclose(a, -b, atol=1e-12)
    print("[OK] sign symmetry")


def test_matches_probability_domain_enumeration():
    rng = np.random.default_rng(2)
    c = build_constellation("QAM", 4)
    sigma2 = 0.5
    y, h = _instances(rng, c, 2, 2, 1000, sigma2)
    la = rng.uniform(-3, 3, (1000, 4))
    le = exact_log_map(y, h, sigma2, LlrFrame(la.ravel(), LlrRole.APRIORI, 2, 2), c)
    assert le.role is LlrRole.EXTRINSIC
    oracle = _probability_domain_extrinsic(y, h, sigma2, la, c, 2)
    keep = np.abs(oracle) < 45
    assert np.max(np.abs(le.values.reshape(1000, 4) - oracle)[keep]) <= 1e-9
    print("[OK] matches probability-domain enumeration")


def test_aposteriori_equals_extrinsic_plus_prior():
    rng = np.random.default_rng(3)
    c = build_constellation("QAM", 16)
    y, h = _instances(rng, c, 2, 2, 200, 0.3)
    la = rng.uniform(-4, 4, 200 * 8)
    ld, le = map_llrs(y, h, 0.3, LlrFrame(la, LlrRole.APRIORI, 4, 2), c)
    assert ld.role is LlrRole.APOSTERIORI
    # away from the clip level on both outputs
    keep = (np.abs(ld.values) < 45) & (np.abs(ld.values - la) < 45)
    assert np.max(np.abs(ld.values - (le.values + la))[keep]) <= 1e-9
    print("[OK] L_D = L_E + L_A")


def test_maxlog_bound():
    rng = np.random.default_rng(4)
    c = build_constellation("QAM", 16)
    y, h = _instances(rng, c, 2, 2, 1000, 0.2)
    la = LlrFrame(rng.normal(0, 2, 1000 * 8), LlrRole.APRIORI, 4, 2)
    exact = exact_log_map(y, h, 0.2, la, c).values
    approx = max_log_map(y, h, 0.2, la, c).values
    assert np.max(np.abs(exact - approx)) <= 2 * np.log(16 ** 2)
    print("[OK] max-log bound")


def test_maxlog_converges_at_high_snr():
    rng = np.random.default_rng(5)
    c = build_constellation("QAM", 4)
    y, h = _instances(rng, c, 2, 2, 50, 1e-4)
    exact = exact_log_map(y, h, 1e-4, None, c).values
    approx = max_log_map(y, h, 1e-4, None, c).values
    assert np.max(np.abs(exact - approx)) <= 1e-6
    print("[OK] max-log matches exact when one candidate dominates")


def test_chunked_batches_match_single_uses():
    rng = np.random.default_rng(6)
    c = build_constellation("QAM", 16)
    y, h = _instances(rng, c, 2, 2, 1100, 0.4)
    batch = exact_log_map(y, h, 0.4, None, c).per_symbol()
    for u in (0, 511, 512, 1099):
        one = exact_log_map(y[u], h[u], 0.4, None, c).per_symbol()[0]
        assert np.allclose(batch[u], one, atol=1e-12)
    print("[OK] chunked batches")


def test_prior_length_checked():
    c = build_constellation("QAM", 4)
    with pytest.raises(ValueError):
        map_llrs(np.zeros(2), np.zeros((2, 2)), 0.1, LlrFrame.zeros(2, LlrRole.APRIORI, 2), c)
    with pytest.raises(ValueError):
        map_llrs(np.zeros((3, 2)), np.zeros((2, 2, 2)), 0.1, None, c)
    print("[OK] MAP input checks")


def test_candidate_counter():
    rng = np.random.default_rng(7)
    c = build_constellation("QAM", 4)
    y, h = _instances(rng, c, 2, 2, 5, 0.3)
    counter = OpCounter()
    map_llrs(y, h, 0.3, None, c, LogSum.MAX_LOG, counter)
    assert counter.total("candidates") == 5 * 16 * (4 * 2 * 2 + 6 * 2 + 4)
    print("[OK] candidate counter")


def test_true_posterior_single_antenna():
    rng = np.random.default_rng(8)
    c = build_constellation("QAM", 16)
    sigma2 = 0.1
    y, h = _instances(rng, c, 2, 1, 100, sigma2)
    post = true_posterior_marginals(y, h, sigma2, None, c)
    dist = np.sum(np.abs(y[:, None, :] - c.points[None, :, None] * h[:, None, :, 0]) ** 2, axis=-1)
    assert np.allclose(post.probs[:, 0], softmax(-dist / (2 * sigma2), axis=-1), atol=1e-12)

    pda, _ = detect(y, h, sigma2, None, PdaConfig(), c)
    assert np.allclose(pda.probs, post.probs, atol=1e-9)
    print("[OK] true posterior, one stream")


def test_true_posterior_flattens_in_noise():
    rng = np.random.default_rng(9)
    c = build_constellation("QAM", 4)
    y, h = _instances(rng, c, 2, 2, 1, 0.1)
    post = true_posterior_marginals(y[0], h[0], 1e8, None, c)
    assert post.probs.shape == (2, 4)
    assert np.allclose(post.probs, 0.25, atol=1e-6)
    print("[OK] uniform posterior in heavy noise")


def test_marginals_reproduce_aposteriori_llrs():
    rng = np.random.default_rng(10)
    c = build_constellation("QAM", 4)
    sigma2 = 0.5
    y, h = _instances(rng, c, 2, 2, 300, sigma2)
    la = LlrFrame(rng.uniform(-3, 3, 300 * 4), LlrRole.APRIORI, 2, 2)
    ld, _ = map_llrs(y, h, sigma2, la, c)
    marg = true_posterior_marginals(y, h, sigma2, apriori_llrs_to_symbol_probs(la, c), c)
    from_marg = symbol_probs_to_bit_llrs(marg, c).values
    keep = np.abs(ld.values) < 45
    assert np.max(np.abs(from_marg - ld.values)[keep]) <= 1e-9
    print("[OK] marginals give a-posteriori LLRs")


def test_pda_rows_are_not_posteriors():
    """With informative priors the PDA row is a normalized likelihood, not the APP."""
    rng = np.random.default_rng(11)
    c = build_constellation("PAM", 4)
    sigma2 = 0.2
    uses = 500
    y, h = _instances(rng, c, 2, 2, uses, sigma2)
    la = LlrFrame(rng.uniform(-3, 3, uses * 4), LlrRole.APRIORI, 2, 2)

    pda, _ = detect(y, h, sigma2, la, PdaConfig(schedule=Schedule.PARALLEL), c)
    app = true_posterior_marginals(y, h, sigma2, apriori_llrs_to_symbol_probs(la, c), c)
    tv = 0.5 * np.abs(pda.probs - app.probs).sum(axis=-1).max(axis=-1)
    assert np.mean(tv > 0.01) >= 0.5
    print(f"[OK] PDA rows differ from APP on {np.mean(tv > 0.01):.0%} of instances")


def run_all_tests():
    """Run all tests."""
    print("=" * 60)
    print("        MAP DETECTOR TESTS")
    print("=" * 60)
    print()

    tests = [v for k, v in globals().items() if k.startswith("test_") and callable(v)]
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
