import math

import numpy as np
import pytest

from qkdsim.bits import BitString, SeededRng, random_bits
from qkdsim.session import (ProtocolAbort, ProtocolError, SessionConfig,
                            SessionReport, compute_rates, config_digest,
                            draw_sample_positions, encode_choice,
                            estimate_qber, run_session, run_session_detailed,
                            sift, simulate_quantum_phase)
from qkdsim.source import DetectionRecord, SourceModel

# small but realistic session: ideal detectors, 6% polarisation error
FAST_MODEL = SourceModel(p_det=1.0, multiphoton_ratio=0.0, dark_count_prob=0.0,
                         pol_error_prob=0.06)
FAST_CONFIG = SessionConfig(block_pulses=10**5, target_valid_bits=10**5)

NOISELESS_MODEL = SourceModel(p_det=1.0, multiphoton_ratio=0.0,
                              dark_count_prob=0.0, pol_error_prob=0.0)


class TestEncodeChoice:
    def test_full_table(self):
        # basis 0 = H/V, basis 1 = R/L circular
        assert encode_choice(0) == (0, 0, "H")
        assert encode_choice(1) == (0, 1, "V")
        assert encode_choice(2) == (1, 0, "R")
        assert encode_choice(3) == (1, 1, "L")

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            encode_choice(4)


def _record(i, choice, bob_basis, clicks):
    basis, bit, _ = encode_choice(choice)
    valid = clicks[0] ^ clicks[1]
    return DetectionRecord(i, choice, basis, bit, bob_basis, clicks, valid,
                           False)


class TestSift:
    def test_keeps_only_valid_matched(self):
        records = [
            _record(0, 0, 0, (True, False)),   # valid, matched -> kept
            _record(1, 0, 1, (True, False)),   # basis mismatch -> dropped
            _record(2, 2, 1, (False, True)),   # valid, matched -> kept
            _record(3, 1, 0, (False, False)),  # no click -> dropped
            _record(4, 3, 1, (True, True)),    # double click -> dropped
        ]
        idx, alice, bob = sift(records)
        assert idx.tolist() == [0, 2]
        assert alice == BitString([0, 0])
        assert bob == BitString([0, 1])

    def test_statistics_half_match(self):
        phase = simulate_quantum_phase(FAST_MODEL, FAST_CONFIG, seed=21)
        idx, alice, bob = sift(list(phase.valid))
        n_valid = len(phase.valid)
        # basis choices are independent fair coins: ~half survive sifting
        assert abs(len(alice) / n_valid - 0.5) < 3 * math.sqrt(
            0.25 / n_valid)
        err = (alice.asarray() != bob.asarray()).mean()
        assert abs(err - 0.06) < 3 * math.sqrt(0.06 * 0.94 / len(alice))


class TestEstimateQber:
    def test_disjoint_split_and_exact_count(self):
        rng = SeededRng(30)
        a = random_bits(1000, rng)
        arr = a.asarray().copy()
        arr[:100] ^= 1  # exactly 100 disagreements
        b = BitString(arr)
        q, m, a_rem, b_rem = estimate_qber(a, b, 0.5, SeededRng(31))
        assert m == 500
        assert len(a_rem) == len(b_rem) == 500
        sample_errors = round(q * m)
        remaining_errors = int((a_rem.asarray() != b_rem.asarray()).sum())
        assert sample_errors + remaining_errors == 100

    def test_identical_strings(self):
        a = random_bits(100, SeededRng(32))
        q, m, _, _ = estimate_qber(a, a, 0.5, SeededRng(33))
        assert q == 0.0 and m == 50

    def test_contracts(self):
        a = random_bits(10, SeededRng(34))
        with pytest.raises(ValueError):
            estimate_qber(a, random_bits(9, SeededRng(35)), 0.5, SeededRng(36))
        with pytest.raises(ValueError):
            estimate_qber(a, a, 0.0, SeededRng(36))
        with pytest.raises(ValueError):
            estimate_qber(BitString([1]), BitString([1]), 0.5, SeededRng(36))

    def test_sample_positions_deterministic_sorted_unique(self):
        p1 = draw_sample_positions(1000, 400, SeededRng(37))
        p2 = draw_sample_positions(1000, 400, SeededRng(37))
        assert np.array_equal(p1, p2)
        assert np.array_equal(p1, np.sort(p1))
        assert np.unique(p1).size == 400


class TestComputeRates:
    def test_table_style_rows(self):
        # bounded rate = raw bits over transmit time only (t_transmit = 2 s);
        # raw rate also pays the 7 s processing window
        cfg = SessionConfig()
        assert compute_rates(792, 1, cfg) == (pytest.approx(88.0),
                                              pytest.approx(396.0))
        assert compute_rates(504, 1, cfg) == (pytest.approx(56.0),
                                              pytest.approx(252.0))

    def test_bounded_is_4_5x_raw(self):
        cfg = SessionConfig()
        for bits, blocks in [(10**6, 40), (12345, 3)]:
            raw, bounded = compute_rates(bits, blocks, cfg)
            assert bounded == pytest.approx(raw * 4.5)

    def test_blocks_required(self):
        with pytest.raises(ValueError):
            compute_rates(100, 0, SessionConfig())


class TestQuantumPhase:
    def test_deterministic_and_shared(self):
        p1 = simulate_quantum_phase(FAST_MODEL, FAST_CONFIG, seed=40)
        p2 = simulate_quantum_phase(FAST_MODEL, FAST_CONFIG, seed=40)
        assert np.array_equal(p1.valid.pulse_index, p2.valid.pulse_index)
        assert np.array_equal(p1.valid.alice_choice, p2.valid.alice_choice)
        assert np.array_equal(p1.valid.bob_basis, p2.valid.bob_basis)

    def test_different_seeds_differ(self):
        p1 = simulate_quantum_phase(FAST_MODEL, FAST_CONFIG, seed=40)
        p2 = simulate_quantum_phase(FAST_MODEL, FAST_CONFIG, seed=41)
        assert not np.array_equal(p1.valid.alice_choice[:1000],
                                  p2.valid.alice_choice[:1000])

    def test_reaches_target_in_whole_blocks(self):
        cfg = SessionConfig(block_pulses=1000, target_valid_bits=2500)
        phase = simulate_quantum_phase(NOISELESS_MODEL, cfg, seed=42)
        assert len(phase.valid) >= 2500
        assert phase.blocks == 3  # ideal detector: 1000 valid bits per block
        assert phase.total_pulses == 3000

    def test_unreachable_target_aborts(self):
        model = SourceModel(p_det=0.0, dark_count_prob=0.0)
        cfg = SessionConfig(block_pulses=100, target_valid_bits=10,
                            max_blocks=5)
        with pytest.raises(ProtocolError):
            simulate_quantum_phase(model, cfg, seed=43)


class TestRunSession:
    def test_keys_identical_and_report_consistent(self):
        cfg = SessionConfig(block_pulses=10**5, target_valid_bits=4 * 10**5)
        a, b = run_session_detailed(cfg, NOISELESS_MODEL, seed=11)
        assert a.key == b.key
        assert len(a.key) > 0
        assert a.report.qber == 0.0
        assert a.report.secret_key_length == len(a.key)
        assert a.audit["syndrome_bits_disclosed"] == \
            a.audit["expected_syndrome_bits"]
        assert a.report.bounded_secret_key_rate == pytest.approx(
            a.report.secret_key_rate * 4.5)

    def test_same_seed_reproduces_key(self):
        cfg = SessionConfig(block_pulses=10**5, target_valid_bits=4 * 10**5)
        k1, k2, _ = run_session(cfg, NOISELESS_MODEL, seed=11)
        k3, k4, _ = run_session(cfg, NOISELESS_MODEL, seed=11)
        assert k1 == k2 == k3 == k4

    def test_noisy_session_corrects_errors(self):
        cfg = SessionConfig(block_pulses=10**5, target_valid_bits=4 * 10**5)
        a, b = run_session_detailed(cfg, FAST_MODEL, seed=12)
        assert a.key == b.key
        assert abs(a.report.qber - 0.06) < 0.01

    def test_small_n_yields_zero_key_without_abort(self):
        # 10^5 pulses -> n ~ 2.2e4: deep in the negative-rate regime
        a, b = run_session_detailed(FAST_CONFIG, FAST_MODEL, seed=13)
        assert len(a.key) == len(b.key) == 0
        assert a.report.secret_key_length == 0
        assert a.audit["r_raw"] < 0

    def test_corrupted_key_triggers_abort(self):
        cfg = SessionConfig(block_pulses=10**5, target_valid_bits=4 * 10**5)
        with pytest.raises(ProtocolAbort, match="verification hash mismatch"):
            run_session_detailed(cfg, NOISELESS_MODEL, seed=11,
                                 _corrupt_reconciled_bit=17)

    def test_too_few_bits_raises_protocol_error(self):
        cfg = SessionConfig(block_pulses=2000, target_valid_bits=2000)
        with pytest.raises(ProtocolError):
            run_session_detailed(cfg, NOISELESS_MODEL, seed=14)


class TestReportAndDigest:
    def test_csv_row_field_count(self):
        report = SessionReport(5e5, 1666, 10**4, 96, 432, 0.03, 0, 0.0, 0.0)
        from qkdsim.session import REPORT_HEADER
        assert len(report.csv_row().split(",")) == \
            len(REPORT_HEADER.split(","))

    def test_digest_stable_and_sensitive(self):
        cfg = SessionConfig()
        model = SourceModel()
        d1 = config_digest(cfg, model)
        assert d1 == config_digest(cfg, model)
        assert d1 != config_digest(cfg, SourceModel(p_det=0.004))
        assert len(d1) == 16
