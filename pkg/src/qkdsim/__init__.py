"""Desk-scale BB84 QKD stack: source simulation, protocol session, LDPC
reconciliation, finite-key security evaluation, and Toeplitz privacy
amplification."""

from .bits import BitString, SeededRng, hamming_distance, random_bits, xor
from .finite_key import (FiniteKeyParams, SecurityBudget, binary_entropy,
                         secret_fraction, secret_key_length)
from .ldpc import (DegreeDistribution, SparseParityMatrix, decode_bp_serial,
                   peg_construct, reconcile, syndrome)
from .privacy import ToeplitzSpec, make_spec, toeplitz_hash, verification_check
from .session import (SessionConfig, SessionReport, estimate_qber,
                      run_session, sift)
from .source import (DetectionBatch, DetectionRecord, SourceModel,
                     saturation_count_rate, simulate_pulse_train)

__all__ = [
    "BitString", "SeededRng", "hamming_distance", "random_bits", "xor",
    "FiniteKeyParams", "SecurityBudget", "binary_entropy", "secret_fraction",
    "secret_key_length", "DegreeDistribution", "SparseParityMatrix",
    "decode_bp_serial", "peg_construct", "reconcile", "syndrome",
    "ToeplitzSpec", "make_spec", "toeplitz_hash", "verification_check",
    "SessionConfig", "SessionReport", "estimate_qber", "run_session", "sift",
    "DetectionBatch", "DetectionRecord", "SourceModel",
    "saturation_count_rate", "simulate_pulse_train",
]

__version__ = "0.1.0"
