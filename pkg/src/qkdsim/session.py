"""BB84 session orchestration: Alice and Bob state machines, sifting, QBER
estimation, and Table-style rate accounting.

The quantum leg is a simulation that both parties reproduce independently
from the shared master seed and configuration, standing in for the optical
hardware; everything classical (basis announcement, sifting, parameter
estimation, syndrome exchange, hash seeds, verification) genuinely travels
over the link, so the classical protocol is exercised end to end even in
two-process operation. Because the simulation seed is shared, simulated
runs make no secrecy claim; real hardware replaces the simulation.
"""

from __future__ import annotations

import functools
import hashlib
import struct
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from . import finite_key, ldpc, privacy
from .bits import BitString, SeededRng, random_bits
from .link import MsgType, Transport, queue_pair
from .source import (CHOICE_TABLE, DetectionBatch, SourceModel,
                     simulate_pulse_train)

REPORT_HEADER = ("clock_rate,detection_rate,raw_key_length,raw_key_rate,"
                 "bounded_raw_key_rate,qber,secret_key_length,"
                 "secret_key_rate,bounded_secret_key_rate")

# seed-derivation tags for the per-block random streams
_TAG_ALICE, _TAG_BOB, _TAG_CHANNEL = 1, 2, 3
_TAG_QBER, _TAG_TOEPLITZ, _TAG_VERIFY = 4, 5, 6


class ProtocolAbort(Exception):
    """Raised when either party aborts the session."""


class ProtocolError(Exception):
    """Unexpected message or inconsistent announcement."""


@dataclass(frozen=True)
class SessionConfig:
    block_pulses: int = 10**6
    target_valid_bits: int = 4 * 10**6
    t_transmit: float = 2.0
    t_process: float = 7.0
    qber_sample_fraction: float = 0.5
    security: finite_key.SecurityBudget = field(
        default_factory=finite_key.SecurityBudget)
    n_block: int = 10**4
    code_rate: float = 0.5
    ldpc_seed: int = 1
    degree_distribution: str = "3:1;6:1"
    max_decode_iters: int = ldpc.DEFAULT_MAX_ITERS
    workers: int = ldpc.DEFAULT_WORKERS
    check_len: int = privacy.DEFAULT_CHECK_LEN
    max_blocks: int = 10**4

    def __post_init__(self):
        if not 0.0 < self.qber_sample_fraction < 1.0:
            raise ValueError("qber_sample_fraction must be in (0, 1)")
        if self.block_pulses < 1 or self.target_valid_bits < 1:
            raise ValueError("block_pulses and target_valid_bits must be >= 1")
        if self.t_transmit <= 0 or self.t_process < 0:
            raise ValueError("t_transmit must be > 0 and t_process >= 0")


@dataclass(frozen=True)
class SessionReport:
    """One accounting row for a session run."""

    clock_rate: float
    detection_rate: float
    raw_key_length: int
    raw_key_rate: float
    bounded_raw_key_rate: float
    qber: float
    secret_key_length: int
    secret_key_rate: float
    bounded_secret_key_rate: float

    def csv_row(self) -> str:
        return (f"{self.clock_rate:g},{self.detection_rate:g},"
                f"{self.raw_key_length},{self.raw_key_rate:g},"
                f"{self.bounded_raw_key_rate:g},{self.qber:g},"
                f"{self.secret_key_length},{self.secret_key_rate:g},"
                f"{self.bounded_secret_key_rate:g}")


@dataclass
class SessionOutcome:
    key: BitString
    report: SessionReport
    audit: dict


def encode_choice(choice: int) -> tuple[int, int, str]:
    """Map Alice's random integer 0..3 to (basis, bit, polarisation)."""
    if choice not in CHOICE_TABLE:
        raise ValueError(f"choice must be in 0..3, got {choice}")
    return CHOICE_TABLE[choice]


def sift(records) -> tuple[np.ndarray, BitString, BitString]:
    """Keep valid records with matching bases, in pulse order."""
    batch = DetectionBatch.from_records(records)
    mask = batch.valid & (batch.alice_basis == batch.bob_basis)
    return (batch.pulse_index[mask],
            BitString(batch.alice_bit[mask]),
            BitString(batch.bob_bit[mask]))


def estimate_qber(alice_bits: BitString, bob_bits: BitString,
                  sample_fraction: float, rng: SeededRng
                  ) -> tuple[float, int, BitString, BitString]:
    """Sacrifice a random sample of positions to estimate the error rate.

    Sampled positions are removed identically from both strings; the
    estimate is the mismatch fraction over the sample.
    """
    length = len(alice_bits)
    if length != len(bob_bits):
        raise ValueError("length mismatch")
    if length < 2:
        raise ValueError("need at least 2 bits")
    if not 0.0 < sample_fraction < 1.0:
        raise ValueError("sample_fraction must be in (0, 1)")
    m = int(length * sample_fraction)
    if m == 0:
        raise ValueError("empty sample")
    positions = draw_sample_positions(length, m, rng)
    a = alice_bits.asarray()
    b = bob_bits.asarray()
    errors = int((a[positions] != b[positions]).sum())
    keep = np.ones(length, dtype=bool)
    keep[positions] = False
    return errors / m, m, BitString(a[keep]), BitString(b[keep])


def draw_sample_positions(length: int, m: int, rng: SeededRng) -> np.ndarray:
    """Uniform sample of m positions without replacement, sorted."""
    return np.sort(rng.generator.choice(length, size=m, replace=False))


def compute_rates(raw_bits: int, blocks: int,
                  config: SessionConfig) -> tuple[float, float]:
    """Raw rate over wall time per block, and the zero-delay bounded rate."""
    if blocks < 1:
        raise ValueError("blocks must be >= 1")
    raw_rate = raw_bits / (blocks * (config.t_transmit + config.t_process))
    bounded = raw_bits / (blocks * config.t_transmit)
    return raw_rate, bounded


_code_lock = threading.Lock()


@functools.lru_cache(maxsize=8)
def _cached_code(n_block: int, code_rate: float, seed: int,
                 dist_text: str) -> ldpc.SparseParityMatrix:
    dist = ldpc.DegreeDistribution.from_text(dist_text)
    return ldpc.peg_construct(n_block, code_rate, dist, SeededRng(seed))


def session_code(config: SessionConfig) -> ldpc.SparseParityMatrix:
    """The parity-check matrix both parties derive from the configuration.

    Construction is serialized so the in-process session's two state
    machines build it once instead of racing.
    """
    with _code_lock:
        return _cached_code(config.n_block, config.code_rate,
                            config.ldpc_seed, config.degree_distribution)


# --------------------------------------------------------------------------
# shared quantum-phase simulation


@dataclass
class QuantumPhase:
    valid: DetectionBatch     # valid records only, global pulse indices
    blocks: int
    total_pulses: int


def simulate_quantum_phase(model: SourceModel, config: SessionConfig,
                           seed: int) -> QuantumPhase:
    """Run transmission blocks until the valid-bit target is reached.

    Deterministic in (model, config, seed); both parties call this with
    the shared master seed and obtain identical records.
    """
    master = SeededRng(seed)
    kept = []
    total_valid = 0
    block = 0
    while total_valid < config.target_valid_bits:
        if block >= config.max_blocks:
            raise ProtocolError(
                f"valid-bit target not reached within {config.max_blocks} "
                "blocks")
        rng_a = master.spawn(_TAG_ALICE * (1 << 32) + block)
        rng_b = master.spawn(_TAG_BOB * (1 << 32) + block)
        rng_c = master.spawn(_TAG_CHANNEL * (1 << 32) + block)
        choices = rng_a.generator.integers(0, 4, size=config.block_pulses,
                                           dtype=np.uint8)
        bases = BitString(rng_b.generator.integers(
            0, 2, size=config.block_pulses, dtype=np.uint8))
        batch = simulate_pulse_train(model, config.block_pulses, choices,
                                     bases, rng_c)
        sub = batch.select(batch.valid)
        sub = DetectionBatch(sub.pulse_index + block * config.block_pulses,
                             sub.alice_choice, sub.bob_basis, sub.click0,
                             sub.click1, sub.multiphoton)
        kept.append(sub)
        total_valid += len(sub)
        block += 1
    return QuantumPhase(valid=DetectionBatch.concat(kept), blocks=block,
                        total_pulses=block * config.block_pulses)


# --------------------------------------------------------------------------
# payload codecs

def _pack_bits(bs: BitString) -> bytes:
    return bs.serialize()


def _unpack_bits(payload: bytes) -> BitString:
    return BitString.deserialize(payload)


def _pack_indices(idx: np.ndarray) -> bytes:
    return struct.pack("<Q", idx.size) + idx.astype("<u4").tobytes()


def _unpack_indices(payload: bytes) -> np.ndarray:
    (count,) = struct.unpack_from("<Q", payload)
    return np.frombuffer(payload, dtype="<u4", count=count, offset=8) \
        .astype(np.int64)


def _expect(frame, msg_type: MsgType):
    if frame.msg_type == MsgType.ABORT:
        raise ProtocolAbort(frame.payload.decode("utf-8", "replace")
                            or "peer aborted")
    if frame.msg_type != msg_type:
        raise ProtocolError(f"expected {msg_type.name}, got "
                            f"{frame.msg_type.name}")
    return frame


# --------------------------------------------------------------------------
# party state machines


def _finish_report(config: SessionConfig, model: SourceModel, phase,
                   n_raw: int, qber: float, secret_len: int) -> SessionReport:
    raw_rate, bounded_raw = compute_rates(n_raw, phase.blocks, config)
    secret_rate, bounded_secret = compute_rates(secret_len, phase.blocks,
                                                config)
    detection_rate = len(phase.valid) / (phase.blocks * config.t_transmit)
    return SessionReport(
        clock_rate=model.clock_rate,
        detection_rate=detection_rate,
        raw_key_length=n_raw,
        raw_key_rate=raw_rate,
        bounded_raw_key_rate=bounded_raw,
        qber=qber,
        secret_key_length=secret_len,
        secret_key_rate=secret_rate,
        bounded_secret_key_rate=bounded_secret,
    )


def _trim_length(length: int, n_block: int) -> int:
    n = (length // n_block) * n_block
    if n == 0:
        raise ProtocolError(
            f"only {length} raw bits, need at least n_block={n_block}")
    return n


def run_alice(transport: Transport, config: SessionConfig, model: SourceModel,
              seed: int, session_id: int = 0,
              _corrupt_reconciled_bit: int | None = None) -> SessionOutcome:
    """Alice's side of one full session over the given transport."""
    master = SeededRng(seed)
    phase = simulate_quantum_phase(model, config, seed)
    h = session_code(config)

    def send(msg_type, payload=b""):
        transport.send(msg_type, session_id, payload)

    try:
        # Bob announces his bases over the valid records
        frame = _expect(transport.receive(), MsgType.BASIS_ANNOUNCE)
        bob_bases = _unpack_bits(frame.payload)
        if len(bob_bases) != len(phase.valid):
            raise ProtocolError("basis announcement count mismatch")

        # sift: matched-basis valid records, announced back to Bob
        matched = np.flatnonzero(phase.valid.alice_basis == bob_bases.asarray())
        send(MsgType.SIFT_INDICES, _pack_indices(matched))
        alice_sifted = BitString(phase.valid.alice_bit[matched])

        # parameter estimation: Alice draws and announces the sample
        length = len(alice_sifted)
        m = int(length * config.qber_sample_fraction)
        if length < 2 or m == 0:
            raise ProtocolError("too few sifted bits for QBER estimation")
        rng_q = master.spawn(_TAG_QBER)
        positions = draw_sample_positions(length, m, rng_q)
        a_arr = alice_sifted.asarray()
        send(MsgType.QBER_SAMPLE,
             _pack_indices(positions) + _pack_bits(BitString(a_arr[positions])))
        frame = _expect(transport.receive(), MsgType.QBER_VALUE)
        m_used, errors = struct.unpack("<QQ", frame.payload)
        qber = errors / m_used
        keep = np.ones(length, dtype=bool)
        keep[positions] = False
        remaining = a_arr[keep]

        # reconciliation toward Bob's key
        n = _trim_length(remaining.size, config.n_block)
        alice_raw = BitString(remaining[:n])
        n_blocks = n // config.n_block
        syndromes = []
        for _ in range(n_blocks):
            frame = _expect(transport.receive(), MsgType.SYNDROME)
            syndromes.append(_unpack_bits(frame.payload))
        q_dec = min(max(qber, 1e-3), 0.499)
        try:
            reconciled = ldpc.reconcile(alice_raw, syndromes, h, q_dec,
                                        workers=config.workers,
                                        max_iters=config.max_decode_iters)
        except ldpc.ReconciliationError as exc:
            send(MsgType.ABORT, str(exc).encode())
            raise ProtocolAbort(str(exc)) from exc

        if _corrupt_reconciled_bit is not None:
            arr = reconciled.asarray()
            arr[_corrupt_reconciled_bit % n] ^= 1
            reconciled = BitString(arr)

        # secret fraction and privacy amplification
        params = finite_key.FiniteKeyParams(
            n=n, m=m_used, q_observed=min(qber, 0.5),
            code_rate=config.code_rate,
            a_correction=1.0 - model.multiphoton_ratio)
        r_raw, r = finite_key.secret_fraction(params, config.security)
        spec = privacy.make_spec(n, r, master.spawn(_TAG_TOEPLITZ))
        send(MsgType.TOEPLITZ_SEED,
             struct.pack("<QQ", spec.n_cols, spec.n_rows)
             + _pack_bits(spec.seed_bits))
        key = privacy.toeplitz_hash(spec, reconciled)

        # verification
        if len(key) > 0:
            check_len = min(config.check_len, len(key))
            check_seed = master.spawn(_TAG_VERIFY)
            vspec = privacy.ToeplitzSpec(
                n_cols=len(key), n_rows=check_len,
                seed_bits=random_bits(len(key) + check_len - 1, check_seed))
            vhash = privacy.toeplitz_hash(vspec, key)
            send(MsgType.VERIFY_HASH,
                 _pack_bits(vspec.seed_bits) + _pack_bits(vhash))
        frame = _expect(transport.receive(), MsgType.CONFIRM)
    except ProtocolAbort:
        raise
    except Exception:
        try:
            send(MsgType.ABORT, b"alice internal error")
        except Exception:
            pass
        raise

    report = _finish_report(config, model, phase, n, qber, len(key))
    audit = {
        "role": "alice",
        "seed": seed,
        "rng_algorithm": master.algorithm,
        "blocks": phase.blocks,
        "sifted_bits": length,
        "qber_sample_bits": m_used,
        "n": n,
        "r_raw": r_raw,
        "r": r,
        "syndrome_bits_disclosed": sum(len(s) for s in syndromes),
        "expected_syndrome_bits": round((1 - config.code_rate) * n),
    }
    return SessionOutcome(key=key, report=report, audit=audit)


def run_bob(transport: Transport, config: SessionConfig, model: SourceModel,
            seed: int, session_id: int = 0) -> SessionOutcome:
    """Bob's side of one full session over the given transport."""
    phase = simulate_quantum_phase(model, config, seed)
    h = session_code(config)

    def send(msg_type, payload=b""):
        transport.send(msg_type, session_id, payload)

    try:
        send(MsgType.BASIS_ANNOUNCE,
             _pack_bits(BitString(phase.valid.bob_basis)))

        frame = _expect(transport.receive(), MsgType.SIFT_INDICES)
        matched = _unpack_indices(frame.payload)
        bob_sifted = BitString(phase.valid.bob_bit[matched])

        frame = _expect(transport.receive(), MsgType.QBER_SAMPLE)
        (count,) = struct.unpack_from("<Q", frame.payload)
        idx_bytes = 8 + 4 * count
        positions = _unpack_indices(frame.payload[:idx_bytes])
        alice_sample = _unpack_bits(frame.payload[idx_bytes:]).asarray()
        b_arr = bob_sifted.asarray()
        errors = int((b_arr[positions] != alice_sample).sum())
        qber = errors / count
        send(MsgType.QBER_VALUE, struct.pack("<QQ", count, errors))
        keep = np.ones(len(bob_sifted), dtype=bool)
        keep[positions] = False
        remaining = b_arr[keep]

        n = _trim_length(remaining.size, config.n_block)
        bob_raw = BitString(remaining[:n])
        syndromes_sent = 0
        for s in ldpc.block_syndromes(h, bob_raw):
            send(MsgType.SYNDROME, _pack_bits(s))
            syndromes_sent += len(s)

        frame = _expect(transport.receive(), MsgType.TOEPLITZ_SEED)
        n_cols, n_rows = struct.unpack_from("<QQ", frame.payload)
        if n_cols != n:
            raise ProtocolError("Toeplitz width disagrees with key length")
        seed_bits = _unpack_bits(frame.payload[16:])
        spec = privacy.ToeplitzSpec(n_cols=n_cols, n_rows=n_rows,
                                    seed_bits=seed_bits)
        key = privacy.toeplitz_hash(spec, bob_raw)

        if len(key) > 0:
            frame = _expect(transport.receive(), MsgType.VERIFY_HASH)
            payload = frame.payload
            (seed_len,) = struct.unpack_from("<Q", payload)
            seed_bytes = 8 + (seed_len + 7) // 8
            vseed = _unpack_bits(payload[:seed_bytes])
            alice_hash = _unpack_bits(payload[seed_bytes:])
            vspec = privacy.ToeplitzSpec(n_cols=len(key),
                                         n_rows=len(alice_hash),
                                         seed_bits=vseed)
            if privacy.toeplitz_hash(vspec, key) != alice_hash:
                send(MsgType.ABORT, b"verification hash mismatch")
                raise ProtocolAbort("verification hash mismatch")
        send(MsgType.CONFIRM)
    except ProtocolAbort:
        raise
    except Exception:
        try:
            send(MsgType.ABORT, b"bob internal error")
        except Exception:
            pass
        raise

    report = _finish_report(config, model, phase, n, qber, len(key))
    audit = {
        "role": "bob",
        "seed": seed,
        "blocks": phase.blocks,
        "sifted_bits": len(bob_sifted),
        "qber_sample_bits": count,
        "n": n,
        "syndrome_bits_disclosed": syndromes_sent,
        "expected_syndrome_bits": round((1 - config.code_rate) * n),
    }
    return SessionOutcome(key=key, report=report, audit=audit)


def run_session_detailed(config: SessionConfig, model: SourceModel, seed: int,
                         session_id: int = 0,
                         _corrupt_reconciled_bit: int | None = None
                         ) -> tuple[SessionOutcome, SessionOutcome]:
    """In-process session: both state machines over a queue transport pair.

    Returns both parties' outcomes; raises :class:`ProtocolAbort` if either
    side aborts.
    """
    ta, tb = queue_pair()
    results: dict[str, SessionOutcome] = {}
    errors: dict[str, BaseException] = {}

    def part(name, fn, transport):
        try:
            results[name] = fn(transport)
        except BaseException as exc:  # noqa: BLE001 - repropagated below
            errors[name] = exc
            transport.close()

    th_a = threading.Thread(target=part, args=(
        "alice",
        lambda t: run_alice(t, config, model, seed, session_id,
                            _corrupt_reconciled_bit=_corrupt_reconciled_bit),
        ta))
    th_b = threading.Thread(target=part, args=(
        "bob", lambda t: run_bob(t, config, model, seed, session_id), tb))
    th_a.start()
    th_b.start()
    th_a.join()
    th_b.join()

    # a genuine failure on one side surfaces before the peer's resulting abort
    for name in ("alice", "bob"):
        exc = errors.get(name)
        if exc is not None and not isinstance(exc, ProtocolAbort):
            raise exc
    for name in ("alice", "bob"):
        if name in errors:
            raise errors[name]

    return results["alice"], results["bob"]


def run_session(config: SessionConfig, model: SourceModel, seed: int,
                session_id: int = 0,
                _corrupt_reconciled_bit: int | None = None
                ) -> tuple[BitString, BitString, SessionReport]:
    """Convenience wrapper returning (alice_key, bob_key, report)."""
    alice, bob = run_session_detailed(
        config, model, seed, session_id,
        _corrupt_reconciled_bit=_corrupt_reconciled_bit)
    return alice.key, bob.key, alice.report


def config_digest(config: SessionConfig, model: SourceModel) -> str:
    """Stable hash of the run parameters, embedded in reports for replay."""
    text = repr((config, model)).encode()
    return hashlib.sha256(text).hexdigest()[:16]
