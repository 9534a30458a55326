"""Single-photon source, free-space channel, and gated detector simulation.

The simulator is purely statistical: each clock pulse yields a possible
signal detection with probability ``p_det``, polarisation routing through
the PBS according to the basis match, an optional multiphoton event that
draws a second independent click, and independent dark-click trials on both
detectors within the gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .bits import BitString, SeededRng

BASIS_HV = 0
BASIS_RL = 1

# choice -> (basis, bit, polarisation); H and R carry bit 0, V and L bit 1.
CHOICE_TABLE = {
    0: (BASIS_HV, 0, "H"),
    1: (BASIS_HV, 1, "V"),
    2: (BASIS_RL, 0, "R"),
    3: (BASIS_RL, 1, "L"),
}

DUMP_HEADER = ("pulse_index,alice_choice,alice_basis,alice_bit,"
               "bob_basis,click0,click1,valid,multiphoton")


@dataclass(frozen=True)
class SourceModel:
    """Measured source and detector parameters driving the simulation.

    Defaults are the characterised values of the desk-scale setup: 500 kHz
    clock, per-pulse detection probability 0.003, multiphoton-to-detection
    ratio 0.015, mean photon number 0.012, g2(0) = 0.08, saturation count
    rate 5.08e5 cts/s at 217 uW. ``mu``, ``g2_0``, ``i_sat`` and ``p_sat``
    are descriptive metadata; the pulse simulation is driven by ``p_det``,
    ``multiphoton_ratio``, ``dark_count_prob`` and ``pol_error_prob``.
    """

    clock_rate: float = 5e5
    p_det: float = 0.003
    multiphoton_ratio: float = 0.015
    dark_count_prob: float = 0.0
    pol_error_prob: float = 0.0
    mu: float = 0.012
    g2_0: float = 0.08
    i_sat: float = 5.08e5
    p_sat: float = 217.0

    def __post_init__(self):
        if not 0.0 <= self.p_det <= 1.0:
            raise ValueError("p_det must be in [0, 1]")
        if not 0.0 <= self.multiphoton_ratio < 1.0:
            raise ValueError("multiphoton_ratio must be in [0, 1)")
        if not 0.0 <= self.pol_error_prob <= 0.5:
            raise ValueError("pol_error_prob must be in [0, 0.5]")
        if not 0.0 <= self.dark_count_prob <= 1.0:
            raise ValueError("dark_count_prob must be in [0, 1]")
        for name in ("clock_rate", "mu", "g2_0", "i_sat", "p_sat"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class DetectionRecord:
    """Outcome of one gated pulse at Bob."""

    pulse_index: int
    alice_choice: int
    alice_basis: int
    alice_bit: int
    bob_basis: int
    clicks: tuple[bool, bool]
    valid: bool
    multiphoton: bool

    @property
    def bob_bit(self) -> int:
        """Detector identity of the single click; only meaningful if valid."""
        return 1 if self.clicks[1] else 0


class DetectionBatch(Sequence):
    """Column-oriented store of detection records.

    Behaves as a sequence of :class:`DetectionRecord` while keeping the
    underlying numpy arrays accessible for vectorised sifting and
    statistics over millions of pulses.
    """

    def __init__(self, pulse_index, alice_choice, bob_basis, click0, click1,
                 multiphoton):
        self.pulse_index = np.asarray(pulse_index, dtype=np.int64)
        self.alice_choice = np.asarray(alice_choice, dtype=np.uint8)
        self.bob_basis = np.asarray(bob_basis, dtype=np.uint8)
        self.click0 = np.asarray(click0, dtype=bool)
        self.click1 = np.asarray(click1, dtype=bool)
        self.multiphoton = np.asarray(multiphoton, dtype=bool)
        n = self.pulse_index.size
        for arr in (self.alice_choice, self.bob_basis, self.click0,
                    self.click1, self.multiphoton):
            if arr.size != n:
                raise ValueError("column length mismatch")

    @property
    def alice_basis(self) -> np.ndarray:
        return (self.alice_choice >> 1).astype(np.uint8)

    @property
    def alice_bit(self) -> np.ndarray:
        return (self.alice_choice & 1).astype(np.uint8)

    @property
    def valid(self) -> np.ndarray:
        # exactly one detector clicked in the gate
        return self.click0 ^ self.click1

    @property
    def bob_bit(self) -> np.ndarray:
        return self.click1.astype(np.uint8)

    def __len__(self) -> int:
        return self.pulse_index.size

    def __getitem__(self, i) -> DetectionRecord:
        if isinstance(i, slice):
            return DetectionBatch(self.pulse_index[i], self.alice_choice[i],
                                  self.bob_basis[i], self.click0[i],
                                  self.click1[i], self.multiphoton[i])
        i = int(i)
        return DetectionRecord(
            pulse_index=int(self.pulse_index[i]),
            alice_choice=int(self.alice_choice[i]),
            alice_basis=int(self.alice_choice[i]) >> 1,
            alice_bit=int(self.alice_choice[i]) & 1,
            bob_basis=int(self.bob_basis[i]),
            clicks=(bool(self.click0[i]), bool(self.click1[i])),
            valid=bool(self.click0[i] ^ self.click1[i]),
            multiphoton=bool(self.multiphoton[i]),
        )

    def select(self, idx) -> "DetectionBatch":
        """Sub-batch at the given indices or boolean mask."""
        return DetectionBatch(self.pulse_index[idx], self.alice_choice[idx],
                              self.bob_basis[idx], self.click0[idx],
                              self.click1[idx], self.multiphoton[idx])

    def __iter__(self) -> Iterator[DetectionRecord]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_records(cls, records: Sequence[DetectionRecord]) -> "DetectionBatch":
        if isinstance(records, cls):
            return records
        records = list(records)
        return cls(
            [r.pulse_index for r in records],
            [r.alice_choice for r in records],
            [r.bob_basis for r in records],
            [r.clicks[0] for r in records],
            [r.clicks[1] for r in records],
            [r.multiphoton for r in records],
        )

    @classmethod
    def concat(cls, batches: Sequence["DetectionBatch"]) -> "DetectionBatch":
        return cls(*(np.concatenate([getattr(b, col) for b in batches])
                     for col in ("pulse_index", "alice_choice", "bob_basis",
                                 "click0", "click1", "multiphoton")))

    def dump(self) -> str:
        """Debug dump: one CSV line per record, header first."""
        lines = [DUMP_HEADER]
        for r in self:
            lines.append(f"{r.pulse_index},{r.alice_choice},{r.alice_basis},"
                         f"{r.alice_bit},{r.bob_basis},{int(r.clicks[0])},"
                         f"{int(r.clicks[1])},{int(r.valid)},{int(r.multiphoton)}")
        return "\n".join(lines)


def saturation_count_rate(power: float, i_sat: float, p_sat: float) -> float:
    """Detected count rate versus excitation power, I = I_sat * P/(P + P_sat)."""
    if power < 0:
        raise ValueError("power must be >= 0")
    if p_sat <= 0:
        raise ValueError("p_sat must be > 0")
    return i_sat * power / (power + p_sat)


def simulate_pulse_train(model: SourceModel, n_pulses: int,
                         alice_choices: np.ndarray | Sequence[int],
                         bob_basis_bits: BitString,
                         rng: SeededRng) -> DetectionBatch:
    """Simulate one gated transmission block of ``n_pulses`` pulses.

    Signal arrival, PBS routing, the multiphoton second draw, and dark
    clicks are all independent Bernoulli draws from ``rng``; a record is
    valid iff exactly one detector clicked.
    """
    choices = np.asarray(alice_choices, dtype=np.uint8)
    if choices.size != n_pulses or len(bob_basis_bits) != n_pulses:
        raise ValueError("alice_choices and bob_basis_bits must both have "
                         "length n_pulses")
    if choices.size and choices.max() > 3:
        raise ValueError("alice choices must be in 0..3")

    g = rng.generator
    bob_basis = bob_basis_bits.asarray()
    alice_basis = choices >> 1
    alice_bit = choices & 1
    match = alice_basis == bob_basis

    detected = g.random(n_pulses) < model.p_det
    multi = detected & (g.random(n_pulses) < model.multiphoton_ratio)

    def signal_detector(u):
        # matched basis: correct port except with pol_error_prob;
        # mismatched basis: 50/50.
        det = np.where(match,
                       np.where(u < model.pol_error_prob, 1 - alice_bit,
                                alice_bit),
                       (u < 0.5).astype(np.uint8))
        return det.astype(np.uint8)

    det1 = signal_detector(g.random(n_pulses))
    det2 = signal_detector(g.random(n_pulses))  # second photon, if multiphoton

    click0 = detected & (det1 == 0)
    click1 = detected & (det1 == 1)
    click0 |= multi & (det2 == 0)
    click1 |= multi & (det2 == 1)
    if model.dark_count_prob > 0:
        click0 |= g.random(n_pulses) < model.dark_count_prob
        click1 |= g.random(n_pulses) < model.dark_count_prob

    return DetectionBatch(np.arange(n_pulses), choices, bob_basis,
                          click0, click1, multi & detected)


def estimate_multiphoton_ratio(records) -> float:
    """Fraction of signal-detected pulses flagged multiphoton."""
    batch = DetectionBatch.from_records(records)
    detected = batch.click0 | batch.click1
    n_det = int(detected.sum())
    if n_det == 0:
        raise ValueError("no detected pulses to estimate from")
    return float((batch.multiphoton & detected).sum()) / n_det
