"""Packed bit strings, seeded randomness, and GF(2) helpers.

Bit order convention, used everywhere in this package: bit index 0 is the
first transmitted bit and lives in the least significant position of the
first storage byte (numpy ``bitorder="little"``).
"""

from __future__ import annotations

import struct
from typing import Iterable, Sequence

import numpy as np

RNG_ALGORITHM = "pcg64"


class SeededRng:
    """Deterministic random stream, reproducible byte-for-byte across platforms.

    Wraps numpy's PCG64 generator; the algorithm name is recorded so reports
    can state exactly how every random draw was produced.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.algorithm = RNG_ALGORITHM
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, key: int) -> "SeededRng":
        """Derive an independent child stream keyed by an integer label."""
        child_seed = np.random.SeedSequence([self.seed, int(key)])
        rng = SeededRng.__new__(SeededRng)
        rng.seed = self.seed
        rng.algorithm = RNG_ALGORITHM
        rng.generator = np.random.Generator(np.random.PCG64(child_seed))
        return rng

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, algorithm={self.algorithm!r})"


class BitString:
    """Immutable packed sequence of bits with an exact length.

    Equality and hashing cover exactly ``len(self)`` bits; padding bits in
    the final storage byte never participate.
    """

    __slots__ = ("_packed", "_length")

    def __init__(self, bits: Iterable[int] | np.ndarray = ()):
        arr = np.asarray(list(bits) if not isinstance(bits, np.ndarray) else bits,
                         dtype=np.uint8)
        if arr.ndim != 1:
            raise ValueError("bits must be one-dimensional")
        if arr.size and arr.max() > 1:
            raise ValueError("bits must be 0 or 1")
        self._length = int(arr.size)
        self._packed = np.packbits(arr, bitorder="little")
        self._packed.setflags(write=False)

    # ---- constructors -------------------------------------------------

    @classmethod
    def _from_packed(cls, packed: np.ndarray, length: int) -> "BitString":
        bs = cls.__new__(cls)
        bs._length = int(length)
        packed = np.asarray(packed, dtype=np.uint8)
        bs._packed = cls._mask_tail(packed.copy(), length)
        bs._packed.setflags(write=False)
        return bs

    @classmethod
    def zeros(cls, length: int) -> "BitString":
        if length < 0:
            raise ValueError("length must be >= 0")
        return cls._from_packed(np.zeros((length + 7) // 8, dtype=np.uint8), length)

    @classmethod
    def from_bytes(cls, data: bytes, length: int) -> "BitString":
        """Interpret ``data`` as packed little-endian bits of the given length."""
        if length < 0 or len(data) != (length + 7) // 8:
            raise ValueError("byte count inconsistent with bit length")
        return cls._from_packed(np.frombuffer(data, dtype=np.uint8), length)

    @classmethod
    def concat(cls, parts: Sequence["BitString"]) -> "BitString":
        if not parts:
            return cls.zeros(0)
        return cls(np.concatenate([p.asarray() for p in parts]))

    @staticmethod
    def _mask_tail(packed: np.ndarray, length: int) -> np.ndarray:
        # Force padding bits of the last byte to zero so raw byte comparison
        # is well defined.
        rem = length % 8
        if rem and packed.size:
            packed[-1] &= (1 << rem) - 1
        return packed

    # ---- accessors ----------------------------------------------------

    def __len__(self) -> int:
        return self._length

    def asarray(self) -> np.ndarray:
        """Unpacked copy as a uint8 array of 0/1 values."""
        return np.unpackbits(self._packed, count=self._length, bitorder="little")

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return BitString(self.asarray()[idx])
        i = int(idx)
        if i < 0:
            i += self._length
        if not 0 <= i < self._length:
            raise IndexError("bit index out of range")
        return int(self._packed[i >> 3] >> (i & 7) & 1)

    def __iter__(self):
        return iter(self.asarray().tolist())

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitString):
            return NotImplemented
        return (self._length == other._length
                and np.array_equal(self._packed, other._packed))

    def __hash__(self) -> int:
        return hash((self._length, self._packed.tobytes()))

    def __repr__(self) -> str:
        if self._length <= 64:
            body = "".join(str(b) for b in self.asarray())
            return f"BitString('{body}')"
        return f"BitString(length={self._length})"

    def __xor__(self, other: "BitString") -> "BitString":
        return xor(self, other)

    def weight(self) -> int:
        """Number of set bits."""
        return int(np.unpackbits(self._packed, count=self._length,
                                 bitorder="little").sum())

    # ---- serialization ------------------------------------------------

    def to_bytes(self) -> bytes:
        """Packed payload bytes only (no length header)."""
        return self._packed.tobytes()

    def serialize(self) -> bytes:
        """Length (u64 little-endian) followed by packed payload bytes."""
        return struct.pack("<Q", self._length) + self._packed.tobytes()

    @classmethod
    def deserialize(cls, buf: bytes) -> "BitString":
        if len(buf) < 8:
            raise ValueError("truncated BitString serialization")
        (length,) = struct.unpack_from("<Q", buf)
        payload = buf[8:]
        return cls.from_bytes(payload, length)


def random_bits(count: int, rng: SeededRng) -> BitString:
    """Draw ``count`` unbiased bits from the seeded stream."""
    if count < 0:
        raise ValueError("count must be >= 0")
    return BitString(rng.generator.integers(0, 2, size=count, dtype=np.uint8))


def xor(a: BitString, b: BitString) -> BitString:
    """Elementwise exclusive-or of two equal-length bit strings."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    return BitString._from_packed(np.bitwise_xor(a._packed, b._packed), len(a))


def hamming_distance(a: BitString, b: BitString) -> int:
    """Number of positions where the two strings differ."""
    return xor(a, b).weight()
