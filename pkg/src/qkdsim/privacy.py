"""Toeplitz-hash privacy amplification and final key verification.

A Toeplitz matrix with n_cols columns and n_rows rows is fully determined
by a seed of n_cols + n_rows - 1 bits: T[i][j] = seed[i - j + n_cols - 1].
Only the seed is ever transmitted. The product is evaluated through an
FFT convolution whose integer coefficients are recovered exactly (the
rounding residual is checked; a bitset fallback covers the pathological
case), so the observable result is bit-identical to the dense GF(2)
matrix-vector product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .bits import BitString, SeededRng, random_bits

DEFAULT_CHECK_LEN = 64


@dataclass(frozen=True)
class ToeplitzSpec:
    """Hash description: dimensions plus the diagonal seed bits."""

    n_cols: int
    n_rows: int
    seed_bits: BitString

    def __post_init__(self):
        if self.n_rows > self.n_cols:
            raise ValueError("n_rows must be <= n_cols")
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValueError("dimensions must be >= 0")
        expected = self.n_cols + self.n_rows - 1 if self.n_rows > 0 else 0
        if self.n_rows > 0 and len(self.seed_bits) != expected:
            raise ValueError(
                f"seed length {len(self.seed_bits)} != n_cols + n_rows - 1 "
                f"= {expected}")


def make_spec(n: int, r: float, rng: SeededRng) -> ToeplitzSpec:
    """Draw a fresh hash spec compressing n bits down to floor(r * n)."""
    if r < 0:
        raise ValueError("r must be >= 0")
    n_rows = int(np.floor(r * n))
    seed_len = n + n_rows - 1 if n_rows > 0 else max(n - 1, 0)
    return ToeplitzSpec(n_cols=n, n_rows=n_rows,
                        seed_bits=random_bits(seed_len, rng))


def toeplitz_hash(spec: ToeplitzSpec, input_bits: BitString) -> BitString:
    """Apply the Toeplitz matrix to the input over GF(2).

    output[i] = XOR_j seed[i - j + n_cols - 1] * input[j], i.e. a slice of
    the polynomial product of the seed and the input.
    """
    if len(input_bits) != spec.n_cols:
        raise ValueError(
            f"input length {len(input_bits)} != n_cols {spec.n_cols}")
    if spec.n_rows == 0:
        return BitString.zeros(0)
    s = spec.seed_bits.asarray().astype(np.float64)
    x = input_bits.asarray().astype(np.float64)
    conv = fftconvolve(s, x)
    window = conv[spec.n_cols - 1: spec.n_cols - 1 + spec.n_rows]
    rounded = np.rint(window)
    # float64 FFT error here is ~1e-9 on 0/1 sequences of this scale; a
    # large residual means something went numerically wrong, so recompute
    # exactly with integer bitsets
    if window.size and np.max(np.abs(window - rounded)) > 0.1:
        return _toeplitz_hash_exact(spec, input_bits)
    return BitString((rounded.astype(np.int64) & 1).astype(np.uint8))


def _toeplitz_hash_exact(spec: ToeplitzSpec,
                         input_bits: BitString) -> BitString:
    """GF(2) polynomial product via shift-and-XOR on python integers."""
    s_int = int.from_bytes(spec.seed_bits.to_bytes(), "little")
    acc = 0
    for j in np.flatnonzero(input_bits.asarray()):
        acc ^= s_int << int(j)
    out = (acc >> (spec.n_cols - 1)) & ((1 << spec.n_rows) - 1)
    n_bytes = (spec.n_rows + 7) // 8
    return BitString.from_bytes(out.to_bytes(n_bytes, "little"), spec.n_rows)


def verification_check(key_a: BitString, key_b: BitString,
                       check_len: int = DEFAULT_CHECK_LEN,
                       rng: SeededRng = None) -> bool:
    """Compare short Toeplitz hashes of both keys under a fresh public seed.

    Differing keys pass only with probability <= 2^-check_len. Hashes the
    whole key; check_len = 0 would make the check vacuous and is rejected.
    """
    if len(key_a) != len(key_b):
        raise ValueError("keys must have equal length")
    if check_len < 1:
        raise ValueError("check_len must be >= 1")
    if len(key_a) < check_len:
        raise ValueError("keys shorter than check_len")
    if rng is None:
        raise ValueError("an rng for the public check seed is required")
    spec = ToeplitzSpec(n_cols=len(key_a), n_rows=check_len,
                        seed_bits=random_bits(len(key_a) + check_len - 1, rng))
    return toeplitz_hash(spec, key_a) == toeplitz_hash(spec, key_b)
