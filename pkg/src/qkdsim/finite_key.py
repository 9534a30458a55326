"""Finite-key security evaluation.

Computes the secret fraction

    r = A * (1 - h(Q_u / A)) - (1 - R_c) - Delta(n)

where Q_u = Q + xi widens the observed QBER by a statistical-fluctuation
penalty, A = (p_det - P_m)/p_det corrects for multiphoton emission, the
(1 - R_c) term accounts for the syndrome bits disclosed during
reconciliation, and Delta(n) is the finite-size penalty. All logarithms
are base 2; entropies are in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

NEG_INF = float("-inf")


@dataclass(frozen=True)
class SecurityBudget:
    """Split of the total failure probability across protocol stages.

    eps_total = eps_smooth + eps_pa + eps_ec + eps_pe must hold (within
    1e-3 relative); the default is an even four-way split of 1e-10.
    """

    eps_total: float = 1e-10
    eps_smooth: float = None
    eps_pa: float = None
    eps_ec: float = None
    eps_pe: float = None

    def __post_init__(self):
        for name in ("eps_smooth", "eps_pa", "eps_ec", "eps_pe"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, self.eps_total / 4.0)
        for name in ("eps_total", "eps_smooth", "eps_pa", "eps_ec", "eps_pe"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name}={v} must be in (0, 1)")
        total = self.eps_smooth + self.eps_pa + self.eps_ec + self.eps_pe
        if abs(total - self.eps_total) > 1e-3 * self.eps_total:
            raise ValueError(
                f"epsilon split sums to {total}, declared total {self.eps_total}")


@dataclass(frozen=True)
class FiniteKeyParams:
    """Inputs to the secret-fraction evaluation."""

    n: int                    # reconciled key length in bits
    m: int                    # bits sacrificed for parameter estimation
    q_observed: float         # estimated QBER
    code_rate: float = 0.5
    a_correction: float = 0.985
    d_outcomes: int = 2       # two-outcome measurement

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be >= 1")
        if not 0.0 <= self.q_observed <= 0.5:
            raise ValueError("q_observed must be in [0, 0.5]")
        if not 0.0 < self.code_rate < 1.0:
            raise ValueError("code_rate must be in (0, 1)")
        if not 0.0 < self.a_correction <= 1.0:
            raise ValueError("a_correction must be in (0, 1]")
        if self.d_outcomes != 2:
            raise ValueError("d_outcomes must be 2")


def binary_entropy(x: float) -> float:
    """h(x) = -x log2 x - (1-x) log2 (1-x), with h(0) = h(1) = 0."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("binary_entropy argument must be in [0, 1]")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def xi(m: int, eps_pe: float, d: int = 2) -> float:
    """Statistical-fluctuation penalty on the QBER estimate from m samples.

    xi = (1/2) * sqrt((2 log2(1/eps_pe) + d log2(m+1)) / m)
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0.0 < eps_pe < 1.0:
        raise ValueError("eps_pe must be in (0, 1)")
    if d < 1:
        raise ValueError("d must be >= 1")
    return 0.5 * math.sqrt(
        (2.0 * math.log2(1.0 / eps_pe) + d * math.log2(m + 1)) / m)


def qber_upper(q: float, xi_value: float) -> float:
    """Upper bound Q_u = Q + xi on the true QBER."""
    if q < 0.0 or xi_value < 0.0:
        raise ValueError("q and xi must be >= 0")
    return q + xi_value


def correction_A(p_det: float, p_m: float) -> float:
    """Multiphoton correction A = (p_det - P_m) / p_det."""
    if not 0.0 < p_det <= 1.0:
        raise ValueError("p_det must be in (0, 1]")
    if p_m < 0.0 or p_m >= p_det:
        raise ValueError("p_m must satisfy 0 <= p_m < p_det")
    return 1.0 - p_m / p_det


def delta_penalty(n: int, eps_smooth: float, eps_pa: float,
                  eps_ec: float) -> float:
    """Finite-size penalty Delta(n).

    Delta(n) = 7 sqrt(log2(2/eps_smooth)/n)
               + (2 log2(1/eps_pa) + log2(2/eps_ec)) / n
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    for name, v in (("eps_smooth", eps_smooth), ("eps_pa", eps_pa),
                    ("eps_ec", eps_ec)):
        if not 0.0 < v < 1.0:
            raise ValueError(f"{name} must be in (0, 1)")
    return (7.0 * math.sqrt(math.log2(2.0 / eps_smooth) / n)
            + (2.0 * math.log2(1.0 / eps_pa) + math.log2(2.0 / eps_ec)) / n)


def secret_fraction(params: FiniteKeyParams,
                    budget: SecurityBudget) -> tuple[float, float]:
    """Evaluate the secret fraction; returns (r_raw, r) with r clamped at 0.

    r_raw stays signed for diagnostics: short blocks or high QBER
    legitimately drive it negative, which reports as a zero-length key
    rather than an error. If Q_u/A exceeds 1 the entropy term is undefined
    and r_raw is -inf.
    """
    x = xi(params.m, budget.eps_pe, params.d_outcomes)
    q_u = qber_upper(params.q_observed, x)
    a = params.a_correction
    ratio = q_u / a
    if ratio > 1.0:
        return NEG_INF, 0.0
    r_raw = (a * (1.0 - binary_entropy(ratio))
             - (1.0 - params.code_rate)
             - delta_penalty(params.n, budget.eps_smooth, budget.eps_pa,
                             budget.eps_ec))
    return r_raw, max(r_raw, 0.0)


def secret_key_length(n: int, r: float) -> int:
    """Final key length floor(r * n)."""
    if r < 0.0:
        raise ValueError("r must be >= 0")
    return math.floor(r * n)


def reconciliation_efficiency(code_rate: float, q: float) -> float:
    """f_E = (1 - R_c) / h(Q), the syndrome leakage relative to capacity."""
    if not 0.0 < q < 0.5:
        raise ValueError("q must be in (0, 0.5)")
    return (1.0 - code_rate) / binary_entropy(q)


@dataclass(frozen=True)
class CurvePoint:
    q: float
    n: int
    r_raw: float | None
    r: float | None
    error: str | None = None


def r_vs_n_curve(q_values: Iterable[float], n_values: Iterable[int],
                 budget: SecurityBudget, code_rate: float = 0.5,
                 a_correction: float = 0.985) -> list[CurvePoint]:
    """Secret fraction over a (q, n) grid with m = n.

    Per-point domain failures are recorded in the row rather than raised,
    so a sweep can cross into the zero-key region without aborting.
    """
    q_values = list(q_values)
    n_values = list(n_values)
    if not q_values or not n_values:
        raise ValueError("q_values and n_values must be nonempty")
    out = []
    for q in q_values:
        for n in n_values:
            try:
                params = FiniteKeyParams(n=n, m=n, q_observed=q,
                                         code_rate=code_rate,
                                         a_correction=a_correction)
                r_raw, r = secret_fraction(params, budget)
                out.append(CurvePoint(q=q, n=n, r_raw=r_raw, r=r))
            except ValueError as exc:
                out.append(CurvePoint(q=q, n=n, r_raw=None, r=None,
                                      error=str(exc)))
    return out


def curve_csv(points: list[CurvePoint]) -> str:
    """CSV rendering with header q,n,r_raw,r (error column when present)."""
    lines = ["q,n,r_raw,r,error"]
    for p in points:
        r_raw = "" if p.r_raw is None else f"{p.r_raw:.10g}"
        r = "" if p.r is None else f"{p.r:.10g}"
        lines.append(f"{p.q:g},{p.n},{r_raw},{r},{p.error or ''}")
    return "\n".join(lines) + "\n"
