"""Trust ageing, Gompertz trust growth and the integer reputation aggregate.

Trust is kept as the running aged sum ``I_n = gamma * I_{n-1} + delta`` and mapped
into ``(0, a)`` by ``a * exp(-b * exp(-c * I_n))``.  ``b`` and ``c`` are stored as
positive magnitudes; that is the orientation that keeps the curve bounded and
increasing.

Reputation lives on the ledger, so it is integer-only.  Values are fixed-point
with ``scale`` units per 1.0 (default 1000).  The decayed sum is advanced with
a half-even rounded multiply, and the final product with ``ln(N_peers)`` is
truncated toward zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

from .errors import ValidationError

DEFAULT_SCALE = 1000

#: Fixed-point denominator used for natural logarithms.
LN_SCALE = 10**12
_LN_GUARD = 10**12
_LN_TABLE_SIZE = 64


# ---------------------------------------------------------------------------
# Fixed-point natural log


def _atanh_fixed(num: int, den: int, one: int) -> int:
    """atanh(num/den) * one for 0 <= num/den <= 1/3, by its odd power series."""
    total = 0
    power = one * num // den
    den2 = den * den
    num2 = num * num
    k = 1
    while power:
        total += power // k
        power = power * num2 // den2
        k += 2
    return total


def _ln_series(n: int) -> int:
    one = LN_SCALE * _LN_GUARD
    ln2 = 2 * _atanh_fixed(1, 3, one)
    k = n.bit_length() - 1
    base = 1 << k
    # n = 2**k * m with m in [1, 2): ln m = 2 atanh((m-1)/(m+1)) = 2 atanh((n-base)/(n+base))
    value = k * ln2 + 2 * _atanh_fixed(n - base, n + base, one)
    return (value + _LN_GUARD // 2) // _LN_GUARD


_LN_TABLE = tuple(_ln_series(n) for n in range(1, _LN_TABLE_SIZE + 1))


def ln_fixed(n: int) -> int:
    """round(ln(n) * LN_SCALE) for integer n >= 1."""
    if n < 1:
        raise ValueError("ln_fixed is defined for n >= 1")
    if n <= _LN_TABLE_SIZE:
        return _LN_TABLE[n - 1]
    return _ln_series(n)


# ---------------------------------------------------------------------------
# Trust


@dataclass(frozen=True)
class TrustParams:
    gamma: float = 0.95
    delta_pos: float = 1.0
    delta_neg: float = -2.0
    a: float = 1.0
    b_mag: float = 6.0
    c_mag: float = 0.1

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValidationError("gamma must lie in (0, 1)")
        if not self.delta_pos > 0:
            raise ValidationError("delta_pos must be > 0")
        if not self.delta_neg < 0:
            raise ValidationError("delta_neg must be < 0")
        if not self.delta_pos < abs(self.delta_neg):
            raise ValidationError("delta_pos must be smaller than |delta_neg|")
        if not 0 < self.a <= 1:
            raise ValidationError("a must lie in (0, 1]")
        if not (self.b_mag > 0 and self.c_mag > 0):
            raise ValidationError("b and c must be nonzero")

    @classmethod
    def from_signed(cls, gamma=0.95, delta_pos=1.0, delta_neg=-2.0, a=1.0, b=-6.0, c=-0.1) -> "TrustParams":
        """Accept ``b``/``c`` in either sign convention; only magnitudes are kept."""
        return cls(gamma=gamma, delta_pos=delta_pos, delta_neg=delta_neg, a=a, b_mag=abs(b), c_mag=abs(c))


@dataclass(frozen=True)
class TrustState:
    i_accum: float = 0.0
    n: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise ValidationError("interaction count must be >= 0")
        if self.n == 0 and self.i_accum != 0:
            raise ValidationError("empty history must have zero accumulator")


def trust_step(state: TrustState, params: TrustParams, positive: bool) -> TrustState:
    delta = params.delta_pos if positive else params.delta_neg
    return TrustState(params.gamma * state.i_accum + delta, state.n + 1)


def trust_value(state: Union[TrustState, float], params: TrustParams) -> float:
    """Gompertz trust in the open interval (0, a)."""
    i_accum = state.i_accum if isinstance(state, TrustState) else float(state)
    exponent = -params.c_mag * i_accum
    # exp overflow means trust has collapsed to the floor
    if exponent > 700:
        value = 0.0
    else:
        value = params.a * math.exp(-params.b_mag * math.exp(exponent))
    return min(max(value, math.ulp(0.0)), math.nextafter(params.a, 0.0))


def default_trust() -> float:
    return 0.0


# ---------------------------------------------------------------------------
# Reputation


def _to_fixed(x, scale: int) -> int:
    return round(Fraction(str(x)) * scale)


@dataclass(frozen=True)
class RepParams:
    beta_pos: int = 10 * DEFAULT_SCALE
    beta_neg: int = -20 * DEFAULT_SCALE
    lam: Fraction = Fraction(19, 20)
    scale: int = DEFAULT_SCALE

    def __post_init__(self):
        object.__setattr__(self, "lam", Fraction(self.lam))
        if self.scale < 1 or 10 ** (len(str(self.scale)) - 1) != self.scale:
            raise ValidationError("scale must be a power of ten")
        if not self.beta_pos > 0:
            raise ValidationError("beta_pos must be > 0")
        if not self.beta_neg < 0:
            raise ValidationError("beta_neg must be < 0")
        if not self.beta_pos < abs(self.beta_neg):
            raise ValidationError("beta_pos must be smaller than |beta_neg|")
        if not 0 < self.lam < 1:
            raise ValidationError("lambda must lie in (0, 1)")

    @classmethod
    def from_real(cls, beta_pos=10, beta_neg=-20, lam=0.95, scale: int = DEFAULT_SCALE) -> "RepParams":
        """Build from human units; ``lam`` is read as the decimal it prints as."""
        return cls(_to_fixed(beta_pos, scale), _to_fixed(beta_neg, scale), Fraction(str(lam)), scale)

    def to_real(self, fixed: int) -> float:
        return fixed / self.scale


@dataclass(frozen=True)
class RepState:
    s_accum: int = 0
    peers: frozenset = field(default_factory=frozenset)
    n: int = 0

    def __post_init__(self):
        object.__setattr__(self, "peers", frozenset(self.peers))
        if self.n == 0 and (self.s_accum != 0 or self.peers):
            raise ValidationError("empty history must have zero sum and no peers")


def decay_fixed(s_accum: int, lam: Fraction) -> int:
    """round_half_even(lam * s_accum) in exact integer arithmetic."""
    return round(s_accum * lam)


def rep_step(state: RepState, params: RepParams, positive: bool, sp: bytes) -> RepState:
    beta = params.beta_pos if positive else params.beta_neg
    return RepState(decay_fixed(state.s_accum, params.lam) + beta, state.peers | {sp}, state.n + 1)


def rep_value(state: RepState, params: RepParams) -> int:
    """Fixed-point reputation: trunc(s_accum * ln(N_peers)); zero with at most one peer."""
    n_peers = len(state.peers)
    if n_peers <= 1:
        return 0
    product = state.s_accum * ln_fixed(n_peers)
    magnitude = abs(product) // LN_SCALE
    return magnitude if product >= 0 else -magnitude


def default_reputation() -> int:
    return 0


def format_fixed(value: int, scale: int = DEFAULT_SCALE) -> str:
    """Exact decimal rendering of a fixed-point integer, e.g. 6931 -> '6.931'."""
    digits = len(str(scale)) - 1
    sign = "-" if value < 0 else ""
    whole, frac = divmod(abs(value), scale)
    return f"{sign}{whole}.{frac:0{digits}d}" if digits else f"{sign}{whole}"
