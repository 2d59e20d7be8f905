"""Independent reference computations used to check the library.

These deliberately avoid the library's own arithmetic: trust is summed term by
term, reputation is replayed with explicit integer division, logarithms come from
``decimal`` at 40 digits, and the access check is spelled out with loops.
"""
import math
from decimal import ROUND_DOWN, Decimal, localcontext
from fractions import Fraction


def trust_direct(gamma, deltas):
    """I_n as the explicit sum of gamma^(n-i) * delta_i; also returns the sum of |terms|."""
    n = len(deltas)
    terms = [gamma ** (n - i) * d for i, d in enumerate(deltas, 1)]
    return math.fsum(terms), math.fsum(abs(t) for t in terms)


def gompertz(i_accum, a=1.0, b=6.0, c=0.1):
    return a * math.exp(-b * math.exp(-c * i_accum))


def rep_sum_replay(betas, lam):
    """Scaled decayed sum, replaying the full history with integer half-even rounding."""
    num, den = lam.numerator, lam.denominator
    s = 0
    for b in betas:
        q, r = divmod(s * num, den)
        # compare the remainder with half of den; ties go to the even quotient
        if 2 * r > den or (2 * r == den and q % 2 == 1):
            q += 1
        s = q + b
    return s


def rep_sum_exact(betas, lam):
    """Unrounded sum of beta_t * lam^(n-t) as a Fraction."""
    n = len(betas)
    return sum((Fraction(b) * lam ** (n - t) for t, b in enumerate(betas, 1)), Fraction(0))


def ln_decimal(n, prec=40):
    with localcontext() as ctx:
        ctx.prec = prec
        return Decimal(n).ln()


def rep_value_oracle(s_accum, n_peers):
    if n_peers <= 1:
        return 0
    with localcontext() as ctx:
        ctx.prec = 50
        return int((Decimal(s_accum) * ln_decimal(n_peers)).to_integral_value(rounding=ROUND_DOWN))


def alg1_oracle(required, held, permitted, action, rep, rep_min, blacklisted=False, in_window=True):
    """Grant iff not blacklisted, in the context window, and the three nested checks pass."""
    if blacklisted or not in_window:
        return False
    authorized = False
    attrs_ok = True
    for r in required:
        found = False
        for h in held:
            if h.key == r.key and h.type == r.type and h.val == r.val:
                found = True
        if not found:
            attrs_ok = False
    if attrs_ok:
        if action in permitted:
            if rep >= rep_min:
                authorized = True
    return authorized
