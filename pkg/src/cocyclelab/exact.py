"""Exact arithmetic in quadratic fields Q(sqrt(D)), plus continued-fraction helpers.

Interval endpoints for rotation bases live in Q(sqrt(D)) when the angle is a
stored quadratic irrational (golden/silver means).  All cell, tower and castle
certifications then reduce to exact sign computations on a + b*sqrt(D) with
rational a, b.  Generic angles fall back to plain floats through the same
call sites (duck typing); the helpers at the bottom of this module accept both.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Union

Rational = Union[int, Fraction]


class QuadExt:
    """a + b*sqrt(D) with rational a, b and a fixed non-square D >= 2."""

    __slots__ = ("a", "b", "D")

    def __init__(self, a, b, D: int):
        self.a = Fraction(a)
        self.b = Fraction(b)
        self.D = int(D)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def rational(cls, r, D: int) -> "QuadExt":
        return cls(r, 0, D)

    def _coerce(self, other) -> "QuadExt":
        if isinstance(other, QuadExt):
            if other.D != self.D:
                raise ValueError(f"mixed discriminants {self.D} and {other.D}")
            return other
        if isinstance(other, (int, Fraction)):
            return QuadExt(other, 0, self.D)
        return NotImplemented  # type: ignore[return-value]

    # -- ring operations ------------------------------------------------------

    def __add__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return QuadExt(self.a + o.a, self.b + o.b, self.D)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return QuadExt(self.a - o.a, self.b - o.b, self.D)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return QuadExt(o.a - self.a, o.b - self.b, self.D)

    def __neg__(self):
        return QuadExt(-self.a, -self.b, self.D)

    def __mul__(self, other):
        if isinstance(other, QuadExt):
            if other.D != self.D:
                raise ValueError("mixed discriminants")
            return QuadExt(
                self.a * other.a + self.b * other.b * self.D,
                self.a * other.b + self.b * other.a,
                self.D,
            )
        if isinstance(other, (int, Fraction)):
            return QuadExt(self.a * other, self.b * other, self.D)
        return NotImplemented

    __rmul__ = __mul__

    def inverse(self) -> "QuadExt":
        # (a + b sqrt D)^-1 = (a - b sqrt D) / (a^2 - b^2 D); denominator != 0
        # since D is not a perfect square.
        den = self.a * self.a - self.b * self.b * self.D
        if den == 0:
            raise ZeroDivisionError("zero element of Q(sqrt D)")
        return QuadExt(self.a / den, -self.b / den, self.D)

    def __truediv__(self, other):
        if isinstance(other, (int, Fraction)):
            return QuadExt(self.a / other, self.b / other, self.D)
        if isinstance(other, QuadExt):
            return self * other.inverse()
        return NotImplemented

    def __rtruediv__(self, other):
        return self.inverse() * other

    # -- order ----------------------------------------------------------------

    def sign(self) -> int:
        a, b = self.a, self.b
        if b == 0:
            return (a > 0) - (a < 0)
        if a == 0:
            return (b > 0) - (b < 0)
        if a > 0 and b > 0:
            return 1
        if a < 0 and b < 0:
            return -1
        # opposite signs: compare a^2 against b^2 D
        lhs, rhs = a * a, b * b * self.D
        if a > 0:  # b < 0
            return 1 if lhs > rhs else (-1 if lhs < rhs else 0)
        return 1 if lhs < rhs else (-1 if lhs > rhs else 0)

    def _cmp(self, other) -> int:
        if isinstance(other, float) and not other.is_integer():
            # float probes (grid membership etc.) compare at float precision
            d = float(self) - other
            return (d > 0) - (d < 0)
        if isinstance(other, float):
            other = int(other)
        o = self._coerce(other)
        return (self - o).sign()

    def __lt__(self, other):
        return self._cmp(other) < 0

    def __le__(self, other):
        return self._cmp(other) <= 0

    def __gt__(self, other):
        return self._cmp(other) > 0

    def __ge__(self, other):
        return self._cmp(other) >= 0

    def __eq__(self, other):
        if isinstance(other, (int, float, Fraction, QuadExt)):
            return self._cmp(other) == 0
        return NotImplemented

    def __hash__(self):
        if self.b == 0:
            return hash(self.a)
        return hash((self.a, self.b, self.D))

    # -- real-number interface --------------------------------------------------

    def __float__(self) -> float:
        fa = float(self.a)
        fb = float(self.b) * math.sqrt(self.D)
        naive = fa + fb
        # near-cancellation (e.g. q*alpha - p at deep convergents): go through
        # the conjugate, whose float value has no cancellation
        if abs(naive) > 1e-3 * (abs(fa) + abs(fb)) or naive == 0.0 and fa == 0.0:
            return naive
        num = self.a * self.a - self.b * self.b * self.D
        den = fa - fb
        if den == 0.0:
            return naive
        return float(num) / den

    def __floor__(self) -> int:
        n = math.floor(float(self))
        # float estimate can be off by one near integers; fix exactly
        while self._cmp(n) < 0:
            n -= 1
        while self._cmp(n + 1) >= 0:
            n += 1
        return n

    def __repr__(self):
        return f"QuadExt({self.a}, {self.b}, sqrt{self.D})"


GOLDEN_MEAN = QuadExt(Fraction(-1, 2), Fraction(1, 2), 5)  # (sqrt 5 - 1)/2
SILVER_MEAN = QuadExt(-1, 1, 2)  # sqrt 2 - 1


# -- scalar helpers usable on both float and QuadExt ---------------------------


def floor_scalar(x) -> int:
    if isinstance(x, QuadExt):
        return math.floor(x)
    return math.floor(x)


def mod1(x):
    """Reduce to [0, 1); exact for QuadExt and rationals, fmod-based for floats."""
    if isinstance(x, QuadExt):
        return x - math.floor(x)
    if isinstance(x, (int, Fraction)):
        return x - math.floor(x)
    r = math.fmod(x, 1.0)
    return r + 1.0 if r < 0 else r


def to_float(x) -> float:
    return float(x)


# -- continued fractions --------------------------------------------------------


def continued_fraction(alpha, depth: int) -> list[int]:
    """Partial quotients of alpha in (0,1): [a1, a2, ...], alpha = 1/(a1 + 1/(a2 + ...)).

    Exact for QuadExt input (quotients are eventually periodic); float input
    stops early once the remainder loses precision.
    """
    quots: list[int] = []
    x = alpha
    for _ in range(depth):
        if isinstance(x, QuadExt):
            if x.sign() == 0:
                break
            y = x.inverse()
            a = math.floor(y)
            quots.append(a)
            x = y - a
        else:
            if x <= 0 or x < 1e-15:
                break
            y = 1.0 / x
            if y > 1e14:  # remainder at float noise level
                break
            a = math.floor(y)
            quots.append(a)
            x = y - a
    return quots


def convergents(alpha, depth: int) -> list[tuple[int, int]]:
    """Convergent pairs (p_k, q_k) of alpha in (0,1), k = 1..depth."""
    quots = continued_fraction(alpha, depth)
    out: list[tuple[int, int]] = []
    p0, q0 = 1, 0
    p1, q1 = 0, 1
    for a in quots:
        p0, q0, p1, q1 = p1, q1, a * p1 + p0, a * q1 + q0
        out.append((p1, q1))
    return out


def best_denominators(alpha, limit: int) -> list[tuple[int, object]]:
    """(q_k, |q_k alpha - p_k|) for all convergent denominators q_k <= limit.

    The second component keeps the scalar type of alpha (QuadExt stays exact).
    ||q alpha|| over 1 <= q <= n is minimized at the largest q_k <= n, which is
    what the min-gap and frequency certificates rely on.
    """
    out = []
    for p, q in convergents(alpha, 64):
        if q > limit:
            break
        err = q * alpha - p
        if isinstance(err, QuadExt):
            if err.sign() < 0:
                err = -err
        else:
            err = abs(err)
        out.append((q, err))
    return out


def min_orbit_gap(alpha, n: int):
    """Exact minimal gap of the n points {0, alpha, ..., (n-1) alpha} mod 1.

    Equals ||q_K alpha|| for the largest convergent denominator q_K <= n - 1.
    Returns in the scalar type of alpha; n >= 2 required.
    """
    if n < 2:
        raise ValueError("need at least two orbit points")
    best = None
    for q, err in best_denominators(alpha, n - 1):
        best = err
    if best is None:
        # n - 1 below the first denominator (cannot happen: q_1 = 1)
        raise ValueError("no convergent denominator below horizon")
    return best
