"""Closed-form 2x2 unimodular matrix algebra.

Everything here is branch-explicit double precision: products with determinant
renormalization, the closed-form SVD through the squared Frobenius norm, and a
principal log/exp chart on traceless matrices used for continuous blending.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAxes, DeterminantError, LogDomain

_RENORM_DRIFT = 1e-12
_HARD_DRIFT = 1e-9
_ROTATION_TOL = 1e-8  # axes undefined when operator norm <= 1 + this


@dataclass(frozen=True)
class Mat2:
    """Element of SL(2,R), row-major entries a b / c d.

    Construction renormalizes by 1/sqrt(det) when |det - 1| drifts past 1e-12
    and refuses entries with drift beyond 1e-9 (that signals a bug upstream,
    not roundoff).
    """

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        det = self.a * self.d - self.b * self.c
        drift = abs(det - 1.0)
        if drift <= _RENORM_DRIFT:
            return
        if not all(math.isfinite(v) for v in (self.a, self.b, self.c, self.d)):
            raise DeterminantError("non-finite entries")
        # the float det of a big-entry matrix carries cancellation noise of
        # order g * eps_mach; the hard gate scales with it, else it would
        # reject legitimately unimodular long products, and renormalizing by a
        # noise-dominated det would inject error rather than remove drift
        g = self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d
        noise = g * 1e-14
        if drift > max(_HARD_DRIFT, noise):
            raise DeterminantError(f"det = {det!r} out of tolerance")
        if det <= 0.25 or noise * 8.0 >= drift:
            return
        s = 1.0 / math.sqrt(det)
        object.__setattr__(self, "a", self.a * s)
        object.__setattr__(self, "b", self.b * s)
        object.__setattr__(self, "c", self.c * s)
        object.__setattr__(self, "d", self.d * s)

    @classmethod
    def normalized(cls, a: float, b: float, c: float, d: float) -> "Mat2":
        """Project arbitrary entries with positive determinant into SL(2,R)."""
        det = a * d - b * c
        if det <= 0.0 or not math.isfinite(det):
            raise DeterminantError(f"cannot normalize det = {det!r}")
        s = 1.0 / math.sqrt(det)
        return cls(a * s, b * s, c * s, d * s)

    @classmethod
    def identity(cls) -> "Mat2":
        return cls(1.0, 0.0, 0.0, 1.0)

    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def trace(self) -> float:
        return self.a + self.d

    def inv(self) -> "Mat2":
        return Mat2(self.d, -self.b, -self.c, self.a)

    def transpose(self) -> "Mat2":
        return Mat2(self.a, self.c, self.b, self.d)

    def apply(self, v: tuple[float, float]) -> tuple[float, float]:
        x, y = v
        return (self.a * x + self.b * y, self.c * x + self.d * y)

    def __matmul__(self, other: "Mat2") -> "Mat2":
        return compose(self, other)

    def to_array(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    def entries(self) -> tuple[float, float, float, float]:
        return (self.a, self.b, self.c, self.d)


@dataclass(frozen=True)
class SingularAxes:
    """Expanding/contracting unit axes and the operator norm of a matrix."""

    u: tuple[float, float]
    s: tuple[float, float]
    norm: float


@dataclass(frozen=True)
class TangentVec:
    """Traceless 2x2 matrix t1 t2 / t3 -t1 (trace is zero by representation)."""

    t1: float
    t2: float
    t3: float

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.t1, self.t2], [self.t3, -self.t1]])

    def scale(self, f: float) -> "TangentVec":
        return TangentVec(self.t1 * f, self.t2 * f, self.t3 * f)

    def norm(self) -> float:
        return general_operator_norm(self.t1, self.t2, self.t3, -self.t1)


def compose(A: Mat2, B: Mat2) -> Mat2:
    """Matrix product A @ B."""
    return Mat2(
        A.a * B.a + A.b * B.c,
        A.a * B.b + A.b * B.d,
        A.c * B.a + A.d * B.c,
        A.c * B.b + A.d * B.d,
    )


def operator_norm(A: Mat2) -> float:
    """Largest singular value; >= 1 for unimodular matrices."""
    g = A.a * A.a + A.b * A.b + A.c * A.c + A.d * A.d
    if g <= 2.0:
        return 1.0
    # sigma1^2 = (g + sqrt((g-2)(g+2)))/2, written to keep precision near g = 2
    return math.sqrt((g + math.sqrt((g - 2.0) * (g + 2.0))) / 2.0)


def general_operator_norm(a: float, b: float, c: float, d: float) -> float:
    """Largest singular value of an arbitrary 2x2 matrix (no det assumption)."""
    g = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = max((g - 2.0 * det) * (g + 2.0 * det), 0.0)
    return math.sqrt(max((g + math.sqrt(disc)) / 2.0, 0.0))


def matrix_distance(A: Mat2, B: Mat2) -> float:
    """Operator-norm distance ||A - B||."""
    return general_operator_norm(A.a - B.a, A.b - B.b, A.c - B.c, A.d - B.d)


def _axis_sign(v: tuple[float, float]) -> tuple[float, float]:
    # nonnegative first coordinate, first positive nonzero coordinate if zero
    x, y = v
    if x < 0.0 or (x == 0.0 and y < 0.0):
        return (-x, -y)
    return (x, y)


def singular_axes(A: Mat2) -> SingularAxes:
    """Expanding and contracting unit singular vectors with the operator norm.

    Requires operator_norm(A) > 1 + 1e-8; below that A is within tolerance of
    a rotation and the axes are numerically meaningless.
    """
    nrm = operator_norm(A)
    if nrm <= 1.0 + _ROTATION_TOL:
        raise DegenerateAxes(f"norm {nrm} within rotation tolerance")
    # A^T A = [[p, r], [r, q]]; u is its top eigenvector
    p = A.a * A.a + A.c * A.c
    q = A.b * A.b + A.d * A.d
    r = A.a * A.b + A.c * A.d
    lam = nrm * nrm
    v1 = (r, lam - p)
    v2 = (lam - q, r)
    n1 = v1[0] * v1[0] + v1[1] * v1[1]
    n2 = v2[0] * v2[0] + v2[1] * v2[1]
    vx, vy = v1 if n1 >= n2 else v2
    nv = math.hypot(vx, vy)
    if nv == 0.0:  # p == q and r == 0: scalar A^T A, cannot happen past the gate
        raise DegenerateAxes("isotropic A^T A")
    u = _axis_sign((vx / nv, vy / nv))
    s = _axis_sign((-u[1], u[0]))
    return SingularAxes(u=u, s=s, norm=nrm)


def rotation(theta: float) -> Mat2:
    """Counterclockwise rotation by theta radians."""
    c, s = math.cos(theta), math.sin(theta)
    return Mat2(c, -s, s, c)


_TRACE_FLOOR = -2.0 + 1e-6


def log_map(A: Mat2) -> TangentVec:
    """Principal logarithm of A as a traceless tangent vector.

    Defined for trace(A) > -2 + 1e-6: log A = kappa * (A - (tr A / 2) Id) with
    kappa = acosh(t)/sqrt(t^2-1) (hyperbolic), acos(t)/sqrt(1-t^2) (elliptic),
    t = tr A / 2; the two branches share the series 1 - e/3 + 2e^2/15 at t = 1+e.
    """
    tr = A.trace()
    if tr <= _TRACE_FLOOR:
        raise LogDomain(f"trace {tr} <= -2 + 1e-6")
    t = tr / 2.0
    e = t - 1.0
    if abs(e) < 1e-6:
        kappa = 1.0 - e / 3.0 + 2.0 * e * e / 15.0
    elif t > 1.0:
        u = math.sqrt(t * t - 1.0)
        kappa = math.asinh(u) / u  # acosh(t) = asinh(sqrt(t^2-1)) for t >= 1
    else:
        u = math.sqrt(1.0 - t * t)
        kappa = math.acos(t) / u
    return TangentVec(kappa * (A.a - t), kappa * A.b, kappa * A.c)


def exp_map(v: TangentVec) -> Mat2:
    """Exponential of the traceless matrix v; inverse of log_map on its domain."""
    q = v.t1 * v.t1 + v.t2 * v.t3  # v^2 = q * Id
    if abs(q) < 1e-8:
        alpha = 1.0 + q / 2.0 + q * q / 24.0
        beta = 1.0 + q / 6.0 + q * q / 120.0
    elif q > 0.0:
        r = math.sqrt(q)
        alpha = math.cosh(r)
        beta = math.sinh(r) / r
    else:
        r = math.sqrt(-q)
        alpha = math.cos(r)
        beta = math.sin(r) / r
    return Mat2(
        alpha + beta * v.t1,
        beta * v.t2,
        beta * v.t3,
        alpha - beta * v.t1,
    )


def singular_axes_arrays(a, b, c, d):
    """Vectorized singular axes: (ux, uy, sx, sy, norm, degenerate_mask).

    Scale-invariant, so callers may pass rescaled products.  Lanes whose
    normalized operator norm is within rotation tolerance are flagged; their
    axes default to the coordinate frame.
    """
    a, b, c, d = (np.asarray(v, dtype=float) for v in (a, b, c, d))
    g = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = np.maximum((g - 2.0 * det) * (g + 2.0 * det), 0.0)
    lam = (g + np.sqrt(disc)) / 2.0  # sigma1^2
    sig1 = np.sqrt(np.maximum(lam, 1e-300))
    sig2 = np.abs(det) / np.maximum(sig1, 1e-300)
    ratio = sig1 / np.maximum(sig2, 1e-300)
    degenerate = np.sqrt(np.maximum(ratio, 1.0)) <= 1.0 + _ROTATION_TOL
    p = a * a + c * c
    q = b * b + d * d
    r = a * b + c * d
    v1x, v1y = r, lam - p
    v2x, v2y = lam - q, r
    pick1 = v1x * v1x + v1y * v1y >= v2x * v2x + v2y * v2y
    ux = np.where(pick1, v1x, v2x)
    uy = np.where(pick1, v1y, v2y)
    nrm = np.hypot(ux, uy)
    safe = nrm > 0
    ux = np.where(safe, ux / np.where(safe, nrm, 1.0), 1.0)
    uy = np.where(safe, uy / np.where(safe, nrm, 1.0), 0.0)
    flip = (ux < 0) | ((ux == 0) & (uy < 0))
    sign = np.where(flip, -1.0, 1.0)
    ux, uy = ux * sign, uy * sign
    ux = np.where(degenerate, 1.0, ux)
    uy = np.where(degenerate, 0.0, uy)
    sx, sy = -uy, ux
    flip_s = (sx < 0) | ((sx == 0) & (sy < 0))
    sign_s = np.where(flip_s, -1.0, 1.0)
    return ux, uy, sx * sign_s, sy * sign_s, np.sqrt(ratio), degenerate


# -- vectorized tangent chart (hot paths: blending, table interpolation) --------


def exp_traceless_arrays(t1, t2, t3):
    """exp_map on arrays of tangent coordinates; returns entry arrays a, b, c, d."""
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    t3 = np.asarray(t3, dtype=float)
    q = t1 * t1 + t2 * t3
    small = np.abs(q) < 1e-8
    qs = np.where(small, 0.0, q)
    rp = np.sqrt(np.where(qs > 0, qs, 1.0))
    rn = np.sqrt(np.where(qs < 0, -qs, 1.0))
    alpha = np.where(
        small,
        1.0 + q / 2.0 + q * q / 24.0,
        np.where(qs > 0, np.cosh(rp), np.cos(rn)),
    )
    beta = np.where(
        small,
        1.0 + q / 6.0 + q * q / 120.0,
        np.where(qs > 0, np.sinh(rp) / rp, np.sin(rn) / rn),
    )
    return alpha + beta * t1, beta * t2, beta * t3, alpha - beta * t1


def log_sl2_arrays(a, b, c, d):
    """log_map on arrays of SL(2,R) entries; caller guarantees trace > -2 + 1e-6."""
    a = np.asarray(a, dtype=float)
    d = np.asarray(d, dtype=float)
    t = (a + d) / 2.0
    if np.any(t <= _TRACE_FLOOR / 2.0 + 0.5):  # t <= -1 + 5e-7
        bad = float(np.min(t))
        raise LogDomain(f"trace/2 = {bad} <= -1 + 5e-7 in array log")
    e = t - 1.0
    small = np.abs(e) < 1e-6
    ts = np.where(small, 2.0, t)  # safe placeholder outside branch
    up = np.sqrt(np.maximum(ts * ts - 1.0, 1e-300))
    un = np.sqrt(np.maximum(1.0 - ts * ts, 1e-300))
    kappa = np.where(
        small,
        1.0 - e / 3.0 + 2.0 * e * e / 15.0,
        np.where(ts > 1.0, np.arcsinh(up) / up, np.arccos(np.clip(ts, -1.0, 1.0)) / un),
    )
    return kappa * (a - t), kappa * np.asarray(b, dtype=float), kappa * np.asarray(c, dtype=float)
