"""Concrete minimal base systems: circle rotations, torus translations, Sturmian shifts.

Interval endpoints are exact (Q(sqrt D)) whenever the rotation angle carries a
quadratic-irrational tag, so disjointness and tiling certificates for towers
reduce to exact comparisons.  Generic angles use the same code paths over plain
floats.  Points are stored as (anchor, step index), which makes orbit
composition exact in both modes: step(step(x, m), n) == step(x, m + n) always.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyCell, HorizonExceeded, CocycleLabError
from .exact import (
    GOLDEN_MEAN,
    SILVER_MEAN,
    QuadExt,
    best_denominators,
    continued_fraction,
    convergents,
    mod1,
    to_float,
)

FIRST_RETURN_HORIZON = 10**6
COVERING_HORIZON = 10**6
ORBIT_AVOID_HORIZON = 10**5
ORBIT_AVOID_DIST = 1e-7


# -- half-open interval unions ---------------------------------------------------
# An interval union is a tuple of (lo, hi) pairs with lo < hi, sorted, pairwise
# disjoint, inside [0, 1).  Scalars are floats or QuadExt; both orders totally.


def norm_union(parts) -> tuple:
    parts = [(lo, hi) for lo, hi in parts if hi > lo]
    parts.sort(key=lambda p: to_float(p[0]))
    merged: list = []
    for lo, hi in parts:
        if merged and lo <= merged[-1][1]:
            if hi > merged[-1][1]:
                merged[-1] = (merged[-1][0], hi)
        else:
            merged.append((lo, hi))
    return tuple((lo, hi) for lo, hi in merged)


def union_length(u) -> float:
    return float(sum(to_float(hi) - to_float(lo) for lo, hi in u))


def union_contains(u, x) -> bool:
    for lo, hi in u:
        if lo <= x < hi:
            return True
    return False


def inter_union(u1, u2) -> tuple:
    out = []
    for lo1, hi1 in u1:
        for lo2, hi2 in u2:
            lo = lo1 if lo1 >= lo2 else lo2
            hi = hi1 if hi1 <= hi2 else hi2
            if hi > lo:
                out.append((lo, hi))
    return norm_union(out)


def sub_union(u1, u2) -> tuple:
    out = []
    for lo, hi in u1:
        pieces = [(lo, hi)]
        for slo, shi in u2:
            nxt = []
            for plo, phi in pieces:
                if shi <= plo or phi <= slo:
                    nxt.append((plo, phi))
                    continue
                if plo < slo:
                    nxt.append((plo, slo))
                if shi < phi:
                    nxt.append((shi, phi))
            pieces = nxt
        out.extend(pieces)
    return norm_union(out)


def translate_union(u, delta) -> tuple:
    """Rigid rotation of the union by delta, with wrap splitting at 1."""
    out = []
    for lo, hi in u:
        length = hi - lo
        nlo = mod1(lo + delta)
        nhi = nlo + length
        if nhi <= 1:
            out.append((nlo, nhi))
        else:
            out.append((nlo, _one_like(nlo)))
            out.append((_zero_like(nlo), nhi - 1))
    return norm_union(out)


def shrink_union(u, margin) -> tuple:
    return norm_union([(lo + margin, hi - margin) for lo, hi in u])


def _zero_like(x):
    return QuadExt(0, 0, x.D) if isinstance(x, QuadExt) else 0.0


def _one_like(x):
    return QuadExt(1, 0, x.D) if isinstance(x, QuadExt) else 1.0


def wrap_interval(lo, hi) -> list:
    """[lo, hi) with hi - lo < 1, reduced mod 1 into half-open pieces."""
    zero, one = _zero_like(lo), _one_like(lo)
    if lo >= 0 and hi <= 1:
        return [(lo, hi)]
    if lo < 0:
        return [(zero, hi), (lo + 1, one)]
    return [(lo, one), (zero, hi - 1)]


@dataclass(frozen=True)
class Cell:
    """Finite union of half-open intervals per dimension, plus boundary points.

    For circle bases this is a 1-d union; torus cells are axis products.  The
    boundary list is the finite endpoint set (zero probability for atomless
    invariant measures); Sturmian cylinders carry an empty boundary.
    """

    axes: tuple  # tuple over dimensions of interval unions
    boundary: tuple = ()  # per-dimension tuples of boundary scalars

    @classmethod
    def interval(cls, lo, hi, clopen: bool = False) -> "Cell":
        u = norm_union([(lo, hi)])
        bd = () if clopen else (tuple(p for iv in u for p in iv),)
        return cls(axes=(u,), boundary=bd)

    @classmethod
    def from_union(cls, u, clopen: bool = False) -> "Cell":
        u = norm_union(u)
        bd = () if clopen else (tuple(p for iv in u for p in iv),)
        return cls(axes=(u,), boundary=bd)

    @classmethod
    def full(cls, dim: int = 1) -> "Cell":
        return cls(axes=tuple((((0.0, 1.0)),) for _ in range(dim)), boundary=())

    @property
    def intervals(self) -> tuple:
        if len(self.axes) != 1:
            raise CocycleLabError("1-d cell expected")
        return self.axes[0]

    def is_empty(self) -> bool:
        return all(len(u) == 0 for u in self.axes) or any(len(u) == 0 for u in self.axes)

    def length(self) -> float:
        out = 1.0
        for u in self.axes:
            out *= union_length(u)
        return out

    def contains(self, coords) -> bool:
        if not isinstance(coords, (tuple, list)):
            coords = (coords,)
        return all(union_contains(u, x) for u, x in zip(self.axes, coords))

    def float_breaks(self) -> tuple[np.ndarray, np.ndarray]:
        """1-d lows/highs as float arrays for vectorized membership."""
        u = self.intervals
        lo = np.array([to_float(p[0]) for p in u])
        hi = np.array([to_float(p[1]) for p in u])
        return lo, hi

    def contains_floats(self, xs: np.ndarray) -> np.ndarray:
        lo, hi = self.float_breaks()
        if lo.size == 0:
            return np.zeros(np.shape(xs), dtype=bool)
        idx = np.searchsorted(lo, xs, side="right") - 1
        idx = np.clip(idx, 0, lo.size - 1)
        return (xs >= lo[idx]) & (xs < hi[idx])

    def boundary_points(self) -> tuple:
        if not self.boundary:
            return ()
        return self.boundary[0]


# -- points and systems -----------------------------------------------------------


@dataclass(frozen=True)
class BasePoint:
    """Orbit point stored as (anchor, index): value = anchor + index * translation."""

    anchor: tuple
    index: int = 0

    def shifted(self, n: int) -> "BasePoint":
        return BasePoint(self.anchor, self.index + n)


class BaseSystem:
    """Common surface for the concrete minimal systems."""

    grid_size: int
    dim: int

    def point(self, *coords) -> BasePoint:
        return BasePoint(anchor=tuple(mod1(c) for c in coords), index=0)

    def step(self, x: BasePoint, n: int = 1) -> BasePoint:
        return x.shifted(n)

    def coords(self, x: BasePoint) -> tuple:
        raise NotImplementedError

    def float_coords(self, x: BasePoint) -> tuple[float, ...]:
        return tuple(to_float(c) for c in self.coords(x))

    def grid_spacing(self) -> float:
        return 1.0 / self.grid_size

    def distance(self, a: Sequence[float], b: Sequence[float]) -> float:
        out = 0.0
        for x, y in zip(a, b):
            d = abs(to_float(x) - to_float(y))
            d = min(d, 1.0 - d)
            out += d * d
        return math.sqrt(out)

    def diameter(self) -> float:
        return 0.5 * math.sqrt(self.dim)


class CircleRotation(BaseSystem):
    """x -> x + alpha mod 1 with alpha irrational (caller's responsibility).

    When alpha carries an exact quadratic-irrational tag, all cell arithmetic
    runs in Q(sqrt D) and tower certificates are exact.
    """

    dim = 1

    def __init__(self, alpha: float, grid_size: int = 4096, exact: Optional[QuadExt] = None):
        if exact is not None:
            self.alpha = exact
            if not (0 < float(exact) < 1):
                raise CocycleLabError("alpha must lie in (0, 1)")
        else:
            self.alpha = float(alpha) % 1.0
            if self.alpha == 0.0:
                raise CocycleLabError("alpha must be irrational in (0, 1)")
        self.grid_size = int(grid_size)
        self._warn_if_near_rational()

    @classmethod
    def golden(cls, grid_size: int = 4096) -> "CircleRotation":
        return cls(float(GOLDEN_MEAN), grid_size=grid_size, exact=GOLDEN_MEAN)

    @classmethod
    def silver(cls, grid_size: int = 4096) -> "CircleRotation":
        return cls(float(SILVER_MEAN), grid_size=grid_size, exact=SILVER_MEAN)

    @property
    def exact(self) -> bool:
        return isinstance(self.alpha, QuadExt)

    @property
    def alpha_float(self) -> float:
        return to_float(self.alpha)

    def _warn_if_near_rational(self):
        best = None
        for _, err in best_denominators(self.alpha, ORBIT_AVOID_HORIZON):
            best = to_float(err)
        if best is not None and best < 1e-12:
            warnings.warn(
                f"rotation angle within {best:.2e} of a rational with denominator"
                f" <= {ORBIT_AVOID_HORIZON}; minimality assumptions are unreliable",
                stacklevel=3,
            )

    def coords(self, x: BasePoint) -> tuple:
        a0 = x.anchor[0]
        if self.exact:
            if isinstance(a0, QuadExt):
                return (mod1(a0 + x.index * self.alpha),)
            if isinstance(a0, (int, Fraction)):
                return (mod1(QuadExt(a0, 0, self.alpha.D) + x.index * self.alpha),)
        return (mod1(to_float(a0) + x.index * self.alpha_float),)

    def scalar(self, x: BasePoint):
        return self.coords(x)[0]

    def partial_quotients(self, depth: int = 30) -> list[int]:
        return continued_fraction(self.alpha, depth)

    def convergent_pairs(self, depth: int = 30) -> list[tuple[int, int]]:
        return convergents(self.alpha, depth)

    def grid_floats(self) -> np.ndarray:
        return np.arange(self.grid_size) / self.grid_size

    def grid_scalar(self, i: int):
        r = Fraction(int(i), self.grid_size)
        if self.exact:
            return QuadExt(r, 0, self.alpha.D)
        return float(r)

    def orbit_floats(self, x0: float, n: int, start: int = 0) -> np.ndarray:
        ks = np.arange(start, start + n, dtype=float)
        return np.mod(float(x0) + ks * self.alpha_float, 1.0)

    def fill_horizon(self, eps: float) -> int:
        """Horizon by which every orbit is eps-dense (three-distance bound)."""
        pairs = best_denominators(self.alpha, 10**9)
        prev_q, prev_e = 1, 1.0
        for q, err in pairs:
            if to_float(err) + prev_e < eps:
                return q + prev_q
            prev_q, prev_e = q, to_float(err)
        raise HorizonExceeded(f"no eps={eps} fill horizon below 1e9")

    # -- cells ------------------------------------------------------------------

    def translate_cell(self, cell: Cell, n: int) -> Cell:
        delta = mod1(n * self.alpha)
        u = translate_union(cell.intervals, delta)
        bd = tuple(mod1(p + delta) for p in cell.boundary_points())
        return Cell(axes=(u,), boundary=(bd,) if cell.boundary else ())


class SturmianShift(BaseSystem):
    """Sturmian subshift of slope beta, presented through its rotation parameter.

    Points carry the rotation parameter; the coding against [1 - beta, 1) gives
    the symbolic window.  Cylinders are parameter intervals and are clopen in
    the shift topology, hence the empty boundary lists.
    """

    dim = 1

    def __init__(self, beta: float, window_depth: int = 16, grid_size: int = 4096,
                 exact: Optional[QuadExt] = None):
        self._rot = CircleRotation(beta, grid_size=grid_size, exact=exact)
        self.window_depth = int(window_depth)
        self.grid_size = int(grid_size)

    @property
    def beta(self):
        return self._rot.alpha

    @property
    def rotation(self) -> CircleRotation:
        return self._rot

    def coords(self, x: BasePoint) -> tuple:
        return self._rot.coords(x)

    def scalar(self, x: BasePoint):
        return self._rot.scalar(x)

    def word(self, x: BasePoint, length: Optional[int] = None) -> str:
        n = self.window_depth if length is None else length
        t = to_float(self.scalar(x))
        beta = self._rot.alpha_float
        bits = ((np.mod(t + np.arange(n) * beta, 1.0)) >= 1.0 - beta).astype(int)
        return "".join(str(b) for b in bits)

    def grid_floats(self) -> np.ndarray:
        return self._rot.grid_floats()

    def orbit_floats(self, x0: float, n: int, start: int = 0) -> np.ndarray:
        return self._rot.orbit_floats(x0, n, start)

    def cylinder(self, x: BasePoint, depth: int) -> Cell:
        """Parameter interval of points sharing x's depth-`depth` coding."""
        t = self.scalar(x)
        beta = self.beta
        breaks = []
        for j in range(depth):
            breaks.append(mod1(-j * beta))
            breaks.append(mod1(1 - beta - j * beta))
        lo = _zero_like(t) if isinstance(t, QuadExt) else 0.0
        hi = _one_like(t) if isinstance(t, QuadExt) else 1.0
        for p in breaks:
            if p <= t and p > lo:
                lo = p
            if p > t and p < hi:
                hi = p
        return Cell(axes=(norm_union([(lo, hi)]),), boundary=())

    def translate_cell(self, cell: Cell, n: int) -> Cell:
        out = self._rot.translate_cell(cell, n)
        return Cell(axes=out.axes, boundary=())


class TorusTranslation(BaseSystem):
    """Translation of the d-torus, d <= 3 (floats only; no exact tag)."""

    def __init__(self, vector: Sequence[float], grid_size: int = 64):
        vec = tuple(float(v) % 1.0 for v in vector)
        if not 1 <= len(vec) <= 3:
            raise CocycleLabError("torus dimension must be 1..3")
        self.vector = vec
        self.dim = len(vec)
        self.grid_size = int(grid_size)

    def coords(self, x: BasePoint) -> tuple:
        return tuple(mod1(a + x.index * v) for a, v in zip(x.anchor, self.vector))

    def grid_floats(self) -> np.ndarray:
        axes = [np.arange(self.grid_size) / self.grid_size] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


# -- covering time -----------------------------------------------------------------


def covering_time(sys: BaseSystem, W: Cell) -> int:
    """Smallest m1 (at grid resolution) with union_{j<=m1} f^j(W) = K.

    Certified over every grid point after shrinking W by one grid spacing: the
    bases here are isometries, so a grid point landing in the shrunk cell
    covers its whole half-spacing neighborhood.
    """
    if W.is_empty():
        raise EmptyCell("covering_time needs a non-empty cell")
    if all(union_length(u) >= 1.0 - 1e-15 for u in W.axes):
        return 0  # the whole space needs no iterates and no margin
    sp = Fraction(1, sys.grid_size)  # exact margin, compatible with both scalar kinds
    if isinstance(sys, (CircleRotation, SturmianShift)):
        rot = sys if isinstance(sys, CircleRotation) else sys.rotation
        shrunk = shrink_union(W.intervals, sp)
        if not shrunk:
            raise EmptyCell("cell below grid resolution after margin")
        lo = np.array([to_float(p[0]) for p in shrunk])
        hi = np.array([to_float(p[1]) for p in shrunk])
        xs = sys.grid_floats()
        alive = np.arange(xs.size)
        alpha = rot.alpha_float
        for j in range(COVERING_HORIZON + 1):
            pos = np.mod(xs[alive] - j * alpha, 1.0)
            idx = np.clip(np.searchsorted(lo, pos, side="right") - 1, 0, lo.size - 1)
            inside = (pos >= lo[idx]) & (pos < hi[idx])
            alive = alive[~inside]
            if alive.size == 0:
                return j
        raise HorizonExceeded("no cover within 1e6 iterates")
    if isinstance(sys, TorusTranslation):
        shr = [shrink_union(u, sp) for u in W.axes]
        if any(not u for u in shr):
            raise EmptyCell("cell below grid resolution after margin")
        pts = sys.grid_floats()
        alive = np.ones(pts.shape[0], dtype=bool)
        vec = np.array(sys.vector)
        for j in range(COVERING_HORIZON + 1):
            pos = np.mod(pts[alive] - j * vec, 1.0)
            inside = np.ones(pos.shape[0], dtype=bool)
            for d in range(sys.dim):
                lo = np.array([to_float(p[0]) for p in shr[d]])
                hi = np.array([to_float(p[1]) for p in shr[d]])
                idx = np.clip(np.searchsorted(lo, pos[:, d], side="right") - 1, 0, lo.size - 1)
                inside &= (pos[:, d] >= lo[idx]) & (pos[:, d] < hi[idx])
            keep = np.flatnonzero(alive)
            alive[keep[inside]] = False
            if not alive.any():
                return j
        raise HorizonExceeded("no cover within 1e6 iterates")
    raise CocycleLabError(f"unsupported system {type(sys).__name__}")


def exact_covering_time(rot: CircleRotation, W: Cell, horizon: int = 10**5) -> int:
    """Oracle: exact sweep of the union of iterates until total length reaches 1."""
    acc: tuple = ()
    for j in range(horizon + 1):
        acc = norm_union(list(acc) + list(rot.translate_cell(W, j).intervals))
        if len(acc) == 1 and acc[0][0] <= 0 and acc[0][1] >= 1:
            return j
    raise HorizonExceeded("exact covering sweep exhausted")


# -- small-boundary cells -----------------------------------------------------------


def small_boundary_cell(sys: BaseSystem, x0: BasePoint, eps: float) -> Cell:
    """Open cell around x0 of diameter <= 4*eps with orbit-avoiding boundary.

    Endpoints stay at distance > 1e-7 from the first 1e5 forward orbit points
    of x0, which keeps later surgery cuts away from degenerate coincidences.
    Sturmian cells are clopen cylinders of depth ceil(log2(1/eps)).
    """
    if eps <= 0:
        raise CocycleLabError("eps must be positive")
    if isinstance(sys, SturmianShift):
        depth = max(1, math.ceil(math.log2(1.0 / min(eps, 0.5))))
        return sys.cylinder(x0, depth)
    if isinstance(sys, CircleRotation):
        c = sys.scalar(x0)
        cf = to_float(c)
        orbit = sys.orbit_floats(cf, ORBIT_AVOID_HORIZON)
        r = _avoiding_radius(orbit, cf, min(2.0 * eps, 0.249), sys.exact,
                             sys.alpha.D if sys.exact else 0)
        return Cell.from_union(wrap_interval(c - r, c + r))
    if isinstance(sys, TorusTranslation):
        half = min(2.0 * eps / math.sqrt(sys.dim), 0.249)
        x = sys.coords(x0)
        ks = np.arange(ORBIT_AVOID_HORIZON, dtype=float)
        axes = []
        bds = []
        for d in range(sys.dim):
            orbit = np.mod(x[d] + ks * sys.vector[d], 1.0)
            r = _avoiding_radius(orbit, x[d], half, False, 0)
            axes.append(norm_union(wrap_interval(x[d] - r, x[d] + r)))
            bds.append(tuple(p for iv in axes[-1] for p in iv))
        return Cell(axes=tuple(axes), boundary=tuple(bds))
    raise CocycleLabError(f"unsupported system {type(sys).__name__}")


def _avoiding_radius(orbit: np.ndarray, center: float, r_max: float, exact: bool, disc: int):
    """Largest ladder radius whose endpoints clear the orbit by > 1e-7."""
    for k in range(1, 64):
        r = Fraction(r_max).limit_denominator(1 << 20) * Fraction(256 - k, 256)
        rf = float(r)
        if rf <= 0:
            break
        ok = True
        for e in (center - rf, center + rf):
            d = np.abs(np.mod(orbit - e, 1.0))
            d = np.minimum(d, 1.0 - d)
            if float(d.min()) <= ORBIT_AVOID_DIST:
                ok = False
                break
        if ok:
            return QuadExt(r, 0, disc) if exact else rf
    raise CocycleLabError("no orbit-avoiding radius found (eps too small for horizon)")


# -- first return ---------------------------------------------------------------------


def _first_entry_below(alpha, h) -> int:
    """Smallest n >= 1 with {n alpha} < h, by the one-sided record walk.

    Record minima of {n alpha} occur exactly at n = n_p + j*q_k where n_p is the
    current positive-side champion and q_k the following negative-side
    denominator; values decrease by |eta_k| per step.  Exact when alpha is.
    """
    if not (to_float(h) > 0):
        raise CocycleLabError("need h > 0")
    pairs = [(1, mod1(alpha))]  # k = 0 convergent (0, 1)
    for p, q in convergents(alpha, 64):
        pairs.append((q, q * alpha - p))
    n_p, v_p = pairs[0]
    if v_p < h:
        return n_p
    for q, eta in pairs[1:]:
        if not (eta < 0):
            continue
        # positive-side records between this champion and the next convergent
        step = -eta
        need = v_p - h
        jstar = max(math.floor(to_float(need) / to_float(step)), 0)
        while need - jstar * step >= 0:  # smallest j with v_p + j*eta < h
            jstar += 1
        while jstar > 1 and need - (jstar - 1) * step < 0:
            jstar -= 1
        jmax = max(math.floor(to_float(v_p) / to_float(step)), 0)  # stay above 0
        while v_p - (jmax + 1) * step > 0:
            jmax += 1
        while jmax > 0 and v_p - jmax * step <= 0:
            jmax -= 1
        if jstar <= jmax:
            n = n_p + jstar * q
            if n > FIRST_RETURN_HORIZON:
                raise HorizonExceeded(f"first entry time {n} beyond 1e6")
            return n
        n_p, v_p = n_p + jmax * q, v_p - jmax * step
        if v_p < h:
            if n_p > FIRST_RETURN_HORIZON:
                raise HorizonExceeded(f"first entry time {n_p} beyond 1e6")
            return n_p
    raise HorizonExceeded("record walk exhausted 64 convergent levels")


def first_return(sys: BaseSystem, U: Cell) -> list[tuple[Cell, int]]:
    """Partition of U into sub-cells of constant first-return time.

    Single intervals use the Slater three-distance closed form (translation
    equivariance reduces [l, l+h) to [0, h)); interval unions and very wide
    cells fall back to exact marching.  Only rotation-presented bases are
    supported; torus castles are out of scope for this release.
    """
    if isinstance(sys, SturmianShift):
        inner = first_return(sys.rotation, Cell(axes=U.axes, boundary=U.boundary))
        return [(Cell(axes=c.axes, boundary=()), n) for c, n in inner]
    if not isinstance(sys, CircleRotation):
        raise CocycleLabError("first_return implemented for rotation-presented bases only")
    if U.is_empty():
        raise EmptyCell("first_return needs a non-empty cell")
    u = U.intervals
    total = union_length(u)
    if total >= 1.0 - 1e-15:
        return [(Cell.full(), 1)]
    clopen = not U.boundary
    if len(u) == 1 and total <= 0.45:
        lo, hi = u[0]
        h = hi - lo
        alpha = sys.alpha
        n1 = _first_entry_below(alpha, h)
        n2 = _first_entry_below(1 - alpha if isinstance(alpha, QuadExt) else 1.0 - alpha, h)
        a = mod1(n1 * alpha)
        b = mod1(n2 * alpha) - 1
        out = []

        def _piece(y0, y1, t):
            if y1 > y0:
                out.append((Cell.from_union([(lo + y0, lo + y1)], clopen=clopen), t))

        zero = _zero_like(h)
        if a - b > h:
            _piece(zero, h - a, n1)
            _piece(h - a, -b, n1 + n2)
            _piece(-b, h, n2)
        elif a - b == h:
            _piece(zero, h - a, n1)
            _piece(-b, h, n2)
        else:
            _piece(zero, -b, n1)
            _piece(-b, h - a, min(n1, n2))
            _piece(h - a, h, n2)
        for _, t in out:
            if t > FIRST_RETURN_HORIZON:
                raise HorizonExceeded(f"return time {t} beyond 1e6")
        got = sum((hi_ - lo_ for c, _ in out for lo_, hi_ in c.intervals), zero)
        if abs(to_float(got) - to_float(h)) > 1e-12:
            raise CocycleLabError("three-distance pieces do not tile the interval")
        return sorted(out, key=lambda p: (p[1], to_float(p[0].intervals[0][0])))
    return _first_return_marching(sys, U)


def _first_return_marching(rot: CircleRotation, U: Cell) -> list[tuple[Cell, int]]:
    """Exact marching: advance sub-arcs of U, peeling off returning parts."""
    u = U.intervals
    clopen = not U.boundary
    active = [(lo, hi, lo, hi) for lo, hi in u]  # (cur_lo, cur_hi, pre_lo, pre_hi)
    out = []
    alpha = rot.alpha
    for n in range(1, FIRST_RETURN_HORIZON + 1):
        if not active:
            break
        nxt = []
        for clo, chi, plo, phi in active:
            length = chi - clo
            nlo = mod1(clo + alpha)
            segs = []
            if nlo + length <= 1:
                segs.append((nlo, nlo + length, plo))
            else:
                cut = 1 - nlo
                segs.append((nlo, _one_like(nlo), plo))
                segs.append((_zero_like(nlo), length - cut, plo + cut))
            for slo, shi, base in segs:
                cuts = [slo, shi]
                for ulo, uhi in u:
                    if slo < ulo < shi:
                        cuts.append(ulo)
                    if slo < uhi < shi:
                        cuts.append(uhi)
                cuts = sorted(set(cuts), key=to_float)
                for q0, q1 in zip(cuts[:-1], cuts[1:]):
                    pre0 = base + (q0 - slo)
                    if union_contains(u, q0):
                        out.append((Cell.from_union([(pre0, pre0 + (q1 - q0))], clopen=clopen), n))
                    else:
                        nxt.append((q0, q1, pre0, pre0 + (q1 - q0)))
        active = nxt
    if active:
        raise HorizonExceeded("first return beyond 1e6 steps")
    merged: dict[int, list] = {}
    for cell, n in out:
        merged.setdefault(n, []).extend(cell.intervals)
    result = [(Cell.from_union(parts, clopen=clopen), n) for n, parts in merged.items()]
    return sorted(result, key=lambda p: (p[1], to_float(p[0].intervals[0][0])))
