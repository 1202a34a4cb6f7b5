"""Cocycle products, exponent estimation, growth tests and UH certification.

Long products run through a pairwise tree with per-level renormalization:
deterministic (fixed reduction order, independent of any thread count),
overflow-free to astronomical horizons, and fast because every level is one
vectorized pass.  Grid sweeps chunk lanes to bound memory.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .basedyn import BasePoint, BaseSystem, CircleRotation, SturmianShift
from .errors import CocycleLabError, Overflow
from .sl2 import Mat2, exp_traceless_arrays, log_sl2_arrays

RESCALE_STRIDE = 32
_OVERFLOW_LIMIT = 1e300


# -- generators -------------------------------------------------------------------


class Generator:
    """Map from base coordinates to SL(2,R), evaluable on coordinate arrays."""

    def entries(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def at(self, x: float) -> Mat2:
        a, b, c, d = self.entries(np.array([x]))
        return Mat2(float(a[0]), float(b[0]), float(c[0]), float(d[0]))


class ConstantGenerator(Generator):
    def __init__(self, mat: Mat2):
        self.mat = mat

    def entries(self, xs):
        xs = np.asarray(xs, dtype=float)
        one = np.ones_like(xs)
        m = self.mat
        return m.a * one, m.b * one, m.c * one, m.d * one


class RotationGenerator(Generator):
    """Rotation-valued generator R_{2 pi (offset + winding * x)}."""

    def __init__(self, offset: float = 0.0, winding: float = 0.0):
        self.offset = float(offset)
        self.winding = float(winding)

    def entries(self, xs):
        xs = np.asarray(xs, dtype=float)
        th = 2.0 * math.pi * (self.offset + self.winding * xs)
        c, s = np.cos(th), np.sin(th)
        return c, -s, s, c


class SchrodingerGenerator(Generator):
    """Transfer matrices [[E - 2 lam cos(2 pi x), -1], [1, 0]] (det = 1)."""

    def __init__(self, energy: float, coupling: float):
        self.energy = float(energy)
        self.coupling = float(coupling)

    def entries(self, xs):
        xs = np.asarray(xs, dtype=float)
        a = self.energy - 2.0 * self.coupling * np.cos(2.0 * math.pi * xs)
        one = np.ones_like(xs)
        return a, -one, one, np.zeros_like(xs)


class HopfRestrictionGenerator(Generator):
    """R_{theta + alpha} diag(2, 1/2) R_{-theta} with theta = 2 pi x."""

    def __init__(self, alpha: float):
        self.alpha = float(alpha)

    def entries(self, xs):
        th = 2.0 * math.pi * np.asarray(xs, dtype=float)
        ca, sa = np.cos(th + self.alpha), np.sin(th + self.alpha)
        ct, st = np.cos(th), np.sin(th)
        # R_{th+alpha} @ diag(2, 1/2) @ R_{-th}, expanded entrywise
        return (
            2.0 * ca * ct + 0.5 * sa * st,
            2.0 * ca * st - 0.5 * sa * ct,
            2.0 * sa * ct - 0.5 * ca * st,
            2.0 * sa * st + 0.5 * ca * ct,
        )


class TableGenerator(Generator):
    """Grid table with interpolation in the tangent chart (stays in SL(2,R))."""

    def __init__(self, values: np.ndarray):
        vals = np.asarray(values, dtype=float)
        if vals.ndim != 2 or vals.shape[1] != 4:
            raise CocycleLabError("table must have shape (G, 4)")
        self.values = vals
        self.size = vals.shape[0]
        nxt = np.roll(vals, -1, axis=0)
        a, b, c, d = vals.T
        # step = A_i^{-1} A_{i+1}; its log drives the interpolation
        sa = d * nxt[:, 0] - b * nxt[:, 2]
        sb = d * nxt[:, 1] - b * nxt[:, 3]
        sc = -c * nxt[:, 0] + a * nxt[:, 2]
        sd = -c * nxt[:, 1] + a * nxt[:, 3]
        self._xi = log_sl2_arrays(sa, sb, sc, sd)

    def entries(self, xs):
        xs = np.mod(np.asarray(xs, dtype=float), 1.0)
        pos = xs * self.size
        idx = np.minimum(pos.astype(int), self.size - 1)
        t = pos - idx
        t1, t2, t3 = (xi[idx] * t for xi in self._xi)
        ea, eb, ec, ed = exp_traceless_arrays(t1, t2, t3)
        a, b, c, d = (self.values[idx, k] for k in range(4))
        return a * ea + b * ec, a * eb + b * ed, c * ea + d * ec, c * eb + d * ed


class CallableGenerator(Generator):
    """Wraps a vectorized entries(xs) callable (used by perturbed cocycles)."""

    def __init__(self, fn: Callable[[np.ndarray], tuple]):
        self.fn = fn

    def entries(self, xs):
        return self.fn(np.asarray(xs, dtype=float))


def twisted_table(coupling: float, size: int = 4096) -> TableGenerator:
    """Table sampling R_{2 pi x} diag(lam, 1/lam) on a uniform grid.

    Degree one in x, so no continuous invariant splitting can exist over a
    circle rotation regardless of parameters: a positive-exponent generator
    that is never uniformly hyperbolic, at operator norm only lam.  The useful
    non-UH test input at small norms, where Schrodinger coupling cannot go.
    """
    if coupling <= 1.0:
        raise CocycleLabError("coupling must exceed 1")
    th = 2.0 * math.pi * np.arange(size) / size
    c, s = np.cos(th), np.sin(th)
    vals = np.stack([coupling * c, -s / coupling, coupling * s, c / coupling], axis=1)
    return TableGenerator(vals)


# -- the cocycle -------------------------------------------------------------------


class Cocycle:
    """Pair (f, A): a base system and an SL(2,R)-valued generator over it."""

    def __init__(self, base: BaseSystem, generator: Generator):
        self.base = base
        self.generator = generator
        self._sup_norm: Optional[float] = None

    @property
    def sup_norm(self) -> float:
        if self._sup_norm is None:
            xs = self._grid_coords()
            a, b, c, d = self.generator.entries(xs)
            self._sup_norm = float(np.max(_opnorm_arrays(a, b, c, d)))
        return self._sup_norm

    def _grid_coords(self) -> np.ndarray:
        g = self.base.grid_floats()
        if g.ndim != 1:
            raise CocycleLabError("matrix cocycles over multi-d bases use 1-d coordinates")
        return g

    def orbit(self, x: BasePoint, n: int, start: int = 0) -> np.ndarray:
        if isinstance(self.base, (CircleRotation, SturmianShift)):
            shifted = self.base.step(x, start) if start else x
            x0 = self.base.float_coords(shifted)[0]
            return self.base.orbit_floats(x0, n)
        raise CocycleLabError("orbits as float arrays need a rotation-presented base")

    def matrix_at(self, x: BasePoint) -> Mat2:
        return self.generator.at(self.base.float_coords(x)[0])


def _opnorm_arrays(a, b, c, d) -> np.ndarray:
    """Operator norms, floored at 1 (valid for unimodular and rescaled products)."""
    g = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = np.maximum((g - 2.0 * det) * (g + 2.0 * det), 0.0)
    return np.sqrt(np.maximum((g + np.sqrt(disc)) / 2.0, 1.0))


def diff_opnorm_arrays(a, b, c, d) -> np.ndarray:
    """Operator norms of arbitrary matrices (difference matrices included)."""
    g = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = np.maximum((g - 2.0 * det) * (g + 2.0 * det), 0.0)
    return np.sqrt(np.maximum((g + np.sqrt(disc)) / 2.0, 0.0))


def iterate(co: Cocycle, x: BasePoint, n: int) -> Mat2:
    """Ordered product A(f^{n-1} x) ... A(x); n = 0 gives the identity.

    Raises Overflow once intermediate entries pass 1e300; callers needing long
    horizons use the log-scaled routines instead.
    """
    if n < 0:
        raise CocycleLabError("iterate needs n >= 0")
    if n == 0:
        return Mat2.identity()
    pos = co.orbit(x, n)
    a, b, c, d = co.generator.entries(pos)
    pa, pb, pc, pd = a[0], b[0], c[0], d[0]
    for j in range(1, n):
        na, nb, nc, nd = a[j], b[j], c[j], d[j]
        pa, pb, pc, pd = (
            na * pa + nb * pc,
            na * pb + nb * pd,
            nc * pa + nd * pc,
            nc * pb + nd * pd,
        )
        if max(abs(pa), abs(pb), abs(pc), abs(pd)) > _OVERFLOW_LIMIT:
            raise Overflow(f"entries beyond 1e300 at step {j + 1}")
    return Mat2(float(pa), float(pb), float(pc), float(pd))


def _tree_reduce(a, b, c, d):
    """Reduce ordered products along the last axis by pairwise combination.

    Input arrays have shape (lanes, n); returns entry arrays (lanes,) of the
    max-entry-normalized product plus the accumulated log scales.  Index 0 is
    applied first, so pairs combine as M[2k+1] @ M[2k]; reduction order is
    fixed, independent of chunking or thread counts.
    """
    logs = np.zeros(a.shape[0], dtype=float)
    while a.shape[1] > 1:
        if a.shape[1] % 2 == 1:  # pad with identity on the late side
            pad = np.zeros((a.shape[0], 1))
            one = np.ones((a.shape[0], 1))
            a = np.concatenate([a, one], axis=1)
            b = np.concatenate([b, pad], axis=1)
            c = np.concatenate([c, pad], axis=1)
            d = np.concatenate([d, one], axis=1)
        a0, b0, c0, d0 = a[:, 0::2], b[:, 0::2], c[:, 0::2], d[:, 0::2]
        a1, b1, c1, d1 = a[:, 1::2], b[:, 1::2], c[:, 1::2], d[:, 1::2]
        a = a1 * a0 + b1 * c0
        b = a1 * b0 + b1 * d0
        c = c1 * a0 + d1 * c0
        d = c1 * b0 + d1 * d0
        scale = np.maximum.reduce([np.abs(a), np.abs(b), np.abs(c), np.abs(d)])
        scale = np.maximum(scale, 1e-300)
        a, b, c, d = a / scale, b / scale, c / scale, d / scale
        logs += np.sum(np.log(scale), axis=1)
    return a[:, 0], b[:, 0], c[:, 0], d[:, 0], logs


def _tree_log_norms(a, b, c, d) -> np.ndarray:
    ra, rb, rc, rd, logs = _tree_reduce(a, b, c, d)
    return logs + np.log(_opnorm_arrays(ra, rb, rc, rd))


def log_norms_batch(co: Cocycle, anchors: np.ndarray, n: int,
                    max_elems: int = 1 << 23) -> np.ndarray:
    """log ||A_n(x)|| for an array of float anchors.

    Lane-chunked, and step-chunked with a carried running product for long
    horizons, so memory stays bounded at any n.
    """
    anchors = np.atleast_1d(np.asarray(anchors, dtype=float))
    if n < 1:
        raise CocycleLabError("need n >= 1")
    alpha = _rotation_angle(co.base)
    out = np.empty(anchors.size, dtype=float)
    lane_chunk = max(1, min(anchors.size, max(max_elems // max(n, 1), 256)))
    step_chunk = max(1, max_elems // lane_chunk)
    for lo in range(0, anchors.size, lane_chunk):
        sl = anchors[lo:lo + lane_chunk]
        L = sl.size
        ca = np.ones(L)
        cb = np.zeros(L)
        cc = np.zeros(L)
        cd = np.ones(L)
        acc = np.zeros(L)
        for s0 in range(0, n, step_chunk):
            s1 = min(s0 + step_chunk, n)
            ks = np.arange(s0, s1, dtype=float) * alpha
            pos = np.mod(sl[:, None] + ks[None, :], 1.0)
            a, b, c, d = co.generator.entries(pos)
            ra, rb, rc, rd, logs = _tree_reduce(a, b, c, d)
            ca, cb, cc, cd = (
                ra * ca + rb * cc,
                ra * cb + rb * cd,
                rc * ca + rd * cc,
                rc * cb + rd * cd,
            )
            acc += logs
            scale = np.maximum.reduce([np.abs(ca), np.abs(cb), np.abs(cc), np.abs(cd)])
            scale = np.maximum(scale, 1e-300)
            ca, cb, cc, cd = ca / scale, cb / scale, cc / scale, cd / scale
            acc += np.log(scale)
        out[lo:lo + lane_chunk] = acc + np.log(_opnorm_arrays(ca, cb, cc, cd))
    return out


def _rotation_angle(base: BaseSystem) -> float:
    if isinstance(base, CircleRotation):
        return base.alpha_float
    if isinstance(base, SturmianShift):
        return base.rotation.alpha_float
    raise CocycleLabError("rotation-presented base required")


def log_norm_of_product(co: Cocycle, x: BasePoint, n: int) -> float:
    """Overflow-safe log ||A_n(x)||, stride-32 rescaled sequential product."""
    if n < 1:
        raise CocycleLabError("need n >= 1")
    pos = co.orbit(x, n)
    a, b, c, d = co.generator.entries(pos)
    pa, pb, pc, pd = float(a[0]), float(b[0]), float(c[0]), float(d[0])
    acc = 0.0
    for j in range(1, n):
        na, nb, nc, nd = float(a[j]), float(b[j]), float(c[j]), float(d[j])
        pa, pb, pc, pd = (
            na * pa + nb * pc,
            na * pb + nb * pd,
            nc * pa + nd * pc,
            nc * pb + nd * pd,
        )
        if j % RESCALE_STRIDE == 0:
            scale = max(abs(pa), abs(pb), abs(pc), abs(pd))
            if scale > 0.0:
                acc += math.log(scale)
                pa, pb, pc, pd = pa / scale, pb / scale, pc / scale, pd / scale
    from .sl2 import general_operator_norm

    return acc + math.log(general_operator_norm(pa, pb, pc, pd))


def lyapunov_estimate(co: Cocycle, x: BasePoint, n: int) -> float:
    """(1/n) log ||A_n(x)||; converges to the exponent on uniquely ergodic bases."""
    x0 = co.base.float_coords(x)[0]
    return float(log_norms_batch(co, np.array([x0]), n)[0]) / n


# -- growth report and uniform test --------------------------------------------------


@dataclass
class GrowthReport:
    n: int
    grid_size: int
    min: float
    max: float
    mean: float
    argmax: float
    values: np.ndarray
    positions: np.ndarray
    margin: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "n", "log_norm_over_n"])
            for x, v in zip(self.positions, self.values):
                w.writerow([f"{x:.17g}", self.n, f"{v:.17g}"])


def growth_sweep(co: Cocycle, n: int, grid: Optional[np.ndarray] = None) -> GrowthReport:
    xs = co._grid_coords() if grid is None else np.asarray(grid, dtype=float)
    # unimodular products have norm >= 1 exactly; clip tree rounding at 0
    vals = np.maximum(log_norms_batch(co, xs, n), 0.0) / n
    diffs = np.abs(np.diff(vals))
    margin = 4.0 * float(diffs.max()) if diffs.size else 0.0
    return GrowthReport(
        n=n,
        grid_size=xs.size,
        min=float(vals.min()),
        max=float(vals.max()),
        mean=float(vals.mean()),
        argmax=float(xs[int(np.argmax(vals))]),
        values=vals,
        positions=xs,
        margin=margin,
    )


def uniform_growth_test(co: Cocycle, eps: float, n: int,
                        grid: Optional[np.ndarray] = None) -> tuple[bool, GrowthReport]:
    """Grid-certified check of ||A_n(x)|| <= e^{eps n} with a Lipschitz margin."""
    if eps <= 0 or n < 1:
        raise CocycleLabError("need eps > 0 and n >= 1")
    rep = growth_sweep(co, n, grid)
    return rep.max < eps - rep.margin, rep


# -- empirical measures ----------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalMeasure:
    """(1/n) sum of Dirac masses along the orbit of x."""

    x: BasePoint
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise CocycleLabError("empirical measure needs n >= 1")


def nu_average(co: Cocycle, mu: EmpiricalMeasure, s: int) -> float:
    """Integral of log ||A_s|| against the block-truncated empirical measure.

    With m = floor(n/s): (1/(s m)) * sum_{j < s m} log ||A_s(f^j x)||.  By
    subadditivity it dominates (1/(s m)) * sum_{i < s} log ||A_{s m}(f^i x)||.
    """
    if not 1 <= s <= mu.n:
        raise CocycleLabError("need 1 <= s <= mu.n")
    m = mu.n // s
    anchors = co.orbit(mu.x, s * m)
    vals = log_norms_batch(co, anchors, s)
    return float(vals.sum()) / (s * m)


def empirical_exponent(co: Cocycle, mu: EmpiricalMeasure, s: int) -> float:
    """Per-step growth rate seen by the empirical measure at block size s."""
    return nu_average(co, mu, s) / s


def subexponential_witness_search(co: Cocycle, eps: float,
                                  horizons: Sequence[int],
                                  grid: Optional[np.ndarray] = None):
    """First (x, n) with ||A_n(x)|| >= e^{eps n} at the sampled resolution, else None."""
    if eps <= 0:
        raise CocycleLabError("eps must be positive")
    xs = co._grid_coords() if grid is None else np.asarray(grid, dtype=float)
    for n in horizons:
        vals = log_norms_batch(co, xs, int(n)) / int(n)
        k = int(np.argmax(vals))
        if vals[k] >= eps:
            return co.base.point(float(xs[k])), int(n)
    return None


# -- uniform hyperbolicity certification ---------------------------------------------


@dataclass
class Certificate:
    """Cone field strictly invariant over n steps, with the center-field expansion."""

    n: int
    cone_angles: np.ndarray  # RP1 angles of cone centers per grid point
    cone_width: float
    expansion: float  # min ||A(x) u(x)|| along the certified field
    margin: float

    @property
    def eps(self) -> float:
        return math.log(max(self.expansion, 1.0 + 1e-12))


@dataclass
class Witness:
    point: BasePoint
    n: int
    value: float  # (1/n) log ||A_n|| at the witness


@dataclass
class Inconclusive:
    reason: str


def _direction_angles(a, b, c, d, theta):
    """Angle of A applied to direction theta (all arrays, RP1 mod pi)."""
    vx, vy = np.cos(theta), np.sin(theta)
    wx = a * vx + b * vy
    wy = c * vx + d * vy
    return np.mod(np.arctan2(wy, wx), math.pi)


def uh_certify(co: Cocycle, grid: Optional[np.ndarray] = None, n_max: int = 64,
               witness_eps: float = 1e-3):
    """Semi-decision: invariant-cone Certificate, norm-collapse Witness, or Inconclusive."""
    xs = co._grid_coords() if grid is None else np.asarray(grid, dtype=float)
    G = xs.size
    alpha = _rotation_angle(co.base)
    spacing = 1.0 / G

    # candidate unstable field at each grid point: push a generic direction
    # forward along the true backward orbit (contraction makes this exact for
    # genuinely hyperbolic cocycles, garbage otherwise -- then the check fails)
    depth = 96
    vx = np.ones(G)
    vy = np.zeros(G)
    for j in range(depth, 0, -1):
        a, b, c, d = co.generator.entries(np.mod(xs - j * alpha, 1.0))
        vx, vy = a * vx + b * vy, c * vx + d * vy
        nrm = np.hypot(vx, vy)
        vx, vy = vx / nrm, vy / nrm
    theta = np.mod(np.arctan2(vy, vx), math.pi)

    # roughness of the field and sensitivity of the direction action, x-wise
    field_diff = _angdist(theta, np.roll(theta, -1))
    lip_field = float(field_diff.max()) / spacing
    pre = np.mod(xs - alpha, 1.0)
    a, b, c, d = co.generator.entries(pre)
    prev_idx = np.mod(np.round(pre * G).astype(int), G)
    a2, b2, c2, d2 = co.generator.entries(np.mod(pre + 0.5 * spacing, 1.0))
    act_diff = _angdist(_direction_angles(a2, b2, c2, d2, theta[prev_idx]),
                        _direction_angles(a, b, c, d, theta[prev_idx]))
    lip_act = float(act_diff.max()) / (0.5 * spacing)
    margin = 4.0 * (lip_field + lip_act) * spacing

    ac, bc, cc, dc = co.generator.entries(xs)
    nxt_pos = np.mod(xs + alpha, 1.0)
    nxt_idx = np.mod(np.round(nxt_pos * G).astype(int), G)
    width = max(8.0 * float(field_diff.max()), 4.0 * margin, 1e-6)
    if width < math.pi / 4:
        lo = _direction_angles(ac, bc, cc, dc, theta - width)
        hi = _direction_angles(ac, bc, cc, dc, theta + width)
        ctr = _direction_angles(ac, bc, cc, dc, theta)
        tgt = theta[nxt_idx]
        ok = (
            (_angdist(ctr, tgt) < width / 2)
            & (_angdist(lo, tgt) < width - margin)
            & (_angdist(hi, tgt) < width - margin)
        )
        vx, vy = np.cos(theta), np.sin(theta)
        growth = np.hypot(ac * vx + bc * vy, cc * vx + dc * vy)
        expansion = float(growth.min())
        if bool(ok.all()) and expansion > 1.0 + margin:
            return Certificate(n=1, cone_angles=theta, cone_width=width,
                               expansion=expansion, margin=margin)

    vals = log_norms_batch(co, xs, n_max) / n_max
    k = int(np.argmin(vals))
    if vals[k] < witness_eps:
        return Witness(point=co.base.point(float(xs[k])), n=n_max, value=float(vals[k]))
    return Inconclusive(reason="no invariant cone found and no norm collapse at horizon")


def _angdist(t1, t2):
    d = np.mod(t1 - t2, math.pi)
    return np.minimum(d, math.pi - d)
