"""Segment perturbation: direction steering, balance profiles, certified plans.

The steering block composes per-step rotations R_phi A with an exact
determinant-preserving rank-one correction once the pullback target comes into
reach: M = A + u d^T with u = t/<d, A^-1 t> - A d maps the incoming direction d
exactly onto t and stays unimodular by the matrix determinant lemma.  Pure
rotation composition cannot cross the repelling direction of a locally
hyperbolic stretch (the reachable set stalls a third of the per-step cap away
from it), so the correction is what makes arbitrary direction pairs reachable.

Every plan is certified by direct recomputation of both contract bounds before
it is returned; nothing relies on the inequality chain that motivated it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from .basedyn import BasePoint, Cell
from .cocycle import Cocycle, _opnorm_arrays, diff_opnorm_arrays, _rotation_angle
from .errors import (
    BudgetExhausted,
    CertificationFailed,
    CocycleLabError,
    NoBalancedIndex,
    SearchFailed,
    SteeringFailed,
)
from .exact import QuadExt, min_orbit_gap, to_float
from .sl2 import Mat2, singular_axes_arrays

ANGLE_TOL = 1e-6
_LANE_CHUNK = 256


# -- data types ---------------------------------------------------------------------


@dataclass
class SteeringBlock:
    anchor: BasePoint
    length: int
    matrices: list[Mat2]
    budget: float
    achieved_error: float
    v: tuple[float, float]
    w: tuple[float, float]


@dataclass
class BalanceProfile:
    x: BasePoint
    N: int
    log_deltas: np.ndarray  # log Delta_j, j = 0..N
    j0: int
    C: float

    @property
    def deltas(self) -> np.ndarray:
        return np.exp(self.log_deltas)


@dataclass
class EarlyExit:
    pass


@dataclass
class Steered:
    j1: int
    block: SteeringBlock


@dataclass
class SegmentPlan:
    x: BasePoint
    N: int
    eps: float
    branch: Union[EarlyExit, Steered]
    product_log_norm: float
    max_distance: float
    _cocycle: Cocycle

    @property
    def matrices(self) -> list[Mat2]:
        """L_0 .. L_{N-1}; unsteered slots equal the unperturbed generator."""
        ents = plan_entries(self._cocycle, self)
        return [Mat2(*(float(e[j]) for e in ents)) for j in range(self.N)]

    def to_text(self) -> str:
        x0 = self._cocycle.base.float_coords(self.x)[0]
        tag = "early-exit" if isinstance(self.branch, EarlyExit) else f"steered j1={self.branch.j1} m={self.branch.block.length}"
        lines = [f"# segment x={x0!r} N={self.N} eps={self.eps!r} branch={tag}"]
        ents = plan_entries(self._cocycle, self)
        for j in range(self.N):
            lines.append(" ".join(float(e[j]).hex() for e in ents))
        return "\n".join(lines) + "\n"


def plan_entries(co: Cocycle, plan: SegmentPlan) -> tuple[np.ndarray, ...]:
    """Entry arrays (a, b, c, d) of L_0..L_{N-1} for a plan."""
    pos = co.orbit(plan.x, plan.N)
    ents = [np.array(e, dtype=float) for e in co.generator.entries(pos)]
    if isinstance(plan.branch, Steered):
        j1 = plan.branch.j1
        for k, M in enumerate(plan.branch.block.matrices):
            vals = M.entries()
            for i in range(4):
                ents[i][j1 + k] = vals[i]
    return tuple(ents)


# -- steering core -------------------------------------------------------------------


def _pullback_targets(ea, eb, ec, ed, wx, wy):
    """Targets T_j, j = 0..m: T_m = w, T_j = unit(A_j^{-1} T_{j+1}). Arrays (L, m+1)."""
    L, m = ea.shape
    tx = np.empty((L, m + 1))
    ty = np.empty((L, m + 1))
    tx[:, m], ty[:, m] = wx, wy
    for j in range(m - 1, -1, -1):
        # A^{-1} = [[d, -b], [-c, a]] for unimodular A
        nx = ed[:, j] * tx[:, j + 1] - eb[:, j] * ty[:, j + 1]
        ny = -ec[:, j] * tx[:, j + 1] + ea[:, j] * ty[:, j + 1]
        nrm = np.hypot(nx, ny)
        tx[:, j], ty[:, j] = nx / nrm, ny / nrm
    return tx, ty


def _steer_batch(co: Cocycle, anchors: np.ndarray, vx, vy, wx, wy, eps: float, m: int):
    """Steer each lane's v to w in exactly m steps.

    Returns (block entry arrays (L, m, 4), max distance per lane, angular error
    per lane).  Greedy capped rotations toward the pullback target; exact
    rank-one correction and coasting once within reach.
    """
    anchors = np.asarray(anchors, dtype=float)
    L = anchors.size
    alpha = _rotation_angle(co.base)
    pos = np.mod(anchors[:, None] + np.arange(m)[None, :] * alpha, 1.0)
    ea, eb, ec, ed = (np.asarray(e, dtype=float) for e in co.generator.entries(pos))
    tx, ty = _pullback_targets(ea, eb, ec, ed, wx, wy)

    out = np.empty((L, m, 4))
    dx, dy = np.array(vx, dtype=float), np.array(vy, dtype=float)
    done = np.zeros(L, dtype=bool)
    max_dist = np.zeros(L)
    cap_scale = eps * (1.0 - 1e-9)
    for j in range(m):
        a, b, c, d = ea[:, j], eb[:, j], ec[:, j], ed[:, j]
        mdx = a * dx + b * dy
        mdy = c * dx + d * dy
        # exact rank-one correction onto the pullback target
        t1, t2 = tx[:, j + 1], ty[:, j + 1]
        den = dx * (d * t1 - b * t2) + dy * (-c * t1 + a * t2)  # <d, A^{-1} t>
        safe = np.abs(den) > 1e-12
        beta = np.where(safe, 1.0 / np.where(safe, den, 1.0), 0.0)
        ux_ = beta * t1 - mdx
        uy_ = beta * t2 - mdy
        unrm = np.hypot(ux_, uy_)
        correct = (~done) & safe & (unrm < cap_scale)
        # greedy rotation fallback
        anorm = _opnorm_arrays(a, b, c, d)
        cap = 2.0 * np.arcsin(np.minimum(cap_scale / (2.0 * anorm), 1.0))
        psi = np.arctan2(mdy, mdx)
        tau = np.arctan2(t2, t1)
        delta = np.mod(tau - psi, math.pi)
        delta = np.where(delta > math.pi / 2, delta - math.pi, delta)
        phi = np.clip(delta, -cap, cap)
        phi = np.where(done | correct, 0.0, phi)
        cphi, sphi = np.cos(phi), np.sin(phi)

        na = np.where(correct, a + ux_ * dx, cphi * a - sphi * c)
        nb = np.where(correct, b + ux_ * dy, cphi * b - sphi * d)
        nc = np.where(correct, c + uy_ * dx, sphi * a + cphi * c)
        nd = np.where(correct, d + uy_ * dy, sphi * b + cphi * d)
        out[:, j, 0], out[:, j, 1], out[:, j, 2], out[:, j, 3] = na, nb, nc, nd

        step_dist = np.where(correct, unrm, 2.0 * np.sin(np.abs(phi) / 2.0) * anorm)
        step_dist = np.where(done, 0.0, step_dist)
        max_dist = np.maximum(max_dist, step_dist)

        ndx = na * dx + nb * dy
        ndy = nc * dx + nd * dy
        nrm = np.hypot(ndx, ndy)
        dx, dy = ndx / nrm, ndy / nrm
        done = done | correct
    err = np.arctan2(np.abs(dx * wy - dy * wx), np.abs(dx * wx + dy * wy))
    return out, max_dist, err


def steer_direction(co: Cocycle, x: BasePoint, v: Sequence[float], w: Sequence[float],
                    eps: float, m_max: int) -> SteeringBlock:
    """Block of minimal length m <= m_max steering direction v to w at budget eps."""
    if eps <= 0:
        raise CocycleLabError("eps must be positive")
    nv = math.hypot(*v)
    nw = math.hypot(*w)
    if nv == 0 or nw == 0:
        raise CocycleLabError("directions must be nonzero")
    vx, vy = v[0] / nv, v[1] / nv
    wx, wy = w[0] / nw, w[1] / nw
    cross = abs(vx * wy - vy * wx)
    if cross <= 1e-15 and vx * wx + vy * wy != 0:
        return SteeringBlock(anchor=x, length=0, matrices=[], budget=eps,
                             achieved_error=0.0, v=(vx, vy), w=(wx, wy))
    x0 = co.base.float_coords(x)[0]
    anchors = np.array([x0])
    last_err = math.inf
    for m in range(1, m_max + 1):
        ents, dist, err = _steer_batch(co, anchors, np.array([vx]), np.array([vy]),
                                       np.array([wx]), np.array([wy]), eps, m)
        last_err = float(err[0])
        if last_err <= ANGLE_TOL:
            mats = [Mat2(*(float(ents[0, j, k]) for k in range(4))) for j in range(m)]
            return SteeringBlock(anchor=x, length=m, matrices=mats, budget=eps,
                                 achieved_error=last_err, v=(vx, vy), w=(wx, wy))
    raise BudgetExhausted(f"angular error {last_err:.2e} after m_max={m_max} steps")


# -- balance profile -------------------------------------------------------------------


def _prefix_suffix_logs(co: Cocycle, anchors: np.ndarray, N: int):
    """log ||A_j(x)|| and log ||A_{N-j}(f^j x)|| for j = 0..N, per anchor lane.

    Sequential scans vectorized across lanes with stride-32 renormalization.
    Also returns the orbit positions (L, N) for reuse.
    """
    anchors = np.asarray(anchors, dtype=float)
    L = anchors.size
    alpha = _rotation_angle(co.base)
    pos = np.mod(anchors[:, None] + np.arange(N)[None, :] * alpha, 1.0)
    ea, eb, ec, ed = (np.asarray(e, dtype=float) for e in co.generator.entries(pos))
    pre = np.zeros((L, N + 1))
    suf = np.zeros((L, N + 1))

    pa = np.ones(L)
    pb = np.zeros(L)
    pc = np.zeros(L)
    pd = np.ones(L)
    acc = np.zeros(L)
    for j in range(N):
        a, b, c, d = ea[:, j], eb[:, j], ec[:, j], ed[:, j]
        pa, pb, pc, pd = a * pa + b * pc, a * pb + b * pd, c * pa + d * pc, c * pb + d * pd
        if (j + 1) % 32 == 0:
            scale = np.maximum.reduce([np.abs(pa), np.abs(pb), np.abs(pc), np.abs(pd)])
            scale = np.maximum(scale, 1e-300)
            acc += np.log(scale)
            pa, pb, pc, pd = pa / scale, pb / scale, pc / scale, pd / scale
        pre[:, j + 1] = acc + np.log(np.maximum(diff_opnorm_arrays(pa, pb, pc, pd), 1e-300))

    pa = np.ones(L)
    pb = np.zeros(L)
    pc = np.zeros(L)
    pd = np.ones(L)
    acc = np.zeros(L)
    for j in range(N - 1, -1, -1):
        a, b, c, d = ea[:, j], eb[:, j], ec[:, j], ed[:, j]
        # suffix product S_j = S_{j+1} @ A_j
        pa, pb, pc, pd = pa * a + pb * c, pa * b + pb * d, pc * a + pd * c, pc * b + pd * d
        if (N - j) % 32 == 0:
            scale = np.maximum.reduce([np.abs(pa), np.abs(pb), np.abs(pc), np.abs(pd)])
            scale = np.maximum(scale, 1e-300)
            acc += np.log(scale)
            pa, pb, pc, pd = pa / scale, pb / scale, pc / scale, pd / scale
        suf[:, j] = acc + np.log(np.maximum(diff_opnorm_arrays(pa, pb, pc, pd), 1e-300))
    return pre, suf, pos


def balance_profile(co: Cocycle, x: BasePoint, N: int, C: float) -> BalanceProfile:
    """Delta_j = ||A_j(x)|| / ||A_{N-j}(f^j x)|| with the smallest balanced index."""
    if N < 1:
        raise CocycleLabError("N >= 1 required")
    if C <= co.sup_norm:
        raise NoBalancedIndex(f"C = {C} below sup norm {co.sup_norm}")
    x0 = co.base.float_coords(x)[0]
    pre, suf, _ = _prefix_suffix_logs(co, np.array([x0]), N)
    log_d = pre[0] - suf[0]
    logC = math.log(C)
    inside = np.abs(log_d) < logC
    if not inside.any():
        raise NoBalancedIndex("no index with C^-1 < Delta_j < C; C below precondition?")
    j0 = int(np.argmax(inside))
    return BalanceProfile(x=x, N=N, log_deltas=log_d, j0=j0, C=C)


# -- N selection -------------------------------------------------------------------------


def perturbation_constant(co: Cocycle, eps: float) -> float:
    """C = eps + sup_x ||A(x)|| + 1e-9, the minimal valid profile constant."""
    return eps + co.sup_norm + 1e-9


def choose_N(co: Cocycle, eps: float, c: float, m1: int) -> int:
    """Smallest N with C^{4 m1 + 1} < e^{eps N} / sqrt(2) and eps N > c."""
    if eps <= 0:
        raise CocycleLabError("eps must be positive")
    C = perturbation_constant(co, eps)
    base = max(((4 * m1 + 1) * math.log(C) + 0.5 * math.log(2.0)) / eps, c / eps)
    N = max(1, math.floor(base))
    while (4 * m1 + 1) * math.log(C) >= eps * N - 0.5 * math.log(2.0) or eps * N <= c:
        N += 1
    return N


# -- steering window -------------------------------------------------------------------


def _window_disjoint(co: Cocycle, W: Cell, m: int) -> bool:
    base = co.base
    from .basedyn import CircleRotation, SturmianShift

    rot = base.rotation if isinstance(base, SturmianShift) else base
    if not isinstance(rot, CircleRotation):
        return False
    pieces = []
    for j in range(m):
        pieces.extend(rot.translate_cell(W, j).intervals)
    pieces.sort(key=lambda p: to_float(p[0]))
    for (lo1, hi1), (lo2, hi2) in zip(pieces[:-1], pieces[1:]):
        if not hi1 <= lo2:
            return False
    return True


def _direction_grid(k: int) -> tuple[np.ndarray, np.ndarray]:
    ang = (np.arange(k) + 0.5) * math.pi / k
    return np.cos(ang), np.sin(ang)


def _window_sweep_ok(co: Cocycle, anchors: np.ndarray, eps: float, m: int, k: int) -> bool:
    """All k*k direction pairs from all anchors steer within tolerance at length m."""
    cx, sx = _direction_grid(k)
    A = anchors.size
    vx = np.repeat(np.tile(cx, k), A)
    vy = np.repeat(np.tile(sx, k), A)
    wx = np.repeat(np.repeat(cx, k), A)
    wy = np.repeat(np.repeat(sx, k), A)
    anc = np.tile(anchors, k * k)
    _, dist, err = _steer_batch(co, anc, vx, vy, wx, wy, eps, m)
    return bool((err <= ANGLE_TOL).all() and (dist < eps).all())


def choose_steering_window(co: Cocycle, eps: float,
                           max_candidates: int = 64) -> tuple[Cell, int]:
    """Open window W and block length m certified by a direction-pair sweep.

    Candidate centers are ranked by finite-product norm collapse (steering is
    cheapest where the cocycle is least hyperbolic); window sizes come from the
    exact minimal orbit gap so that W, f(W), ..., f^{m-1}(W) stay disjoint.
    """
    if eps <= 0:
        raise CocycleLabError("eps must be positive")
    from .cocycle import log_norms_batch

    base = co.base
    from .basedyn import CircleRotation, SturmianShift

    rot = base.rotation if isinstance(base, SturmianShift) else base
    if not isinstance(rot, CircleRotation):
        raise CocycleLabError("steering windows need a rotation-presented base")
    alpha = rot.alpha
    m_cap = 10 * math.ceil(1.0 / eps)
    xs = rot.grid_floats()
    probe = log_norms_batch(co, xs, 16)
    order = np.argsort(probe, kind="stable")
    centers = [float(xs[i]) for i in order[: max_candidates // 2]]
    centers += [float(xs[int(i)]) for i in
                np.linspace(0, xs.size - 1, max_candidates - len(centers)).astype(int)]

    # per-step reach never exceeds the rotation cap at the smallest image norm
    # plus the correction cone; skip block lengths that cannot make a half turn
    reach = 2.0 * math.asin(min(1.0, eps * co.sup_norm / 2.0)) \
        + math.atan(eps * co.sup_norm)
    m_floor = max(1, math.ceil((math.pi / 2.0) / max(reach, 1e-9)))

    ladder = sorted({min(max(m_floor, m), m_cap) for m in
                     (1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64, 96, 128, m_cap)})
    spacing = Fraction(1, rot.grid_size)
    for m in ladder:
        gap = to_float(min_orbit_gap(alpha, m + 1)) if m > 1 else 0.49
        half = Fraction(min(gap * 0.45, 0.05)).limit_denominator(1 << 24)
        if half <= spacing:
            continue
        seen = set()
        for cen in centers:
            c = Fraction(cen).limit_denominator(1 << 24)
            key = (c, m)
            if key in seen:
                continue
            seen.add(key)
            lo, hi = c - half, c + half
            if lo < 0 or hi > 1:
                continue
            alpha_f = rot.alpha_float
            pts = np.mod(float(lo) + np.arange(m) * alpha_f, 1.0)
            ends = np.mod(float(hi) + np.arange(m) * alpha_f, 1.0)
            if m > 1:  # cheap float disjointness screen before exact work
                order = np.argsort(pts)
                if np.any(ends[order][:-1] > pts[order][1:] + 1e-15):
                    continue
            if not _window_sweep_ok(co, np.array([float(c)]), eps, m, 8):
                continue
            if rot.exact:
                W = Cell.from_union([(QuadExt(lo, 0, rot.alpha.D), QuadExt(hi, 0, rot.alpha.D))])
            else:
                W = Cell.from_union([(float(lo), float(hi))])
            if not _window_disjoint(co, W, m):
                continue
            inside = xs[(xs >= float(lo)) & (xs < float(hi))]
            if inside.size == 0:
                inside = np.array([float(c)])
            if inside.size > 256:
                inside = inside[:: inside.size // 256 + 1]
            if not _window_sweep_ok(co, inside, eps, m, 8):
                continue
            if _window_sweep_ok(co, inside, eps, m, 32):
                return W, m
    raise SearchFailed(f"no certified window after scanning {max_candidates} candidates, m <= {m_cap}")


# -- segment plans ------------------------------------------------------------------------


def plan_segment(co: Cocycle, x: BasePoint, eps: float, N: int, W: Cell,
                 m1: int, m: int) -> SegmentPlan:
    plans = plan_segments(co, [x], eps, N, W, m1, m)
    return plans[0]


def plan_segments(co: Cocycle, xs: Sequence[BasePoint], eps: float, N: int, W: Cell,
                  m1: int, m: int) -> list[SegmentPlan]:
    """Certified segment plans at many anchors, vectorized in lane chunks."""
    if eps <= 0 or N < 1:
        raise CocycleLabError("need eps > 0 and N >= 1")
    points = list(xs)
    anchors = np.array([co.base.float_coords(p)[0] for p in points])
    out: list[Optional[SegmentPlan]] = [None] * len(points)
    for lo in range(0, anchors.size, _LANE_CHUNK):
        hi = min(lo + _LANE_CHUNK, anchors.size)
        _plan_chunk(co, points[lo:hi], anchors[lo:hi], eps, N, W, m1, m, out, lo)
    return out  # type: ignore[return-value]


def _plan_chunk(co, points, anchors, eps, N, W, m1, m, out, base_idx):
    L = anchors.size
    C = perturbation_constant(co, eps)
    logC = math.log(C)
    pre, suf, pos = _prefix_suffix_logs(co, anchors, N)
    log_d = pre - suf
    inside = np.abs(log_d) < logC
    if not inside.any(axis=1).all():
        bad = int(np.argmin(inside.any(axis=1)))
        raise NoBalancedIndex(f"anchor {anchors[bad]}: no balanced index (C too small?)")
    j0 = np.argmax(inside, axis=1)

    wlo, whi = W.float_breaks()
    alpha = _rotation_angle(co.base)

    # nothing to prove where the unperturbed product already meets the bound
    trivially_small = pre[:, N] < 0.999 * eps * N

    j1 = np.full(L, -1, dtype=int)
    for lane in range(L):
        if trivially_small[lane]:
            continue
        top = min(j0[lane] + m1, N - 1)
        js = np.arange(j0[lane], top + 1)
        p = np.mod(anchors[lane] + js * alpha, 1.0)
        idx = np.clip(np.searchsorted(wlo, p, side="right") - 1, 0, wlo.size - 1)
        hit = (p >= wlo[idx]) & (p < whi[idx])
        if hit.any():
            j1[lane] = js[int(np.argmax(hit))]

    early = (j1 < 0) | (j1 + m > N)
    steered_lanes = np.flatnonzero(~early)

    # scaled prefix X = A_{j1}(x) and suffix Z = A_{N-j1-m}(f^{j1+m} x) per steered lane
    blocks: dict[int, SteeringBlock] = {}
    if steered_lanes.size:
        Xe, Ze = _masked_products(co, anchors, pos, N, j1, m, steered_lanes)
        ux, uy, sx, sy, _, degX = singular_axes_arrays(*Xe)
        # v = s_{X^{-1}} = direction of X u_X; degenerate X: any direction works
        vx_ = Xe[0] * ux + Xe[1] * uy
        vy_ = Xe[2] * ux + Xe[3] * uy
        nrm = np.hypot(vx_, vy_)
        vx_, vy_ = vx_ / nrm, vy_ / nrm
        vx_ = np.where(degX, 1.0, vx_)
        vy_ = np.where(degX, 0.0, vy_)
        _, _, szx, szy, _, degZ = singular_axes_arrays(*Ze)
        szx = np.where(degZ, 1.0, szx)
        szy = np.where(degZ, 0.0, szy)
        banchors = np.mod(anchors[steered_lanes] + j1[steered_lanes] * alpha, 1.0)
        ents, dist, err = _steer_batch(co, banchors, vx_, vy_, szx, szy, eps, m)
        bad = err > ANGLE_TOL
        if bad.any():
            k = int(np.argmax(bad))
            raise SteeringFailed(
                f"anchor {anchors[steered_lanes[k]]}: steering error {err[k]:.2e} at m={m}"
            )
        for i, lane in enumerate(steered_lanes):
            mats = [Mat2(*(float(ents[i, j, k]) for k in range(4))) for j in range(m)]
            pt = points[lane]
            blocks[lane] = SteeringBlock(
                anchor=co.base.step(pt, int(j1[lane])), length=m, matrices=mats,
                budget=eps, achieved_error=float(err[i]),
                v=(float(vx_[i]), float(vy_[i])), w=(float(szx[i]), float(szy[i])),
            )

    # certify all lanes with one batched scan over the actual L matrices
    prod_logs, max_dists = _certify_chunk(co, anchors, pos, N, j1, m, early, blocks)
    for lane in range(L):
        if early[lane]:
            branch: Union[EarlyExit, Steered] = EarlyExit()
        else:
            branch = Steered(j1=int(j1[lane]), block=blocks[lane])
        pl = float(prod_logs[lane])
        md = float(max_dists[lane])
        if pl >= eps * N:
            raise CertificationFailed(
                f"anchor {anchors[lane]}: log product norm {pl:.3f} >= eps*N = {eps * N:.3f}"
                + (" (early exit)" if early[lane] else "")
            )
        if md >= eps:
            raise CertificationFailed(f"anchor {anchors[lane]}: distance {md:.3e} >= eps")
        out[base_idx + lane] = SegmentPlan(
            x=points[lane], N=N, eps=eps, branch=branch,
            product_log_norm=pl, max_distance=md, _cocycle=co,
        )


def _masked_products(co, anchors, pos, N, j1, m, lanes):
    """Scaled entries of X (prefix to j1) and Z (suffix from j1+m) per lane."""
    ea, eb, ec, ed = (np.asarray(e, dtype=float) for e in co.generator.entries(pos[lanes]))
    L = lanes.size
    j1s = j1[lanes]

    def scan(forward: bool):
        pa, pb = np.ones(L), np.zeros(L)
        pc, pd = np.zeros(L), np.ones(L)
        rng = range(N) if forward else range(N - 1, -1, -1)
        for j in rng:
            active = (j < j1s) if forward else (j >= j1s + m)
            if not active.any():
                if forward:
                    break
                continue
            a, b, c, d = ea[:, j], eb[:, j], ec[:, j], ed[:, j]
            if forward:
                na, nb = a * pa + b * pc, a * pb + b * pd
                nc, nd = c * pa + d * pc, c * pb + d * pd
            else:
                na, nb = pa * a + pb * c, pa * b + pb * d
                nc, nd = pc * a + pd * c, pc * b + pd * d
            pa = np.where(active, na, pa)
            pb = np.where(active, nb, pb)
            pc = np.where(active, nc, pc)
            pd = np.where(active, nd, pd)
            scale = np.maximum.reduce([np.abs(pa), np.abs(pb), np.abs(pc), np.abs(pd)])
            scale = np.maximum(scale, 1e-30)
            pa, pb, pc, pd = pa / scale, pb / scale, pc / scale, pd / scale
        return pa, pb, pc, pd

    return scan(True), scan(False)


def _certify_chunk(co, anchors, pos, N, j1, m, early, blocks):
    """Recompute max_j ||L_j - A(f^j x)|| and log ||L_{N-1}...L_0|| per lane."""
    ea, eb, ec, ed = (np.asarray(e, dtype=float) for e in co.generator.entries(pos))
    L = anchors.size
    max_dist = np.zeros(L)
    lanes = [lane for lane in range(L) if not early[lane]]
    for lane in lanes:
        blk = blocks[lane]
        jj = j1[lane]
        for k, M in enumerate(blk.matrices):
            da = M.a - ea[lane, jj + k]
            db = M.b - eb[lane, jj + k]
            dc = M.c - ec[lane, jj + k]
            dd = M.d - ed[lane, jj + k]
            from .sl2 import general_operator_norm

            max_dist[lane] = max(max_dist[lane], general_operator_norm(da, db, dc, dd))
            ea[lane, jj + k] = M.a
            eb[lane, jj + k] = M.b
            ec[lane, jj + k] = M.c
            ed[lane, jj + k] = M.d
    pa, pb = np.ones(L), np.zeros(L)
    pc, pd = np.zeros(L), np.ones(L)
    acc = np.zeros(L)
    for j in range(N):
        a, b, c, d = ea[:, j], eb[:, j], ec[:, j], ed[:, j]
        pa, pb, pc, pd = a * pa + b * pc, a * pb + b * pd, c * pa + d * pc, c * pb + d * pd
        if (j + 1) % 32 == 0:
            scale = np.maximum.reduce([np.abs(pa), np.abs(pb), np.abs(pc), np.abs(pd)])
            scale = np.maximum(scale, 1e-300)
            acc += np.log(scale)
            pa, pb, pc, pd = pa / scale, pb / scale, pc / scale, pd / scale
    prod_logs = acc + np.log(np.maximum(diff_opnorm_arrays(pa, pb, pc, pd), 1e-300))
    return prod_logs, max_dist


@dataclass
class SegmentReport:
    max_distance: float
    product_log_norm: float
    eps: float
    N: int

    @property
    def passes(self) -> bool:
        return self.max_distance < self.eps and self.product_log_norm < self.eps * self.N


def verify_segment(co: Cocycle, plan: SegmentPlan) -> SegmentReport:
    """Independent recomputation of both plan bounds from the raw matrices."""
    ents = plan_entries(co, plan)
    pos = co.orbit(plan.x, plan.N)
    ga, gb, gc, gd = (np.asarray(e, dtype=float) for e in co.generator.entries(pos))
    from .sl2 import general_operator_norm

    dist = 0.0
    for j in range(plan.N):
        dist = max(dist, general_operator_norm(
            float(ents[0][j] - ga[j]), float(ents[1][j] - gb[j]),
            float(ents[2][j] - gc[j]), float(ents[3][j] - gd[j])))
    pa, pb, pc, pd = 1.0, 0.0, 0.0, 1.0
    acc = 0.0
    for j in range(plan.N):
        a, b, c, d = (float(ents[k][j]) for k in range(4))
        pa, pb, pc, pd = a * pa + b * pc, a * pb + b * pd, c * pa + d * pc, c * pb + d * pd
        if (j + 1) % 32 == 0:
            scale = max(abs(pa), abs(pb), abs(pc), abs(pd), 1e-300)
            acc += math.log(scale)
            pa, pb, pc, pd = pa / scale, pb / scale, pc / scale, pd / scale
    log_norm = acc + math.log(general_operator_norm(pa, pb, pc, pd))
    return SegmentReport(max_distance=dist, product_log_norm=log_norm,
                         eps=plan.eps, N=plan.N)
