"""End-to-end growth surgery: plan table, continuous blending, growth certificate.

Pipeline stages mirror the constructive argument: gate out inputs that are
already uniformly hyperbolic or already subexponential; assemble the constants
(steering window, covering time, N, castle, continuity modulus, boundary
neighborhood V with a visit-frequency certificate); lay certified segment
matrices on the castle columns cut away from V; blend continuously through the
tangent chart; then certify growth twice -- directly, and through the
block-decomposition bookkeeping.

Two nested scales around the cut set make the bookkeeping sound in floating
point: visits are counted against the outer neighborhood V, while the bump
dies on the inner half-size copy.  A block whose base point avoids V therefore
runs entirely through exact table matrices.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .basedyn import (
    Cell,
    CircleRotation,
    covering_time,
    inter_union,
    shrink_union,
    sub_union,
    to_float,
    translate_union,
)
from .cocycle import (
    Certificate,
    Cocycle,
    CallableGenerator,
    _rotation_angle,
    diff_opnorm_arrays,
    log_norms_batch,
    uh_certify,
)
from .errors import (
    BlendBoundViolated,
    CertificationFailed,
    CocycleLabError,
    DecompositionFailed,
    NotApplicable,
    ResolutionExceeded,
)
from .exact import QuadExt, mod1
from .perturb import (
    SegmentPlan,
    choose_N,
    choose_steering_window,
    plan_segments,
)
from .sl2 import exp_traceless_arrays, log_sl2_arrays
from .towers import Castle, FreqBound, build_castle, visit_freq_bound

EXPONENT_FLOOR = 1e-3


# -- continuity modulus ---------------------------------------------------------------


def continuity_modulus(co: Cocycle, eps: float, N: int) -> float:
    """Largest grid-certified delta with d(x,y) < delta forcing the generator
    values along N orbit steps to stay eps-close.

    The implemented bases are isometries, so the condition reduces to the
    generator's own modulus; the Lipschitz estimate is sampled adjacent grid
    differences times the safety factor 4.
    """
    if eps <= 0:
        raise CocycleLabError("eps must be positive")
    xs = co._grid_coords()
    spacing = 1.0 / xs.size
    a, b, c, d = (np.asarray(e, dtype=float) for e in co.generator.entries(xs))
    da = np.diff(np.concatenate([a, a[:1]]))
    db = np.diff(np.concatenate([b, b[:1]]))
    dc = np.diff(np.concatenate([c, c[:1]]))
    dd = np.diff(np.concatenate([d, d[:1]]))
    step_norm = diff_opnorm_arrays(da, db, dc, dd)
    lip = float(step_norm.max()) / spacing
    diam = co.base.diameter()
    if lip <= 0.0:
        return diam
    delta = min(eps / (4.0 * lip), diam)
    if delta < 4.0 * spacing:
        raise ResolutionExceeded(
            f"continuity modulus {delta:.3e} below 4 grid spacings ({4 * spacing:.3e})")
    return delta


# -- configuration ----------------------------------------------------------------------


@dataclass
class SurgeryConfig:
    eps: float
    c: float
    N: int
    W: Cell
    m: int
    m1: int
    delta: float
    castle: Castle
    cover: list[Cell]  # disjointified U_i
    freq: FreqBound
    V_inner: Cell
    reps: dict  # (height, cover index) -> BasePoint
    rep_pieces: dict  # (height, cover index) -> interval union of B_l ^ U_i \ V_inner
    boundary_points: list
    blend_width: float

    @property
    def n0(self) -> int:
        return self.freq.n0

    @property
    def growth_bound(self) -> float:
        return (3.0 * self.c + 2.0) * self.eps


def _exponent_estimate(co: Cocycle, horizon: int = 200_000) -> float:
    anchors = np.array([0.1234567, 0.5678901, 0.9012345])
    vals = log_norms_batch(co, anchors, horizon) / horizon
    return float(vals.max())


def build_config(co: Cocycle, eps: float, *, force: bool = False,
                 uh_n_max: int = 64) -> SurgeryConfig:
    """Assemble all surgery constants and structures in proof order.

    Raises NotApplicable when the input is UH-certified (the dichotomy's other
    horn) or when its exponent estimate is already below 1e-3; `force` skips
    the gate for diagnostics.
    """
    if eps <= 0:
        raise CocycleLabError("eps must be positive")
    base = co.base
    if not isinstance(base, CircleRotation):
        raise CocycleLabError("surgery implemented over circle-rotation bases")
    if not force:
        res = uh_certify(co, n_max=uh_n_max)
        if isinstance(res, Certificate):
            raise NotApplicable(
                f"cocycle is UH-certified (expansion {res.expansion:.6g}); "
                "uniform hyperbolicity is the dichotomy's other horn")
        est = _exponent_estimate(co)
        if est <= EXPONENT_FLOOR:
            raise NotApplicable(
                f"exponent estimate {est:.3e} <= {EXPONENT_FLOOR}; already near subexponential")

    c = math.log(co.sup_norm + eps) + 1e-9
    W, m = choose_steering_window(co, eps)
    m1 = max(covering_time(base, W), m)  # the early-exit chain needs m <= m1
    N = choose_N(co, eps, c, m1)
    castle = build_castle(base, N)
    delta = continuity_modulus(co, eps, N)

    cover = _cover_cells(base, castle, delta)
    by_height = {h: castle.bases_by_height(h) for h in (N, N + 1)}
    pieces = {}
    bnd: list = []
    for h, Bl in by_height.items():
        for i, Ui in enumerate(cover):
            inter = inter_union(Bl.intervals, Ui.intervals)
            if inter:
                pieces[(h, i)] = inter
                bnd.extend(p for iv in inter for p in iv)
    freq = visit_freq_bound(base, bnd, eps / (N + 1), rho_floor=1e-8)
    rho = freq.rho
    spacing = 1.0 / base.grid_size
    inner_shift = Fraction(min(rho / 2.0, 2.0 * spacing)).limit_denominator(1 << 48)
    blend_width = float(inner_shift) / 2.0
    V_inner = Cell(axes=(shrink_union(freq.V.intervals, inner_shift),), boundary=((),))

    reps: dict = {}
    rep_pieces: dict = {}
    for key, inter in pieces.items():
        cut = sub_union(inter, V_inner.intervals)
        if not cut:
            continue
        widths = [to_float(hi) - to_float(lo) for lo, hi in cut]
        kbest = int(np.argmax(widths))
        lo, hi = cut[kbest]
        mid = (to_float(lo) + to_float(hi)) / 2.0
        reps[key] = base.point(mid)
        rep_pieces[key] = cut
    if not reps:
        raise CocycleLabError("every base piece fell inside V; resolution too coarse")
    return SurgeryConfig(eps=eps, c=c, N=N, W=W, m=m, m1=m1, delta=delta,
                         castle=castle, cover=cover, freq=freq, V_inner=V_inner,
                         reps=reps, rep_pieces=rep_pieces, boundary_points=bnd,
                         blend_width=blend_width)


def _cover_cells(base: CircleRotation, castle: Castle, delta: float) -> list[Cell]:
    """Half-open tiling of K by k cells of diameter < delta, avoiding B-endpoints."""
    bpoints = [p for t in castle.towers for p in t.base.boundary_points()]
    k = max(2, math.ceil(1.0 / (0.95 * delta)) + 1)
    for _ in range(64):
        edges = [Fraction(i, k) for i in range(k)]
        collision = any(p == e for e in edges for p in bpoints)
        if not collision:
            break
        k += 1
    cells = []
    for i in range(k):
        lo, hi = Fraction(i, k), Fraction(i + 1, k)
        if base.exact:
            D = base.alpha.D
            cells.append(Cell.from_union([(QuadExt(lo, 0, D), QuadExt(hi, 0, D))]))
        else:
            cells.append(Cell.from_union([(float(lo), float(hi))]))
    return cells


# -- assembled perturbation ----------------------------------------------------------


class PerturbedCocycle:
    """The blended cocycle: piecewise segment table over castle columns.

    Evaluation at a point: locate the region piece; in the interior (bump = 1)
    the value IS the table matrix bitwise; in the blend-width collar at the
    piece edges the tangent chart interpolates back to the unperturbed
    generator, and everywhere else the generator itself applies.
    """

    def __init__(self, co: Cocycle, cfg: SurgeryConfig, plans: dict):
        self.original = co
        self.cfg = cfg
        self.plans = plans
        self.blend_width = cfg.blend_width
        self._build_regions()
        self.cocycle = Cocycle(co.base, CallableGenerator(self.entries))
        self.sup_distance = float("nan")  # set by certify_distance

    def _build_regions(self):
        co, cfg = self.original, self.cfg
        rot = co.base
        lo_list: list[float] = []
        hi_list: list[float] = []
        mats: list[tuple[float, float, float, float]] = []
        labels: list[int] = []
        label_keys: list[tuple] = sorted(cfg.rep_pieces.keys())
        key_index = {k: i for i, k in enumerate(label_keys)}
        exact_pieces = []
        block_logs = np.zeros(len(label_keys))
        for key in label_keys:
            h, i = key
            plan = self.plans[key]
            col = _column_matrices(co, cfg, plan, h)
            block_logs[key_index[key]] = _column_log_norm(col)
            base_union = cfg.rep_pieces[key]
            for j in range(h):
                delta_j = mod1(j * rot.alpha)
                shifted = translate_union(base_union, delta_j)
                for lo, hi in shifted:
                    exact_pieces.append((lo, hi))
                    lo_list.append(to_float(lo))
                    hi_list.append(to_float(hi))
                    mats.append(col[j])
                    labels.append(key_index[key])
        order = np.argsort(np.array(lo_list), kind="stable")
        self.region_lo = np.array(lo_list)[order]
        self.region_hi = np.array(hi_list)[order]
        self.region_mat = np.array(mats)[order]
        self.region_label = np.array(labels)[order]
        self.label_keys = label_keys
        self.block_logs = block_logs
        # exact disjointness of all regions ("these sets are disjoint")
        exact_pieces.sort(key=lambda iv: to_float(iv[0]))
        for (l1, h1), (l2, h2) in zip(exact_pieces[:-1], exact_pieces[1:]):
            if not h1 <= l2:
                raise CertificationFailed("perturbation regions overlap")
        # base pieces (column 0) for structural block lookup
        base_lo, base_hi, base_lab, base_h = [], [], [], []
        for key in label_keys:
            for lo, hi in cfg.rep_pieces[key]:
                base_lo.append(to_float(lo))
                base_hi.append(to_float(hi))
                base_lab.append(key_index[key])
                base_h.append(key[0])
        order = np.argsort(np.array(base_lo), kind="stable")
        self.base_lo = np.array(base_lo)[order]
        self.base_hi = np.array(base_hi)[order]
        self.base_label = np.array(base_lab)[order]
        self.base_height = np.array(base_h)[order]

    # -- evaluation -------------------------------------------------------------

    def bump(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        idx = np.clip(np.searchsorted(self.region_lo, xs, side="right") - 1,
                      0, max(self.region_lo.size - 1, 0))
        if self.region_lo.size == 0:
            return np.zeros_like(xs)
        inside = (xs >= self.region_lo[idx]) & (xs < self.region_hi[idx])
        t = np.minimum(xs - self.region_lo[idx], self.region_hi[idx] - xs) / self.blend_width
        t = np.clip(t, 0.0, 1.0)
        s = t * t * (3.0 - 2.0 * t)
        return np.where(inside, s, 0.0)

    def entries(self, xs: np.ndarray):
        xs = np.asarray(xs, dtype=float)
        flat = xs.reshape(-1)
        ga, gb, gc, gd = (np.asarray(e, dtype=float)
                          for e in self.original.generator.entries(flat))
        if self.region_lo.size == 0:
            return tuple(x.reshape(xs.shape) for x in (ga, gb, gc, gd))
        idx = np.clip(np.searchsorted(self.region_lo, flat, side="right") - 1,
                      0, self.region_lo.size - 1)
        inside = (flat >= self.region_lo[idx]) & (flat < self.region_hi[idx])
        t = np.minimum(flat - self.region_lo[idx], self.region_hi[idx] - flat) / self.blend_width
        t = np.clip(t, 0.0, 1.0)
        beta = np.where(inside, t * t * (3.0 - 2.0 * t), 0.0)
        ta, tb, tc, td = (self.region_mat[idx, k] for k in range(4))

        out_a, out_b, out_c, out_d = ga.copy(), gb.copy(), gc.copy(), gd.copy()
        full = inside & (t >= 1.0)
        out_a[full], out_b[full] = ta[full], tb[full]
        out_c[full], out_d[full] = tc[full], td[full]
        mid = inside & (t < 1.0) & (beta > 0.0)
        if mid.any():
            # xi = log(A^-1 M), blended by beta, applied back through A
            ia = gd[mid] * ta[mid] - gb[mid] * tc[mid]
            ib = gd[mid] * tb[mid] - gb[mid] * td[mid]
            ic = -gc[mid] * ta[mid] + ga[mid] * tc[mid]
            id_ = -gc[mid] * tb[mid] + ga[mid] * td[mid]
            t1, t2, t3 = log_sl2_arrays(ia, ib, ic, id_)
            bme = beta[mid]
            ea, eb, ec, ed = exp_traceless_arrays(t1 * bme, t2 * bme, t3 * bme)
            out_a[mid] = ga[mid] * ea + gb[mid] * ec
            out_b[mid] = ga[mid] * eb + gb[mid] * ed
            out_c[mid] = gc[mid] * ea + gd[mid] * ec
            out_d[mid] = gc[mid] * eb + gd[mid] * ed
        shape = xs.shape
        return (out_a.reshape(shape), out_b.reshape(shape),
                out_c.reshape(shape), out_d.reshape(shape))

    # -- certificates ------------------------------------------------------------

    def certify_distance(self) -> float:
        """Measured sup ||A~ - A|| over the grid plus region-edge probes."""
        cfg = self.cfg
        xs = [self.original._grid_coords()]
        w = self.blend_width
        for off in (0.25 * w, 0.5 * w, 0.999 * w, 1.5 * w):
            xs.append(np.mod(self.region_lo + off, 1.0))
            xs.append(np.mod(self.region_hi - off, 1.0))
        probe = np.unique(np.concatenate(xs))
        pa, pb, pc, pd = self.entries(probe)
        ga, gb, gc, gd = (np.asarray(e, dtype=float)
                          for e in self.original.generator.entries(probe))
        dist = diff_opnorm_arrays(pa - ga, pb - gb, pc - gc, pd - gd)
        self.sup_distance = float(dist.max())
        bound = math.exp(cfg.c) * (math.exp(cfg.c) + 1.0) * cfg.eps
        if self.sup_distance >= bound:
            raise BlendBoundViolated(
                f"sup distance {self.sup_distance:.6g} >= e^c(e^c+1) eps = {bound:.6g}")
        return self.sup_distance

    def continuity_check(self) -> float:
        """Max adjacent-grid jump of the blended map (continuity at resolution)."""
        xs = self.original._grid_coords()
        pa, pb, pc, pd = self.entries(xs)
        da = np.diff(np.concatenate([pa, pa[:1]]))
        db = np.diff(np.concatenate([pb, pb[:1]]))
        dc = np.diff(np.concatenate([pc, pc[:1]]))
        dd = np.diff(np.concatenate([pd, pd[:1]]))
        return float(diff_opnorm_arrays(da, db, dc, dd).max())

    def export_table(self, path, grid: Optional[np.ndarray] = None) -> None:
        xs = self.original._grid_coords() if grid is None else np.asarray(grid)
        a, b, c, d = self.entries(xs)
        bump = self.bump(xs)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "a", "b", "c", "d", "bump"])
            for row in zip(xs, a, b, c, d, bump):
                w.writerow([f"{v:.17g}" for v in row])


def _column_matrices(co: Cocycle, cfg: SurgeryConfig, plan: SegmentPlan, height: int):
    """Entries of L_{l,i,j}, j < height; the extra top slot copies the generator."""
    from .perturb import plan_entries

    ents = plan_entries(co, plan)
    col = [(float(ents[0][j]), float(ents[1][j]), float(ents[2][j]), float(ents[3][j]))
           for j in range(plan.N)]
    if height == plan.N + 1:
        x0 = co.base.float_coords(plan.x)[0]
        alpha = _rotation_angle(co.base)
        top = np.mod(x0 + plan.N * alpha, 1.0)
        a, b, c, d = (float(np.asarray(e).reshape(-1)[0])
                      for e in co.generator.entries(np.array([top])))
        col.append((a, b, c, d))
    return col


def _column_log_norm(col) -> float:
    from .sl2 import general_operator_norm

    pa, pb, pc, pd = 1.0, 0.0, 0.0, 1.0
    acc = 0.0
    for a, b, c, d in col:
        pa, pb, pc, pd = a * pa + b * pc, a * pb + b * pd, c * pa + d * pc, c * pb + d * pd
        scale = max(abs(pa), abs(pb), abs(pc), abs(pd), 1e-300)
        if scale > 1e100:
            acc += math.log(scale)
            pa, pb, pc, pd = pa / scale, pb / scale, pc / scale, pd / scale
    return acc + math.log(general_operator_norm(pa, pb, pc, pd))


def assemble_perturbation(co: Cocycle, cfg: SurgeryConfig) -> PerturbedCocycle:
    """Plan every (height, cover cell) column, lay the table, blend and certify."""
    keys = sorted(cfg.reps.keys())
    plans = plan_segments(co, [cfg.reps[k] for k in keys], cfg.eps, cfg.N,
                          cfg.W, cfg.m1, cfg.m)
    plan_map = dict(zip(keys, plans))
    pc = PerturbedCocycle(co, cfg, plan_map)
    pc.certify_distance()
    return pc


# -- growth certificate -------------------------------------------------------------------


@dataclass
class GrowthCertificate:
    n: int
    grid_size: int
    max_direct: float  # max over grid of (1/n) log ||A~_n||
    margin: float
    structural_max: float  # max over grid of the block-decomposition bound / n
    bound: float  # (3c + 2) eps
    passed: bool
    visit_freq_max: float
    visit_freq_cap: float
    dominance_ok: bool
    decomposition: dict = field(default_factory=dict)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({
                "horizon": self.n,
                "grid": self.grid_size,
                "max_direct": self.max_direct,
                "margin": self.margin,
                "structural_max": self.structural_max,
                "bound": self.bound,
                "pass": self.passed,
                "visit_freq_max": self.visit_freq_max,
                "visit_freq_cap": self.visit_freq_cap,
                "dominance_ok": self.dominance_ok,
                "decomposition": self.decomposition,
            }, fh, indent=2, sort_keys=True)


def _castle_base_arrays(castle: Castle):
    lo, hi, hgt = [], [], []
    for t in castle.towers:
        for l, h in t.base.intervals:
            lo.append(to_float(l))
            hi.append(to_float(h))
            hgt.append(t.height)
    order = np.argsort(np.array(lo), kind="stable")
    return np.array(lo)[order], np.array(hi)[order], np.array(hgt)[order]


def _collect_visits(pc: PerturbedCocycle, cfg: SurgeryConfig, xs: np.ndarray, n: int):
    """Per lane: sorted castle-base visit steps with V-flags, labels, heights.

    Detection runs against the full castle base (V-parts included); the region
    label is looked up only for visits outside V, where the table pieces cover.
    """
    co = pc.original
    alpha = _rotation_angle(co.base)
    blo, bhi, bheights = _castle_base_arrays(cfg.castle)
    plo, phi = pc.base_lo, pc.base_hi
    vlo, vhi = cfg.freq.V.float_breaks()
    all_lane, all_step, all_flag, all_label, all_height = [], [], [], [], []
    chunk = max(256, (1 << 22) // max(xs.size, 1))
    for s0 in range(0, n, chunk):
        s1 = min(s0 + chunk, n)
        ks = np.arange(s0, s1, dtype=float) * alpha
        pos = np.mod(xs[:, None] + ks[None, :], 1.0)
        bidx = np.clip(np.searchsorted(blo, pos, side="right") - 1, 0, blo.size - 1)
        in_b = (pos >= blo[bidx]) & (pos < bhi[bidx])
        lanes, offs = np.nonzero(in_b)
        if lanes.size == 0:
            continue
        hit_pos = pos[lanes, offs]
        hit_height = bheights[bidx[lanes, offs]]
        if vlo.size:
            vi = np.clip(np.searchsorted(vlo, hit_pos, side="right") - 1, 0, vlo.size - 1)
            hit_v = (hit_pos >= vlo[vi]) & (hit_pos < vhi[vi])
        else:
            hit_v = np.zeros(lanes.size, dtype=bool)
        if plo.size:
            pidx = np.clip(np.searchsorted(plo, hit_pos, side="right") - 1, 0, plo.size - 1)
            in_piece = (hit_pos >= plo[pidx]) & (hit_pos < phi[pidx])
            lab = np.where(in_piece, pc.base_label[pidx], -1)
        else:
            lab = np.full(lanes.size, -1)
        if np.any(~hit_v & (lab < 0)):
            k = int(np.argmax(~hit_v & (lab < 0)))
            raise DecompositionFailed(
                f"visit at {hit_pos[k]} outside V but not in any table piece")
        all_lane.append(lanes)
        all_step.append(s0 + offs)
        all_flag.append(hit_v)
        all_label.append(lab)
        all_height.append(hit_height)
    if not all_lane:
        return [[]] * xs.size, [[]] * xs.size, [[]] * xs.size, [[]] * xs.size
    lanes = np.concatenate(all_lane)
    steps = np.concatenate(all_step)
    flags = np.concatenate(all_flag)
    labs = np.concatenate(all_label)
    hgts = np.concatenate(all_height)
    order = np.lexsort((steps, lanes))
    lanes, steps, flags, labs, hgts = (v[order] for v in (lanes, steps, flags, labs, hgts))
    bounds = np.searchsorted(lanes, np.arange(xs.size + 1))
    visits = [steps[bounds[i]:bounds[i + 1]] for i in range(xs.size)]
    vflags = [flags[bounds[i]:bounds[i + 1]] for i in range(xs.size)]
    labels = [labs[bounds[i]:bounds[i + 1]] for i in range(xs.size)]
    heights = [hgts[bounds[i]:bounds[i + 1]] for i in range(xs.size)]
    return visits, vflags, labels, heights


def verify_growth(pc: PerturbedCocycle, cfg: SurgeryConfig, n: int,
                  grid: Optional[np.ndarray] = None) -> GrowthCertificate:
    """Two independent growth checks at horizon n over the given grid.

    (i) direct: chunked tree products of the blended cocycle;
    (ii) structural: castle-base visits along each orbit must be spaced in
    {N, N+1}; V-visits are counted against the frequency certificate; blocks
    based outside V contribute their certified table-product norms, everything
    else the measured sup norm.  The certificate passes only if both values
    stay under (3c + 2) eps and the structural bound dominates the direct one.
    """
    co = pc.original
    if n <= max(cfg.n0, (cfg.N + 1) / cfg.eps):
        raise CocycleLabError(f"horizon n = {n} must exceed max(n0, (N+1)/eps)")
    xs = co._grid_coords() if grid is None else np.asarray(grid, dtype=float)
    direct = log_norms_batch(pc.cocycle, xs, n) / n
    diffs = np.abs(np.diff(direct))
    margin = 4.0 * float(diffs.max()) if diffs.size else 0.0

    sup_tilde = math.log(max(co.sup_norm + pc.sup_distance, 1.0 + 1e-12))
    N = cfg.N
    visits, vflags, labels, heights = _collect_visits(pc, cfg, xs, n)
    structural = np.zeros(xs.size)
    vcounts = np.zeros(xs.size, dtype=int)
    p_hist: dict[int, int] = {}
    q_hist: dict[int, int] = {}
    r_list = np.zeros(xs.size, dtype=int)
    for lane in range(xs.size):
        vs = np.asarray(visits[lane])
        if vs.size == 0:
            raise DecompositionFailed(f"orbit of {xs[lane]} never hit the castle base")
        p = int(vs[0])
        if p > N + 1:
            raise DecompositionFailed(f"first base visit at {p} > N+1")
        q = n - int(vs[-1])
        if q > N + 1:
            raise DecompositionFailed(f"tail segment {q} > N+1")
        gaps = np.diff(vs)
        if gaps.size and not np.all((gaps == N) | (gaps == N + 1)):
            bad = int(gaps[(gaps != N) & (gaps != N + 1)][0])
            raise DecompositionFailed(
                f"base-visit gap {bad} not in {{{N}, {N + 1}}} at x={xs[lane]}")
        hts = np.asarray(heights[lane])[:-1]
        if gaps.size and not np.array_equal(hts, gaps):
            raise DecompositionFailed("tower height does not match visit gap")
        fl = np.asarray(vflags[lane])[:-1]
        labs = np.asarray(labels[lane])[:-1]
        contrib = np.where(fl, gaps * sup_tilde,
                           pc.block_logs[np.maximum(labs, 0)] if labs.size else 0.0)
        structural[lane] = ((p + q) * sup_tilde + float(contrib.sum())) / n
        vcounts[lane] = int(fl.sum())
        r_list[lane] = vs.size - 1
        p_hist[p] = p_hist.get(p, 0) + 1
        q_hist[q] = q_hist.get(q, 0) + 1

    freq_cap = cfg.eps / (N + 1)
    freq_max = float((vcounts / n).max())
    dominance = bool(np.all(structural + 1e-9 >= direct))
    bound = cfg.growth_bound
    passed = bool(
        (direct.max() + margin < bound)
        and (structural.max() < bound)
        and (freq_max < freq_cap)
        and dominance
    )
    return GrowthCertificate(
        n=n,
        grid_size=xs.size,
        max_direct=float(direct.max()),
        margin=margin,
        structural_max=float(structural.max()),
        bound=bound,
        passed=passed,
        visit_freq_max=freq_max,
        visit_freq_cap=freq_cap,
        dominance_ok=dominance,
        decomposition={
            "p": {str(k): v for k, v in sorted(p_hist.items())},
            "q": {str(k): v for k, v in sorted(q_hist.items())},
            "r_min": int(r_list.min()),
            "r_max": int(r_list.max()),
        },
    )


def run_surgery(co: Cocycle, eps: float, *, verify_grid: Optional[np.ndarray] = None,
                horizon: Optional[int] = None, force: bool = False):
    """Full pipeline: config, assembly, growth certificate.

    Returns (config, perturbed cocycle, certificate).  The default horizon is
    the smallest valid one, max(n0, (N+1)/eps) + 1.
    """
    cfg = build_config(co, eps, force=force)
    pc = assemble_perturbation(co, cfg)
    n = horizon if horizon is not None else int(max(cfg.n0, (cfg.N + 1) / cfg.eps)) + 1
    cert = verify_growth(pc, cfg, n, grid=verify_grid)
    return cfg, pc, cert
