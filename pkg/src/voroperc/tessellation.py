"""Voronoi tessellation of a marked point set, probed at finite resolution.

Cells are never constructed as geometric regions.  A quasi-uniform probe
cloud discretizes the window; each probe records its three nearest nuclei,
which is enough to (a) bucket probes into cells, (b) seed equidistance
witnesses for the adjacency graph, and (c) measure wall margins.  Witness
refinement runs a golden-section search along the geodesic from the seed
toward the farther nucleus of the pair; along that geodesic the distance
difference d_i - d_j is monotone (d_j decreases exactly linearly while d_i
is 1-Lipschitz), so |d_i - d_j| is unimodal and the search converges to the
bisector crossing.

Estimators built on top: pairwise touching / D-wall counts of the cells
meeting a fixed ball, the distribution of how many cells meet that ball, and
the packing-bound escape check for the cell of an inserted origin nucleus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .pointprocess import MarkedPointSet, sample_poisson
from .statutil import wilson_interval
from .vptree import LandmarkIndex, VPTree

__all__ = [
    "Tessellation",
    "Witness",
    "AdjacencyGraph",
    "TouchingReport",
    "TouchingSummary",
    "CellCountDistribution",
    "EscapeCheck",
    "Assignment",
    "build_tessellation",
    "assign",
    "build_adjacency",
    "touching_probe",
    "cell_count_probe",
    "graph_voronoi",
    "build_graph_adjacency",
    "escape_bound",
    "escape_radius",
    "escape_bound_check",
    "typical_cell_radius",
]

RHO_PROBE_DEFAULT = 64.0
TIE_GAP = 1e-12
REFINE_STEPS_DEFAULT = 48
MAX_PROBES = 5_000_000
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def typical_cell_radius(space, lam):
    """Radius whose ball holds the expected volume 1/lam of one cell."""
    return space.ball_volume_inverse(1.0 / lam)


# ---------------------------------------------------------------------------
# tessellation build

@dataclass
class Tessellation:
    points: MarkedPointSet
    probes: np.ndarray            # (P, point_dim)
    owner: np.ndarray             # (P,) nearest nucleus index
    second: np.ndarray            # (P,) runner-up nucleus index (-1 if none)
    d1: np.ndarray                # distances to owner
    d2: np.ndarray                # distances to runner-up (inf if none)
    d3: np.ndarray                # third-nearest distance (inf if none)
    probe_spacing: float
    interior_radius: float
    rho_probe: float
    index: VPTree = field(repr=False)
    batch_index: LandmarkIndex = field(repr=False)
    _cell_lists: list | None = field(default=None, repr=False)

    @property
    def space(self):
        return self.points.space

    @property
    def n_cells(self):
        return len(self.points)

    def cell_probe_ids(self, i):
        if self._cell_lists is None:
            order = np.argsort(self.owner, kind="stable")
            bounds = np.searchsorted(self.owner[order], np.arange(self.n_cells + 1))
            self._cell_lists = [
                order[bounds[k] : bounds[k + 1]] for k in range(self.n_cells)
            ]
        return self._cell_lists[i]

    def cell_max_probe_dist(self):
        """Max origin-distance of each cell's probes; -inf for probe-less cells."""
        r = self.space.distance_to_origin(self.probes)
        out = np.full(self.n_cells, -np.inf)
        np.maximum.at(out, self.owner, r)
        return out

    def cell_min_reach(self):
        """Smallest origin-distance seen per cell: nucleus or any of its probes."""
        out = np.asarray(self.points.origin_distances(), dtype=float).copy()
        r = self.space.distance_to_origin(self.probes)
        np.minimum.at(out, self.owner, r)
        return out

    def cells_meeting_ball(self, R):
        """Cells whose nucleus or probes reach B_R(o) (probe-resolution test)."""
        return np.flatnonzero(self.cell_min_reach() <= R)

    def boundary_cells(self):
        """Cells whose probes reach within 2 spacings of the window boundary."""
        cut = self.points.window_radius - 2.0 * self.probe_spacing
        return np.flatnonzero(self.cell_max_probe_dist() > cut)

    def to_snapshot(self) -> dict:
        sizes = np.bincount(self.owner, minlength=self.n_cells)
        return {
            "backend": self.points.backend,
            "lambda": self.points.intensity,
            "window": self.points.window_radius,
            "seed": self.points.seed_record,
            "n_nuclei": self.n_cells,
            "n_probes": int(len(self.probes)),
            "probe_spacing": self.probe_spacing,
            "interior_radius": self.interior_radius,
            "nonempty_cells": int(np.count_nonzero(sizes)),
            "owner_counts": sizes.tolist(),
        }


def build_tessellation(space, mps, rng, rho_probe=RHO_PROBE_DEFAULT, interior_margin=None):
    """Probe the window of a continuum realization at density rho_probe per cell.

    interior_margin defaults to twice the 0.999-confidence escape radius; the
    trusted region is the window shrunk by that margin (floored at 0 when the
    packing bound cannot certify the requested window).
    """
    if space.is_graph:
        raise ValueError("graph backends tessellate via graph_voronoi")
    n = len(mps)
    if n == 0:
        raise ValueError("empty nucleus set")
    lam = mps.intensity
    window = mps.window_radius
    n_probes = int(math.ceil(rho_probe * lam * space.ball_volume(window)))
    if n_probes > MAX_PROBES:
        raise ValueError(
            "probe budget %d exceeds %d; shrink the window or density"
            % (n_probes, MAX_PROBES)
        )
    n_probes = max(n_probes, 16)
    pitch = (1.0 / (rho_probe * lam)) ** (1.0 / space.dimension)
    # spacing is the cloud's covering pitch (>= the density pitch); the
    # boundary-discard cut and the 2*spacing neighbor scale both key off it
    probes, spacing = space.probe_cloud(window, rng, n_probes, pitch=pitch)

    n_probes = len(probes)  # stratified clouds round per ring
    batch = LandmarkIndex(mps.nuclei, space)
    k = min(3, n)
    d, idx = batch.query(probes, k=k)
    owner = idx[:, 0]
    second = idx[:, 1] if k >= 2 else np.full(n_probes, -1, dtype=np.int64)
    d1 = d[:, 0]
    d2 = d[:, 1] if k >= 2 else np.full(n_probes, np.inf)
    d3 = d[:, 2] if k >= 3 else np.full(n_probes, np.inf)

    if interior_margin is None:
        r_esc = escape_radius(space, lam, 0.999)
        interior_margin = 2.0 * r_esc if math.isfinite(r_esc) else math.inf
    interior = max(window - interior_margin, 0.0)

    return Tessellation(
        points=mps,
        probes=probes,
        owner=owner,
        second=second,
        d1=d1,
        d2=d2,
        d3=d3,
        probe_spacing=spacing,
        interior_radius=interior,
        rho_probe=float(rho_probe),
        index=VPTree(mps.nuclei, space),
        batch_index=batch,
    )


@dataclass(frozen=True)
class Assignment:
    cell: int
    nearest: float
    runner_up: float
    tie: bool


def assign(space, tess, x) -> Assignment:
    """Cell of a single point, via the vantage-point index.

    Ties (runner-up within 1e-12 of the nearest) are flagged, not broken.
    """
    if tess.n_cells == 0:
        raise ValueError("no nuclei to assign to")
    if tess.n_cells == 1:
        d = float(space.distance(np.asarray(x, dtype=float), tess.points.nuclei[0]))
        return Assignment(cell=0, nearest=d, runner_up=math.inf, tie=False)
    d, i = tess.index.query(np.asarray(x, dtype=float), k=2)
    return Assignment(
        cell=int(i[0]),
        nearest=float(d[0]),
        runner_up=float(d[1]),
        tie=bool(d[1] - d[0] < TIE_GAP),
    )


# ---------------------------------------------------------------------------
# adjacency by refined equidistance witnesses

@dataclass(frozen=True)
class Witness:
    location: np.ndarray
    pair: tuple
    equidistance_gap: float
    margin: float
    # True when a second non-pair nucleus is also equidistant within eta:
    # four or more cells co-circular at the witness (three cells meeting at
    # a generic vertex are not degenerate)
    degenerate: bool = False


@dataclass
class AdjacencyGraph:
    n_cells: int
    witnesses: dict
    eta_eq: float
    degenerate_ties: int = 0
    root: int | None = None
    _nbrs: list | None = field(default=None, repr=False)

    @property
    def edges(self):
        return sorted(self.witnesses.keys())

    def has_edge(self, i, j):
        return (min(i, j), max(i, j)) in self.witnesses

    def witness(self, i, j):
        return self.witnesses[(min(i, j), max(i, j))]

    def neighbors(self, i):
        if self._nbrs is None:
            nbrs = [[] for _ in range(self.n_cells)]
            for a, b in self.witnesses:
                nbrs[a].append(b)
                nbrs[b].append(a)
            self._nbrs = [np.array(sorted(v), dtype=np.int64) for v in nbrs]
        return self._nbrs[i]

    def degree(self, i):
        return len(self.neighbors(i))


def _default_eta(space, lam):
    # 1e-6 of the expected cell diameter
    return 1e-6 * 2.0 * typical_cell_radius(space, lam)


def _pair_distances(space, P, A, B):
    """Rowwise distances d(P[k], A[k]) and d(P[k], B[k])."""
    return (
        np.asarray(space.distance(P, A), dtype=float),
        np.asarray(space.distance(P, B), dtype=float),
    )


def _refine_witnesses(space, seeds, near_pts, far_pts, steps):
    """Golden-section search for the bisector crossing along seed -> far nucleus.

    |d_near - d_far| is unimodal on the segment (see module docstring), so the
    search brackets the unique crossing.  Returns refined locations.
    """
    k = len(seeds)
    a = np.zeros(k)
    b = np.ones(k)

    def gap_at(t):
        pts = space.geodesic_point(seeds, far_pts, t)
        dn, df = _pair_distances(space, pts, near_pts, far_pts)
        return np.abs(dn - df)

    c = b - _INV_PHI * (b - a)
    d_ = a + _INV_PHI * (b - a)
    fc = gap_at(c)
    fd = gap_at(d_)
    for _ in range(steps):
        left = fc < fd
        b = np.where(left, d_, b)
        a = np.where(left, a, c)
        c = b - _INV_PHI * (b - a)
        d_ = a + _INV_PHI * (b - a)
        fc = gap_at(c)
        fd = gap_at(d_)
    return space.geodesic_point(seeds, far_pts, 0.5 * (a + b))


def _deepest_hole(tess):
    """Upper bound on the largest nucleus-free ball radius in the window:
    every hole center has a probe within the covering pitch."""
    return float(tess.d1.max()) + 2.0 * tess.probe_spacing


def _candidate_pairs(tess):
    """All nucleus pairs that could share a wall, united with probe votes.

    A wall point x is equidistant to its pair and farther from every other
    nucleus, so B(x, d_pair(x)) is nucleus-free; the probe within the
    covering pitch of x then sees both pair nuclei inside its near set
    {k: d(probe, y_k) <= d1 + 2 spacing}.  Emitting every pair inside every
    probe's near set is therefore complete.  Near sets are local, which
    keeps the candidate count flat even when one deep boundary hole would
    blow up a global range rule."""
    n = tess.n_cells
    if n < 2:
        return np.empty((0, 2), dtype=np.int64)
    cut = (tess.d1 + 2.0 * tess.probe_spacing) * (1.0 + 1e-12) + 1e-12
    P = len(tess.probes)
    k = min(n, 4)
    d, idx = tess.batch_index.query(tess.probes, k=k)
    while k < n and bool(np.any(d[:, -1] < cut)):
        grow = np.flatnonzero(d[:, -1] < cut)
        k = min(n, 2 * k)
        dg, ig = tess.batch_index.query(tess.probes[grow], k=k)
        dn = np.full((P, k), np.inf)
        ixn = np.full((P, k), -1, dtype=np.int64)
        dn[:, : d.shape[1]] = d
        ixn[:, : idx.shape[1]] = idx
        dn[grow] = dg
        ixn[grow] = ig
        d, idx = dn, ixn
    # distances ascend per row, so the near set is a column prefix
    t = (d <= cut[:, None]).sum(axis=1)
    chunks = []
    for size in range(2, int(t.max()) + 1 if t.size else 2):
        rows = np.flatnonzero(t == size)
        if rows.size == 0:
            continue
        ci, cj = np.triu_indices(size, 1)
        chunks.append(
            np.column_stack(
                [idx[rows][:, ci].ravel(), idx[rows][:, cj].ravel()]
            )
        )
    pairs = (
        np.sort(np.concatenate(chunks), axis=1)
        if chunks
        else np.empty((0, 2), dtype=np.int64)
    )
    voted = np.flatnonzero(tess.second >= 0)
    if voted.size:
        vp = np.sort(
            np.column_stack([tess.owner[voted], tess.second[voted]]), axis=1
        )
        pairs = np.concatenate([pairs, vp]) if pairs.size else vp
    return np.unique(pairs, axis=0) if pairs.size else pairs.reshape(0, 2)


def _other_margins(space, tess, pts, idx_i, idx_j, di, dj):
    """(margin, margin2): nearest and second-nearest non-pair nucleus
    distance minus the pair distance, rowwise at pts."""
    dpair = np.maximum(di, dj)
    n = tess.n_cells
    if n < 3:
        inf = np.full(len(dpair), np.inf)
        return inf, inf
    k = min(4, n)
    dd, ii = tess.batch_index.query(pts, k=k)
    others = np.where(
        (ii == idx_i[:, None]) | (ii == idx_j[:, None]), np.inf, dd
    )
    others.sort(axis=1)
    return others[:, 0] - dpair, others[:, 1] - dpair


def _bisector_span(space, yi, yj, dij, cap):
    """Arclength along the bisector where the pair distance reaches cap.

    The pair distance D(s) is even and increasing in |s| (D(0) = d_ij / 2),
    so the root brackets between 0 and cap + d_ij and bisection converges.
    """
    lo = np.zeros(len(dij))
    hi = cap + dij
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        d = np.asarray(space.distance(space.bisector_point(yi, yj, mid), yi))
        too_far = d > cap
        hi = np.where(too_far, mid, hi)
        lo = np.where(too_far, lo, mid)
    return hi


def _bisector_witnesses(space, tess, pairs, refine_steps):
    """Max-margin witness per pair by scanning the bisector geodesic.

    Walls are geodesically convex, hence intervals of the bisector line.  A
    wall point is the center of a nucleus-free ball of its pair distance, so
    the deepest probe hole caps how far out a wall can sit; within that span
    every local maximum of the scanned margin is golden-polished (short walls
    hide between samples of a single coarse argmax).  Out-of-window points
    are penalized away: cells only exist inside the sampled window.
    """
    nuclei = tess.points.nuclei
    window = tess.points.window_radius
    yi0 = nuclei[pairs[:, 0]]
    yj0 = nuclei[pairs[:, 1]]
    dij = np.asarray(space.distance(yi0, yj0), dtype=float)
    hole = _deepest_hole(tess)
    keep = dij < 2.0 * hole  # else no point is equidistant and nucleus-free
    pairs = pairs[keep]
    m = len(pairs)
    if m == 0:
        empty = np.empty(0)
        return (
            np.empty((0, 2), dtype=np.int64),
            np.empty((0, nuclei.shape[1])),
            empty, empty, empty, empty,
        )
    yi = yi0[keep]
    yj = yj0[keep]
    half_span = _bisector_span(space, yi, yj, dij[keep], hole)

    def margin_key(flat_pts, ri, rj, sv):
        di = np.asarray(space.distance(flat_pts, nuclei[ri]))
        dj = np.asarray(space.distance(flat_pts, nuclei[rj]))
        mg, _ = _other_margins(space, tess, flat_pts, ri, rj, di, dj)
        mg = np.where(np.isfinite(mg), mg, -np.abs(sv))
        r_o = np.asarray(space.distance_to_origin(flat_pts))
        return np.where(r_o <= window, mg, -1.0 - (r_o - window))

    n_scan = 65
    s = half_span[:, None] * np.linspace(-1.0, 1.0, n_scan)[None, :]
    pts = space.bisector_point(yi, yj, s)
    key = margin_key(
        pts.reshape(m * n_scan, -1),
        np.repeat(pairs[:, 0], n_scan),
        np.repeat(pairs[:, 1], n_scan),
        s.ravel(),
    ).reshape(m, n_scan)

    # all strict-or-plateau local maxima of the sampled margin; margin is
    # 2-Lipschitz in s, so maxima sampled below -2 step cannot climb back to
    # acceptance anywhere in their bracket and are dropped unpolished
    pad = np.full((m, 1), -np.inf)
    left = np.concatenate([pad, key[:, :-1]], axis=1)
    right = np.concatenate([key[:, 1:], pad], axis=1)
    scan_step = (2.0 * half_span / (n_scan - 1))[:, None]
    viable = key >= -2.0 * scan_step - 1e-9
    rows_idx, cols = np.nonzero((key >= left) & (key >= right) & viable)

    step = (2.0 * half_span / (n_scan - 1))[rows_idx]
    ri = pairs[rows_idx, 0]
    rj = pairs[rows_idx, 1]
    byi = yi[rows_idx]
    byj = yj[rows_idx]
    a = s[rows_idx, cols] - step
    b = s[rows_idx, cols] + step

    def key_at(sv):
        return margin_key(space.bisector_point(byi, byj, sv), ri, rj, sv)

    c = b - _INV_PHI * (b - a)
    d_ = a + _INV_PHI * (b - a)
    fc = key_at(c)
    fd = key_at(d_)
    for _ in range(refine_steps):
        go_left = fc > fd
        b = np.where(go_left, d_, b)
        a = np.where(go_left, a, c)
        c = b - _INV_PHI * (b - a)
        d_ = a + _INV_PHI * (b - a)
        fc = key_at(c)
        fd = key_at(d_)
    loc = space.bisector_point(byi, byj, 0.5 * (a + b))
    di = np.asarray(space.distance(loc, byi))
    dj = np.asarray(space.distance(loc, byj))
    margin, margin2 = _other_margins(space, tess, loc, ri, rj, di, dj)
    gap = np.abs(di - dj)
    in_window = np.asarray(space.distance_to_origin(loc)) <= window * (1 + 1e-9)
    margin = np.where(in_window, margin, -np.inf)
    # margin is 2-Lipschitz along the bisector; the polish brackets its max
    # to ~phi^-steps of the scan step
    slack = 8.0 * _INV_PHI**refine_steps * step + 1e-12 * (1.0 + np.maximum(di, dj))
    return np.column_stack([ri, rj]), loc, gap, margin, margin2, slack


def _refine_bridge(space, A, B, near, far, iters=40):
    """Bisect the geodesic between probes of opposite cells to the
    d_near = d_far crossing.  The sign of d_near - d_far differs at the two
    endpoints by construction (each probe sits in its own cell), so the
    bisection always converges to a genuine crossing on the segment."""
    lo = np.zeros(len(A))
    hi = np.ones(len(A))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        dn, df = _pair_distances(space, space.geodesic_point(A, B, mid), near, far)
        neg = dn < df
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    return space.geodesic_point(A, B, 0.5 * (lo + hi))


def _seed_zoo_witnesses(space, tess, pairs, refine_steps):
    """Witness rows for backends whose bisectors are not geodesic lines.

    Seeds per pair: the voting probe with the smallest equidistance gap, the
    voting probe with the largest d3 - d2 margin proxy, the nucleus midpoint,
    and from each pair cell the probe dipping closest to the opposite nucleus
    (no runner-up vote required, which rescues walls whose slab collects no
    (i, j) votes).  Each seed is refined along seed -> farther nucleus to the
    bisector crossing.  A final bridge family bisects the segment between
    the two dip probes themselves: when that segment steps directly between
    the cells its crossing lies on the shared wall, which catches sliver
    walls that every nucleus-directed refinement overshoots.  Still
    missable: walls far from every probe of both cells; the planar backends
    avoid this entirely via _bisector_witnesses.
    """
    n = tess.n_cells
    nuclei = tess.points.nuclei
    voted = np.flatnonzero(tess.second >= 0)
    seeds = []
    seed_near = []
    seed_far = []
    seed_pairs = []
    if voted.size:
        pair_i = np.minimum(tess.owner[voted], tess.second[voted])
        pair_j = np.maximum(tess.owner[voted], tess.second[voted])
        gaps = tess.d2[voted] - tess.d1[voted]
        proxy = tess.d3[voted] - tess.d2[voted]
        keys = pair_i * n + pair_j
        for rank_by in (gaps, -proxy):
            order = np.lexsort((rank_by, keys))
            first = np.ones(order.size, dtype=bool)
            first[1:] = keys[order][1:] != keys[order][:-1]
            chosen = voted[order[first]]
            seeds.append(tess.probes[chosen])
            # the seed sits in cell owner: near = owner, far = second
            seed_near.append(nuclei[tess.owner[chosen]])
            seed_far.append(nuclei[tess.second[chosen]])
            seed_pairs.append(
                np.column_stack(
                    [
                        np.minimum(tess.owner[chosen], tess.second[chosen]),
                        np.maximum(tess.owner[chosen], tess.second[chosen]),
                    ]
                )
            )
    if pairs.size:
        mids = space.geodesic_point(nuclei[pairs[:, 0]], nuclei[pairs[:, 1]], 0.5)
        seeds.append(mids)
        seed_near.append(nuclei[pairs[:, 0]])
        seed_far.append(nuclei[pairs[:, 1]])
        seed_pairs.append(pairs)
        m = len(pairs)
        # two probe picks per side: smallest d_opp - d1 (deepest dip toward
        # the other cell) and smallest plain d_opp (closest approach; the dip
        # score skews outward on boundary cells where d1 itself is large)
        dip = np.full((2, m), -1, dtype=np.int64)
        app = np.full((2, m), -1, dtype=np.int64)
        for side in (0, 1):
            cells = pairs[:, side]
            other = pairs[:, 1 - side]
            lists = [tess.cell_probe_ids(int(c)) for c in cells]
            sizes = np.array([p.size for p in lists])
            if sizes.sum() == 0:
                continue
            flat = np.concatenate(lists)
            row = np.repeat(np.arange(m), sizes)
            d_opp = np.asarray(space.distance(tess.probes[flat], nuclei[other[row]]))
            score = d_opp - tess.d1[flat]
            for pick, rank_by in ((dip, score), (app, d_opp)):
                order = np.lexsort((rank_by, row))
                first = np.ones(order.size, dtype=bool)
                first[1:] = row[order][1:] != row[order][:-1]
                sel = order[first]
                pick[side, row[sel]] = flat[sel]
            rows = np.flatnonzero(dip[side] >= 0)
            chosen = dip[side, rows]
            seeds.append(tess.probes[chosen])
            seed_near.append(nuclei[cells[rows]])
            seed_far.append(nuclei[other[rows]])
            seed_pairs.append(pairs[rows])
        bridges = [np.flatnonzero((dip[0] >= 0) & (dip[1] >= 0))]
        distinct = (app[0] != dip[0]) | (app[1] != dip[1])
        bridges.append(np.flatnonzero((app[0] >= 0) & (app[1] >= 0) & distinct))
    if not seeds:
        empty = np.empty(0)
        return (
            np.empty((0, 2), dtype=np.int64),
            np.empty((0, nuclei.shape[1])),
            empty,
            empty,
            empty,
            empty,
        )
    seeds = np.concatenate(seeds)
    seed_near = np.concatenate(seed_near)
    seed_far = np.concatenate(seed_far)
    seed_pairs = np.concatenate(seed_pairs)

    refined = _refine_witnesses(space, seeds, seed_near, seed_far, refine_steps)
    # the refinement brackets the bisector crossing to ~phi^-steps of the
    # segment length; witnesses at exactly-degenerate points (margin == 0)
    # land that far off, so the acceptance slack must match the resolution
    seg = np.asarray(space.distance(seeds, seed_far), dtype=float)
    slack = 4.0 * _INV_PHI**refine_steps * seg

    if pairs.size:
        for ends, rows_b in zip((dip, app), bridges):
            if rows_b.size == 0:
                continue
            A = tess.probes[ends[0, rows_b]]
            B = tess.probes[ends[1, rows_b]]
            near_b = nuclei[pairs[rows_b, 0]]
            far_b = nuclei[pairs[rows_b, 1]]
            refined = np.concatenate(
                [refined, _refine_bridge(space, A, B, near_b, far_b)]
            )
            seed_near = np.concatenate([seed_near, near_b])
            seed_far = np.concatenate([seed_far, far_b])
            seed_pairs = np.concatenate([seed_pairs, pairs[rows_b]])
            seg_b = np.asarray(space.distance(A, B), dtype=float)
            slack = np.concatenate([slack, 4.0 * 0.5**40 * seg_b])

    di, dj = _pair_distances(space, refined, seed_near, seed_far)
    gap = np.abs(di - dj)
    margin, margin2 = _other_margins(
        space, tess, refined, seed_pairs[:, 0], seed_pairs[:, 1], di, dj
    )
    slack = slack + 1e-12 * (1.0 + np.maximum(di, dj))
    return seed_pairs, refined, gap, margin, margin2, slack


def _probe_bridge_rescue(space, tess, pairs):
    """Last-chance witnesses for candidate pairs every seeded search missed.

    Collects all cross-cell probe pairs within twice the covering pitch,
    keeps the shortest few per unresolved cell pair, and bisects each
    segment to its pair-bisector crossing.  A segment stepping directly
    between the two cells puts its crossing on the shared wall (margin
    >= 0); segments tunneling through a wedge of a third cell land negative
    and fall to the standard acceptance filter.  Only walls that no probe
    pair within the pitch straddles remain missable, which is the cloud's
    own resolution floor.
    """
    n = tess.n_cells
    nuclei = tess.points.nuclei
    dim = nuclei.shape[1]
    empty = (
        np.empty((0, 2), dtype=np.int64),
        np.empty((0, dim)),
        np.empty(0),
        np.empty(0),
        np.empty(0),
        np.empty(0),
    )
    if len(pairs) == 0:
        return empty
    idx = LandmarkIndex.from_buckets(tess.probes, space, nuclei, tess.owner)
    pp = idx.pairs_within(2.0 * tess.probe_spacing)
    if pp.size == 0:
        return empty
    oa, ob = tess.owner[pp[:, 0]], tess.owner[pp[:, 1]]
    key = np.minimum(oa, ob) * n + np.maximum(oa, ob)
    want = pairs[:, 0] * n + pairs[:, 1]
    sel = np.flatnonzero(np.isin(key, want) & (oa != ob))
    if sel.size == 0:
        return empty
    pp, key = pp[sel], key[sel]
    d = np.asarray(space.distance(tess.probes[pp[:, 0]], tess.probes[pp[:, 1]]))
    order = np.lexsort((d, key))
    pp, key = pp[order], key[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    rank = np.arange(len(key)) - np.repeat(starts, np.diff(np.r_[starts, len(key)]))

    out = []
    resolved = np.zeros(0, dtype=np.int64)
    # cheap first round; wedge-heavy pairs only pay for more segments when
    # their shortest ones all land off-wall
    for lo_rank, hi_rank in ((0, 4), (4, 16)):
        live = (rank >= lo_rank) & (rank < hi_rank) & ~np.isin(key, resolved)
        rows = np.flatnonzero(live)
        if rows.size == 0:
            continue
        A = tess.probes[pp[rows, 0]]
        B = tess.probes[pp[rows, 1]]
        near = nuclei[tess.owner[pp[rows, 0]]]
        far = nuclei[tess.owner[pp[rows, 1]]]
        loc = _refine_bridge(space, A, B, near, far)
        di, dj = _pair_distances(space, loc, near, far)
        ci = tess.owner[pp[rows, 0]]
        cj = tess.owner[pp[rows, 1]]
        margin, margin2 = _other_margins(space, tess, loc, ci, cj, di, dj)
        gap = np.abs(di - dj)
        seg = np.asarray(space.distance(A, B), dtype=float)
        slack = 4.0 * 0.5**40 * seg + 1e-12 * (1.0 + np.maximum(di, dj))
        out.append(
            (
                np.column_stack([np.minimum(ci, cj), np.maximum(ci, cj)]),
                loc,
                gap,
                margin,
                margin2,
                slack,
            )
        )
        resolved = np.union1d(resolved, key[rows][margin >= -slack])
    if not out:
        return empty
    return tuple(
        np.concatenate([o[f] for o in out]) for f in range(6)
    )


def build_adjacency(space, tess, eta_eq=None, refine_steps=REFINE_STEPS_DEFAULT):
    """Adjacency graph: edge (i,j) iff a refined witness achieves
    equidistance gap <= eta_eq with nonnegative margin to every other
    nucleus (up to the refinement-resolution slack).

    Candidate pairs come from probe votes and nucleus k-nearest neighbors.
    On surfaces whose bisectors are geodesic lines the witness is the
    max-margin point of a scan-and-polish along the bisector; elsewhere a
    seed-and-refine fallback runs (see _seed_zoo_witnesses).  The kept
    witness per edge is the best-margin one, which doubles as the wall
    thickness certificate.  Degenerate co-circularity (a fourth cell within
    eta_eq at a passing witness) is flagged, never broken.
    """
    if len(tess.probes) == 0:
        raise ValueError("tessellation has no probes")
    n = tess.n_cells
    if eta_eq is None:
        eta_eq = _default_eta(space, tess.points.intensity)
    graph = AdjacencyGraph(
        n_cells=n,
        witnesses={},
        eta_eq=float(eta_eq),
        root=0 if tess.points.origin_inserted else None,
    )
    if n < 2:
        return graph

    def absorb(rows, loc, gap, margin, margin2, slack):
        ok = (gap <= eta_eq) & (margin >= -slack)
        for w in np.flatnonzero(ok):
            key = (int(rows[w, 0]), int(rows[w, 1]))
            wit = Witness(
                location=loc[w],
                pair=key,
                equidistance_gap=float(gap[w]),
                margin=float(margin[w]),
                degenerate=bool(margin2[w] <= eta_eq),
            )
            old = graph.witnesses.get(key)
            if old is None or wit.margin > old.margin:
                graph.witnesses[key] = wit

    cand = _candidate_pairs(tess)
    if space.has_line_bisectors:
        absorb(*_bisector_witnesses(space, tess, cand, refine_steps))
    else:
        absorb(*_seed_zoo_witnesses(space, tess, cand, refine_steps))
        # the seeded families can all overshoot a sliver wall; re-attack the
        # still-unresolved candidates through real probe-to-probe segments
        if cand.size:
            ck = cand[:, 0] * n + cand[:, 1]
            have = np.array(
                [i * n + j for i, j in graph.witnesses], dtype=np.int64
            )
            unresolved = cand[~np.isin(ck, have)]
            if unresolved.size:
                absorb(*_probe_bridge_rescue(space, tess, unresolved))
    graph.degenerate_ties = sum(w.degenerate for w in graph.witnesses.values())
    return graph


# ---------------------------------------------------------------------------
# touching / cell-count estimators

@dataclass(frozen=True)
class TouchingReport:
    intensity: float
    R: float
    D: float
    replica: int
    cells_meeting_ball: int
    pairs_total: int
    pairs_touching: int
    pairs_wall_D: int
    all_pairs_touch: bool
    discarded: bool


@dataclass(frozen=True)
class TouchingSummary:
    p_all_touch: float
    ci_lo: float
    ci_hi: float
    replicas_used: int
    discarded: int


def _replica_streams(rng, rep):
    base = rng.child(rep)
    return base.child(0), base.child(1)  # process, probes


def touching_probe(
    space,
    lam,
    R,
    D,
    replicas,
    rng,
    rho_probe=RHO_PROBE_DEFAULT,
    window_radius=None,
    window_factor=3.0,
):
    """Pairwise touching of the cells meeting B_R(o), with D-wall counts.

    The window defaults to R plus window_factor typical cell radii; replicas
    where a cell of interest reaches the window boundary (or a degenerate tie
    fires) are discarded and counted rather than silently truncated.  A pair
    counts as D-wall-touching when some witness has margin > 2D, the triangle
    inequality sufficient condition for B_D(witness) to stay inside the two
    cells.  Cells meeting the ball are detected at probe resolution.
    """
    if window_radius is None:
        window_radius = R + window_factor * typical_cell_radius(space, lam)
    reports = []
    hits = 0
    used = 0
    discarded = 0
    for rep in range(replicas):
        s_proc, s_probe = _replica_streams(rng, rep)
        mps = sample_poisson(space, lam, window_radius, s_proc)
        if len(mps) == 0:
            # no cells at all: vacuous truth, nothing meets the ball
            reports.append(
                TouchingReport(lam, R, D, rep, 0, 0, 0, 0, True, False)
            )
            used += 1
            hits += 1
            continue
        tess = build_tessellation(
            space, mps, s_probe, rho_probe=rho_probe, interior_margin=math.inf
        )
        meeting = tess.cells_meeting_ball(R)
        boundary = set(tess.boundary_cells().tolist())
        adj = build_adjacency(space, tess)
        discard = bool(boundary.intersection(meeting.tolist())) or adj.degenerate_ties > 0
        m = len(meeting)
        pairs_total = m * (m - 1) // 2
        touching = 0
        wall = 0
        for a in range(m):
            for b in range(a + 1, m):
                i, j = int(meeting[a]), int(meeting[b])
                if adj.has_edge(i, j):
                    touching += 1
                    if adj.witness(i, j).margin > 2.0 * D:
                        wall += 1
        all_touch = touching == pairs_total
        reports.append(
            TouchingReport(
                lam, R, D, rep, m, pairs_total, touching, wall, all_touch, discard
            )
        )
        if discard:
            discarded += 1
        else:
            used += 1
            if all_touch:
                hits += 1
    if used:
        p, lo, hi = wilson_interval(hits, used)
    else:
        p, lo, hi = math.nan, math.nan, math.nan
    return reports, TouchingSummary(p, lo, hi, used, discarded)


@dataclass(frozen=True)
class CellCountDistribution:
    intensity: float
    R: float
    counts: np.ndarray
    discarded: int

    def prob_at_least(self, n):
        used = len(self.counts)
        if used == 0:
            return math.nan, math.nan, math.nan
        k = int(np.count_nonzero(self.counts >= n))
        return wilson_interval(k, used)


def cell_count_probe(
    space, lam, R, replicas, rng, rho_probe=RHO_PROBE_DEFAULT, window_radius=None,
    window_factor=3.0,
):
    """Distribution of #{cells meeting B_R(o)} over replicas."""
    if window_radius is None:
        window_radius = R + window_factor * typical_cell_radius(space, lam)
    counts = []
    discarded = 0
    for rep in range(replicas):
        s_proc, s_probe = _replica_streams(rng, rep)
        mps = sample_poisson(space, lam, window_radius, s_proc)
        if len(mps) == 0:
            counts.append(0)
            continue
        tess = build_tessellation(
            space, mps, s_probe, rho_probe=rho_probe, interior_margin=math.inf
        )
        meeting = tess.cells_meeting_ball(R)
        if set(tess.boundary_cells().tolist()).intersection(meeting.tolist()):
            discarded += 1
            continue
        counts.append(len(meeting))
    return CellCountDistribution(lam, R, np.asarray(counts, dtype=np.int64), discarded)


# ---------------------------------------------------------------------------
# graph Voronoi

@dataclass(frozen=True)
class GraphVoronoi:
    owner: np.ndarray        # nucleus vertex id per vertex, -1 if unreachable
    dist: np.ndarray         # hops to the owning nucleus, -1 if unreachable
    unassigned: np.ndarray   # vertex ids with no nucleus in their component


def graph_voronoi(world, nuclei):
    """Multi-source BFS cells; equal-distance ties go to the smallest nucleus id."""
    nuclei = np.unique(np.asarray(nuclei, dtype=np.int64))
    if nuclei.size == 0:
        raise ValueError("nucleus set is empty")
    owner = np.full(world.n_vertices, -1, dtype=np.int64)
    dist = np.full(world.n_vertices, -1, dtype=np.int64)
    owner[nuclei] = nuclei
    dist[nuclei] = 0
    frontier = nuclei
    hop = 0
    while frontier.size:
        hop += 1
        counts = world.indptr[frontier + 1] - world.indptr[frontier]
        starts = world.indptr[frontier]
        flat = np.repeat(starts, counts) + (
            np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        )
        nbr = world.indices[flat]
        src_owner = np.repeat(owner[frontier], counts)
        fresh = dist[nbr] < 0
        nbr, src_owner = nbr[fresh], src_owner[fresh]
        if nbr.size == 0:
            break
        # smallest owner wins simultaneous arrivals
        order = np.lexsort((src_owner, nbr))
        nbr, src_owner = nbr[order], src_owner[order]
        first = np.ones(nbr.size, dtype=bool)
        first[1:] = nbr[1:] != nbr[:-1]
        nbr, src_owner = nbr[first], src_owner[first]
        owner[nbr] = src_owner
        dist[nbr] = hop
        frontier = nbr
    return GraphVoronoi(owner=owner, dist=dist, unassigned=np.flatnonzero(owner < 0))


def build_graph_adjacency(world, owner):
    """Unordered nucleus-id pairs whose cells share a graph edge."""
    src = np.repeat(np.arange(world.n_vertices), np.diff(world.indptr))
    dst = world.indices
    a, b = owner[src], owner[dst]
    ok = (a >= 0) & (b >= 0) & (a != b)
    pairs = np.sort(np.column_stack([a[ok], b[ok]]), axis=1)
    if pairs.size == 0:
        return set()
    return set(map(tuple, np.unique(pairs, axis=0)))


# ---------------------------------------------------------------------------
# escape bound

def escape_bound(space, lam, r):
    """Packing bound on P(cell of an origin nucleus escapes B_r(o)):
    vol(B_{3r/2}) / vol(B_{r/4}) * exp(-lam vol(B_{r/2}))."""
    ratio = space.ball_volume(1.5 * r) / space.ball_volume(0.25 * r)
    return ratio * math.exp(-lam * space.ball_volume(0.5 * r))


def escape_radius(space, lam, confidence=0.999, r_cap=None):
    """Smallest radius whose escape bound drops below 1 - confidence."""
    target = 1.0 - confidence
    r_typ = typical_cell_radius(space, lam)
    if r_cap is None:
        r_cap = 64.0 * r_typ + 64.0
    lo, hi = 1e-6, r_typ
    while escape_bound(space, lam, hi) > target:
        hi *= 2.0
        if hi > r_cap:
            return math.inf
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if escape_bound(space, lam, mid) > target:
            lo = mid
        else:
            hi = mid
    return hi


@dataclass(frozen=True)
class EscapeCheck:
    empirical: float
    bound: float
    vacuous: bool
    replicas: int
    escapes: int


def escape_bound_check(space, lam, r, replicas, rng, sphere_points=512):
    """Empirical escape probability of the origin cell versus the bound.

    The origin is inserted as an extra nucleus; its (star-shaped) cell escapes
    B_r(o) iff it owns a point of the sphere of radius r, tested on a
    deterministic sphere grid.  Only nuclei within 2r can own sphere points,
    so sampling is restricted to that window.  Grid resolution bounds the
    detection; the check is one-sided (empirical <= bound).
    """
    bound = escape_bound(space, lam, r)
    sphere = space.sphere_grid(r, sphere_points)
    escapes = 0
    for rep in range(replicas):
        mps = sample_poisson(space, lam, 2.0 * r, rng.child(rep))
        if len(mps) == 0:
            escapes += 1
            continue
        dmin = space.cross_distance(sphere, mps.nuclei).min(axis=1)
        if bool(np.any(dmin >= r)):
            escapes += 1
    return EscapeCheck(
        empirical=escapes / replicas,
        bound=bound,
        vacuous=bound >= 1.0,
        replicas=replicas,
        escapes=escapes,
    )
