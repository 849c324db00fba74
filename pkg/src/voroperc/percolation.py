"""Bernoulli site percolation on the Voronoi cells.

Each cell inherits its nucleus label; the black region at survival level p
is the union of cells whose label is at most p.  One realization therefore
couples every p simultaneously: black sets are nested along the label
order, and every per-realization statistic below is monotone in p by
construction, not by luck.

Clusters come from two independent routes.  The production route runs
union-find over the black-induced subgraph of the witness adjacency graph.
The oracle route never looks at that graph: it flood-fills the probe cloud,
joining probes within twice the covering pitch whenever the joining step
stays inside the black region, and projects the components back to cells.
Agreement of the two partitions is the main correctness check for the whole
tessellation/adjacency stack.

Estimators: the two-point connection frequency tau(x, y); a finite-window
threshold proxy (left-right crossing of an inscribed square in the flat
plane, annulus one-arm elsewhere) bisected on a p-grid with a bootstrap
interval; and an annulus-multiplicity / long-range-tau pair that probes
whether the giant cluster is unique at a given p.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import Euclidean
from .pointprocess import sample_poisson
from .statutil import bootstrap_ci, wilson_interval
from .tessellation import (
    assign,
    build_adjacency,
    build_tessellation,
    escape_radius,
)
from .unionfind import UnionFind
from .vptree import LandmarkIndex

__all__ = [
    "PercolationParams",
    "ClusterReport",
    "OraclePartition",
    "TwoPointEstimate",
    "ThresholdEstimate",
    "UniquenessReport",
    "color",
    "clusters",
    "oracle_clusters",
    "two_point",
    "psd_kernel_check",
    "estimate_pc",
    "uniqueness_proxy",
]

LOW_RESOLUTION_PROBES = 8
PSD_TOLERANCE = -1e-9


@dataclass(frozen=True)
class PercolationParams:
    intensity: float
    survival: float
    window_radius: float

    def __post_init__(self):
        if self.intensity <= 0:
            raise ValueError("intensity must be positive")
        if not 0.0 <= self.survival <= 1.0:
            raise ValueError("survival probability must lie in [0, 1]")
        if self.window_radius <= 0:
            raise ValueError("window radius must be positive")


def color(tess, p):
    """Black cell ids at survival level p: cells whose label is <= p.

    Deterministic given the marked point set; thresholding the shared labels
    is what couples all survival levels on one realization.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("survival probability must lie in [0, 1]")
    return np.flatnonzero(tess.points.labels <= p)


def _validated_black(n_cells, black):
    b = np.unique(np.asarray(list(black) if isinstance(black, set) else black))
    if b.size == 0:
        return b.astype(np.int64)
    if b.dtype.kind not in "iu":
        if not np.all(b == np.floor(b)):
            raise ValueError("black cell ids must be integers")
        b = b.astype(np.int64)
    if b.min() < 0 or b.max() >= n_cells:
        raise ValueError(
            "unknown cell id %d (valid range 0..%d)"
            % (b.min() if b.min() < 0 else b.max(), n_cells - 1)
        )
    return b.astype(np.int64)


# ---------------------------------------------------------------------------
# clusters: union-find over the black subgraph

@dataclass
class ClusterReport:
    """Connected components of the black-induced adjacency subgraph.

    labels[i] is the cluster id of black cell i (labels densify in ascending
    cell-id order, so reports are reproducible) and -1 on white cells.
    extents are metric diameters of the member nuclei, present only when the
    point set was supplied.
    """

    black_cells: np.ndarray
    labels: np.ndarray
    n_clusters: int
    sizes: np.ndarray
    extents: np.ndarray | None = None
    flags: dict = field(default_factory=dict)

    def cluster_of(self, i):
        return int(self.labels[i])

    def same_cluster(self, i, j):
        return self.labels[i] >= 0 and self.labels[i] == self.labels[j]

    def members(self, c):
        return np.flatnonzero(self.labels == c)


def _diameter(space, pts):
    m = len(pts)
    if m <= 1:
        return 0.0
    if m <= 256:
        return float(space.cross_distance(pts, pts).max())
    # two-sweep farthest point: a lower bound on the diameter (within a
    # factor 2 in any metric space, near-exact in practice)
    a = int(np.argmax(space.cross_distance(pts[:1], pts)[0]))
    return float(space.cross_distance(pts[a : a + 1], pts)[0].max())


def clusters(adj, black, mps=None) -> ClusterReport:
    """Union-find components of the black cells under the adjacency edges.

    Pass the marked point set to also get metric extents per cluster.
    """
    n = adj.n_cells
    b = _validated_black(n, black)
    mask = np.zeros(n, dtype=bool)
    mask[b] = True
    uf = UnionFind(n)
    for i, j in adj.edges:  # sorted pairs: deterministic merge order
        if mask[i] and mask[j]:
            uf.union(i, j)
    labels = np.full(n, -1, dtype=np.int64)
    seen = {}
    for i in b:
        r = uf.find(int(i))
        if r not in seen:
            seen[r] = len(seen)
        labels[i] = seen[r]
    n_clusters = len(seen)
    sizes = (
        np.bincount(labels[b], minlength=n_clusters)
        if n_clusters
        else np.zeros(0, dtype=np.int64)
    )
    extents = None
    if mps is not None and n_clusters:
        extents = np.array(
            [
                _diameter(mps.space, mps.nuclei[labels == c])
                for c in range(n_clusters)
            ]
        )
    flags = {"degenerate_ties": getattr(adj, "degenerate_ties", 0)}
    return ClusterReport(
        black_cells=b,
        labels=labels,
        n_clusters=n_clusters,
        sizes=sizes,
        extents=extents,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# oracle: probe flood fill, no adjacency graph involved

@dataclass
class OraclePartition:
    """Flood-fill components of black-cell probes, projected to cells.

    probe_ids index into the tessellation's probe array; cell_labels is -1
    on white cells and on black cells that own no probe (no evidence either
    way; such cells are excluded from equivalence comparisons).

    ambiguous_pairs lists black cell pairs the flood could neither join
    (no step between them could be certified black) nor confidently keep
    apart (every failed step grazed white so shallowly that a sub-pitch
    black corridor cannot be ruled out).  Joins are exact, so the partition
    can only ever err by splitting across one of these pairs; comparisons
    should treat configurations that produce any as below resolution.
    """

    probe_ids: np.ndarray
    probe_labels: np.ndarray
    cell_labels: np.ndarray
    n_components: int
    low_resolution: np.ndarray
    eps: float
    ambiguous_pairs: np.ndarray

    def same_cluster(self, i, j):
        return self.cell_labels[i] >= 0 and self.cell_labels[i] == self.cell_labels[j]


def _segment_black(space, black_index, white_index, A, B):
    """Rowwise: does the geodesic from A[k] to B[k] stay in black cells?

    Certified exactly by adaptive bisection on the signed color gap
    g = d_white - d_black (nearest white nucleus minus nearest black one).
    A point is black iff g > 0; both distances are 1-Lipschitz along the
    geodesic, so g is 2-Lipschitz and any subsegment whose endpoint gaps
    sum to more than twice its arclength is black throughout.  Everything
    else splits at the midpoint, which hunts down white veils of any
    thinness instead of hoping a fixed sample grid lands on them.

    Returns (ok, depth): depth[k] is the most negative gap witnessed on a
    failing row, i.e. how deeply white the blocking veil provably is, and
    +inf on certified rows.  A failure at vanishing depth means the segment
    grazed white territory so thinly that the call cannot distinguish a
    true veil from numerical skin, which is what the ambiguity reporting
    upstream keys on.
    """
    m = len(A)
    if white_index is None:  # no white nuclei anywhere: trivially black
        return np.ones(m, dtype=bool), np.full(m, np.inf)

    def gap(points):
        db, _ = black_index.query(points, k=1)
        dw, _ = white_index.query(points, k=1)
        return dw[:, 0] - db[:, 0]

    seg = np.asarray(space.distance(A, B), dtype=float)
    gA = gap(A)
    gB = gap(B)
    ok = (gA > 0) & (gB > 0)
    depth = np.where(ok, np.inf, np.minimum(gA, gB))
    rows = np.flatnonzero(ok)
    t0, t1 = np.zeros(rows.size), np.ones(rows.size)
    g0, g1 = gA[rows], gB[rows]
    for _ in range(60):
        open_ = g0 + g1 <= 2.0 * (t1 - t0) * seg[rows]
        rows, t0, t1 = rows[open_], t0[open_], t1[open_]
        g0, g1 = g0[open_], g1[open_]
        if rows.size == 0:
            break
        tm = 0.5 * (t0 + t1)
        gm = gap(space.geodesic_point(A[rows], B[rows], tm))
        white = gm <= 0
        ok[rows[white]] = False
        np.minimum.at(depth, rows[white], gm[white])
        keep = ~white
        rows = np.concatenate([rows[keep], rows[keep]])
        t0 = np.concatenate([t0[keep], tm[keep]])
        t1 = np.concatenate([tm[keep], t1[keep]])
        g0 = np.concatenate([g0[keep], gm[keep]])
        g1 = np.concatenate([gm[keep], g1[keep]])
    # depth cap reached only by hairline grazes; count those as white
    ok[rows] = False
    depth[rows] = np.minimum(depth[rows], 0.0)
    return ok, depth


def _bisector_crossing(space, A, B, NA, NB, iters=40):
    """Bisection along the geodesic A[k] -> B[k] to the point equidistant
    from NA[k] and NB[k].  Each endpoint is nearer its own nucleus, so the
    sign changes and the bisection always lands on a crossing."""
    lo = np.zeros(len(A))
    hi = np.ones(len(A))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        P = space.geodesic_point(A, B, mid)
        nearer_a = np.asarray(space.distance(P, NA)) < np.asarray(
            space.distance(P, NB)
        )
        lo = np.where(nearer_a, mid, lo)
        hi = np.where(nearer_a, hi, mid)
    return space.geodesic_point(A, B, 0.5 * (lo + hi))


def _gated_cross_edges(space, tess, black_index, white_index, pts, own, cp, eps):
    """Certified connecting step per cross cell pair, plus ambiguity report.

    Candidates group by unordered cell pair and sort by segment length; each
    round tests the current head of every unresolved group at once, so the
    straight-step gate cost scales with cell pairs, not probe pairs.

    A pair of adjacent black cells can still fail every straight step: near
    a sliver wall the black corridor is thinner than the probe pitch and all
    eps-steps dip through the white wedge alongside it.  Groups left
    unresolved go to _wall_routed_steps, which decides wall existence on the
    pair's bisector and certifies a bent route through the wall when it can.
    Every emitted edge carries an exact black-path certificate either way,
    so false merges are impossible; cell pairs where a wall was sighted but
    no route could be certified come back in ambiguous instead of being
    silently split.

    Returns (edges, ambiguous): local probe-index pairs to join, and cell
    index pairs whose separation could not be decided at this resolution.
    """
    no_edges = np.empty((0, 2), dtype=np.int64)
    if len(cp) == 0:
        return no_edges, no_edges
    d = np.asarray(space.distance(pts[cp[:, 0]], pts[cp[:, 1]]))
    lo = np.minimum(own[cp[:, 0]], own[cp[:, 1]]).astype(np.int64)
    hi = np.maximum(own[cp[:, 0]], own[cp[:, 1]]).astype(np.int64)
    key = lo * tess.n_cells + hi
    order = np.lexsort((d, key))
    cp, key = cp[order], key[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    ends = np.r_[starts[1:], len(key)]
    offset = starts.copy()
    resolved = np.zeros(starts.size, dtype=bool)
    kept = []
    while True:
        live = np.flatnonzero((offset < ends) & ~resolved)
        if live.size == 0:
            break
        rows = offset[live]
        passed, _ = _segment_black(
            space, black_index, white_index, pts[cp[rows, 0]], pts[cp[rows, 1]]
        )
        if np.any(passed):
            kept.append(cp[rows[passed]])
            resolved[live[passed]] = True
        offset[live] += 1

    ambiguous = no_edges
    todo = np.flatnonzero(~resolved)
    if todo.size:
        bent, bent_ok, bent_amb = _wall_routed_steps(
            space, tess, black_index, white_index, pts, own, cp, starts, ends,
            todo, eps
        )
        if bent.size:
            kept.append(bent)
        amb = todo[bent_amb]
        ambiguous = np.column_stack(
            [key[starts[amb]] // tess.n_cells, key[starts[amb]] % tess.n_cells]
        ).astype(np.int64)

    edges = np.concatenate(kept) if kept else no_edges
    return edges, ambiguous


def _min_other_distance(space, tess, X, I, J):
    """Rowwise distance from X[r] to the nearest nucleus besides I[r], J[r].

    A 3-nearest query suffices: at most two of the three hits can be the
    excluded pair.  With fewer than three cells there is no third nucleus.
    """
    k = min(3, tess.n_cells)
    dq, iq = tess.batch_index.query(X, k=k)
    if k < 3:
        return np.full(len(X), np.inf)
    hit0 = (iq[:, 0] != I) & (iq[:, 0] != J)
    hit1 = (iq[:, 1] != I) & (iq[:, 1] != J)
    return np.where(hit0, dq[:, 0], np.where(hit1, dq[:, 1], dq[:, 2]))


def _wall_routed_steps(space, tess, black_index, white_index, pts, own, cp,
                       starts, ends, todo, eps):
    """Decide wall existence for unresolved cell pairs and route through it.

    For each pair the candidate segments' bisector crossings seed a search
    along the bisector for the maximum of h = d_other - d_pair; the pair
    shares a wall iff max h > 0.  Each search round draws a geodesic chord
    through the two best points found so far, samples it widely (the chord
    lies on the bisector in constant curvature and near it elsewhere), and
    re-projects every sample onto the bisector by bisection anchored at the
    farther nucleus.  Where a wall point is found, the step probe -> wall
    -> probe is certified black leg by leg; in constant curvature the legs
    stay inside the two closed cells (cells are geodesically convex), so a
    sighted wall between black cells there is always routable.

    Returns (edges, passed, ambiguous) with the flags aligned to todo:
    ambiguous marks pairs with a sighted but unroutable wall, or with a
    bisector grazing zero too closely to call.  max h < 0 is a certified
    split: the entire neighborhood of the bisector belongs to third cells.
    """
    nuclei = tess.points.nuclei
    n_todo = todo.size
    sizes = ends[todo] - starts[todo]
    rows = np.concatenate([np.arange(starts[g], ends[g]) for g in todo])
    slot = np.repeat(np.arange(n_todo), sizes)
    A = pts[cp[rows, 0]]
    B = pts[cp[rows, 1]]
    ia = own[cp[rows, 0]]
    jb = own[cp[rows, 1]]
    M = _bisector_crossing(space, A, B, nuclei[ia], nuclei[jb])
    di = np.asarray(space.distance(M, nuclei[ia]))
    dj = np.asarray(space.distance(M, nuclei[jb]))
    h = _min_other_distance(space, tess, M, ia, jb) - 0.5 * (di + dj)
    # beyond the sampled window the nucleus set thins out and h inflates;
    # only in-window wall points witness adjacency of the realized cells
    rim = tess.points.window_radius
    h[np.asarray(space.distance_to_origin(M)) > rim] = -np.inf

    # best seed starts the climb; the crossing farthest from it fixes the
    # chord direction, which in constant curvature is the bisector itself
    first = np.lexsort((-h, slot))
    lead = np.r_[True, slot[first][1:] != slot[first][:-1]]
    best = first[lead]
    u, hbest = M[best].copy(), h[best].copy()
    mbest = u.copy()
    pair_i = ia[best]
    pair_j = jb[best]
    span = np.asarray(space.distance(M, u[slot]))
    far = np.lexsort((-span, slot))
    far = far[np.r_[True, slot[far][1:] != slot[far][:-1]]]
    w = M[far]

    # scan widths are absolute arclengths: wide sweeps locate the rise of
    # h, fine ones pin bumps narrower than the seed cloud can sample
    ts = np.linspace(-1.0, 1.0, 25)
    for width in (3.0 * eps, 0.5 * eps, eps / 12.0, eps / 72.0):
        uw = np.asarray(space.distance(u, w))
        live = np.flatnonzero(uw > 1e-12)
        if live.size == 0:
            break
        nu, nt = live.size, ts.size
        U = np.repeat(u[live], nt, axis=0)
        W = np.repeat(w[live], nt, axis=0)
        T = np.tile(width * ts, nu) / np.repeat(uw[live], nt)
        Y = space.geodesic_point(U, W, T)
        I = np.repeat(pair_i[live], nt)
        J = np.repeat(pair_j[live], nt)
        dyi = np.asarray(space.distance(Y, nuclei[I]))
        dyj = np.asarray(space.distance(Y, nuclei[J]))
        # re-anchor each sample from the farther nucleus so the bisection
        # brackets a sign change, then project back onto the bisector
        anc = np.where(dyi > dyj, I, J)
        oth = np.where(dyi > dyj, J, I)
        P = _bisector_crossing(space, nuclei[anc], Y, nuclei[anc], nuclei[oth])
        dpi = np.asarray(space.distance(P, nuclei[I]))
        dpj = np.asarray(space.distance(P, nuclei[J]))
        hp = (_min_other_distance(space, tess, P, I, J) - 0.5 * (dpi + dpj))
        hp[np.asarray(space.distance_to_origin(P)) > rim] = -np.inf
        hp = hp.reshape(nu, nt)
        k1 = np.argmax(hp, axis=1)
        gain = hp[np.arange(nu), k1] > hbest[live]
        upd = live[gain]
        mbest[upd] = P.reshape(nu, nt, -1)[np.arange(nu), k1][gain]
        hbest[upd] = hp[np.arange(nu), k1][gain]
        u = mbest.copy()

    scale = np.asarray(space.distance(nuclei[pair_i], nuclei[pair_j]))
    tol = 1e-9 * (1.0 + scale)
    wall = hbest > tol
    grazing = np.abs(hbest) <= tol

    # per cell: contiguous slices of the black probe array
    order_own = np.argsort(own, kind="stable")
    bounds = np.searchsorted(own[order_own], np.arange(tess.n_cells + 1))

    def ranked_probes(cell, m, count):
        members = order_own[bounds[cell] : bounds[cell + 1]]
        dd = np.asarray(space.cross_distance(pts[members], m[None, :]))[:, 0]
        take = np.argsort(dd)[:count]
        return members[take], dd[take]

    passed = np.zeros(n_todo, dtype=bool)
    cand_a, cand_m, cand_b, cand_slot = [], [], [], []
    for s in np.flatnonzero(wall):
        m = mbest[s]
        pa, da = ranked_probes(int(pair_i[s]), m, 3)
        pb, db = ranked_probes(int(pair_j[s]), m, 3)
        aa, bb = np.meshgrid(np.arange(pa.size), np.arange(pb.size))
        aa, bb = aa.ravel(), bb.ravel()
        short = np.argsort(da[aa] + db[bb])
        for t in short:
            if da[aa[t]] > 2.0 * eps or db[bb[t]] > 2.0 * eps:
                continue
            cand_a.append(pa[aa[t]])
            cand_m.append(m)
            cand_b.append(pb[bb[t]])
            cand_slot.append(s)
    if cand_a:
        PA = pts[np.array(cand_a)]
        PM = np.array(cand_m)
        PB = pts[np.array(cand_b)]
        ok_a, _ = _segment_black(space, black_index, white_index, PA, PM)
        ok_b, _ = _segment_black(space, black_index, white_index, PM, PB)
        ok = ok_a & ok_b
        slots = np.array(cand_slot, dtype=np.int64)
        edges = np.column_stack([cand_a, cand_b]).astype(np.int64)
        win = np.zeros(n_todo, dtype=bool)
        keep_rows = []
        for r in np.flatnonzero(ok):
            if not win[slots[r]]:
                win[slots[r]] = True
                keep_rows.append(r)
        passed = win
        edges = edges[keep_rows]
    else:
        edges = np.empty((0, 2), dtype=np.int64)

    ambiguous = (wall & ~passed) | grazing
    return edges, passed, ambiguous


def oracle_clusters(space, tess, black) -> OraclePartition:
    """Rebuild the black-region components from the probe cloud alone.

    Probes of black cells are joined when they sit within eps = twice the
    covering pitch; a step between two cells also has to keep its joining
    geodesic inside black territory, certified by Lipschitz bisection (see
    _segment_black), so even a hairline white veil between two black cells
    blocks the step.  Within a cell every eps-pair joins ungated; across
    cells the shortest step per cell pair that passes the color gate stands
    in for the rest, which leaves the cell-level components unchanged and
    keeps the gate cost proportional to the number of cell pairs.  Cell
    pairs whose straight steps all fail get one more chance through a
    wall-routed step (_bent_steps): a black corridor along a short shared
    wall can be thinner than the probe pitch, in which case every straight
    segment dips through the white wedge beside it even though the closed
    black region is connected through the wall itself.  Pairs that stay
    unresolved without deep white evidence land in ambiguous_pairs; the
    partition keeps them split, which is the only direction it can ever
    be wrong in.  Probe
    components are then projected to cells:
    cells sharing a component are one oracle cluster.  Cells with fewer than
    8 probes trigger a low-resolution warning since flood fill cannot be
    trusted there.
    """
    n = tess.n_cells
    b = _validated_black(n, black)
    mask = np.zeros(n, dtype=bool)
    mask[b] = True
    counts = np.bincount(tess.owner, minlength=n)
    low = b[counts[b] < LOW_RESOLUTION_PROBES]
    if low.size:
        warnings.warn(
            "oracle resolution is low: %d black cell(s) own fewer than %d probes"
            % (low.size, LOW_RESOLUTION_PROBES),
            RuntimeWarning,
            stacklevel=2,
        )
    pid = np.flatnonzero(mask[tess.owner])
    eps = 2.0 * tess.probe_spacing
    ambiguous = np.empty((0, 2), dtype=np.int64)
    if pid.size == 0:
        return OraclePartition(
            probe_ids=pid,
            probe_labels=np.zeros(0, dtype=np.int64),
            cell_labels=np.full(n, -1, dtype=np.int64),
            n_components=0,
            low_resolution=low,
            eps=eps,
            ambiguous_pairs=ambiguous,
        )
    pts = tess.probes[pid]
    own = tess.owner[pid]

    # bucket probes under their own nuclei: cell buckets are tight, so the
    # triangle pruning stays sharp where strided landmarks would crowd
    present, rank = np.unique(own, return_inverse=True)
    idx = LandmarkIndex.from_buckets(
        pts, space, tess.points.nuclei[present], rank
    )
    pairs = idx.pairs_within(eps)
    if pairs.size:
        white = np.flatnonzero(~mask)
        white_index = (
            LandmarkIndex(tess.points.nuclei[white], space) if white.size else None
        )
        black_index = LandmarkIndex(tess.points.nuclei[b], space)
        cross = np.flatnonzero(own[pairs[:, 0]] != own[pairs[:, 1]])
        gated, ambiguous = _gated_cross_edges(
            space, tess, black_index, white_index, pts, own, pairs[cross], eps
        )
        pairs = np.concatenate(
            [pairs[np.setdiff1d(np.arange(len(pairs)), cross)], gated]
        )

    m = pid.size
    if pairs.size:
        data = np.ones(len(pairs), dtype=np.int8)
        g = coo_matrix((data, (pairs[:, 0], pairs[:, 1])), shape=(m, m))
        n_comp, plab = connected_components(g, directed=False)
    else:
        plab = np.arange(m, dtype=np.int64)

    # cells co-occurring in one probe component are one region component;
    # chaining consecutive owners per component encodes exactly that
    co = np.unique(np.column_stack([plab, own]), axis=0)
    same = co[1:, 0] == co[:-1, 0]
    ce = np.column_stack([co[:-1, 1][same], co[1:, 1][same]])
    if ce.size:
        g = coo_matrix(
            (np.ones(len(ce), dtype=np.int8), (ce[:, 0], ce[:, 1])), shape=(n, n)
        )
        _, all_lab = connected_components(g, directed=False)
    else:
        all_lab = np.arange(n, dtype=np.int64)

    cell_labels = np.full(n, -1, dtype=np.int64)
    seen = {}
    for i in b[counts[b] > 0]:
        r = int(all_lab[i])
        if r not in seen:
            seen[r] = len(seen)
        cell_labels[i] = seen[r]
    return OraclePartition(
        probe_ids=pid,
        probe_labels=plab.astype(np.int64),
        cell_labels=cell_labels,
        n_components=len(seen),
        low_resolution=low,
        eps=eps,
        ambiguous_pairs=ambiguous,
    )


# ---------------------------------------------------------------------------
# two-point function

@dataclass(frozen=True)
class TwoPointEstimate:
    intensity: float
    survival: float
    window_radius: float
    points_a: np.ndarray
    points_b: np.ndarray
    separations: np.ndarray
    tau_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    replicas_used: int
    discarded: int

    def rows(self):
        """twopoint.csv rows: lambda, p, sep, tau_hat, ci_lo, ci_hi, n."""
        return [
            (
                self.intensity,
                self.survival,
                float(self.separations[k]),
                float(self.tau_hat[k]),
                float(self.ci_lo[k]),
                float(self.ci_hi[k]),
                self.replicas_used,
            )
            for k in range(len(self.separations))
        ]


def _interior_radius(space, lam, window):
    r_esc = escape_radius(space, lam, 0.999)
    margin = 2.0 * r_esc if math.isfinite(r_esc) else math.inf
    return max(window - margin, 0.0)


def _replica_streams(rng, rep):
    base = rng.child(rep)
    return base.child(0), base.child(1)  # process, probes


def two_point(space, params: PercolationParams, pairs, replicas, rng):
    """Connection frequency of fixed point pairs over independent replicas.

    A pair connects when both points land in black cells of one cluster
    (same cell counts when that cell is black).  Replicas with an assignment
    tie at any pair point are discarded and reported, never tie-broken.
    """
    if space.is_graph:
        raise ValueError("two_point needs a continuum backend")
    if replicas < 1:
        raise ValueError("need at least one replica")
    pa = np.asarray([p[0] for p in pairs], dtype=float)
    pb = np.asarray([p[1] for p in pairs], dtype=float)
    if len(pa) == 0:
        raise ValueError("no pairs supplied")
    interior = _interior_radius(space, params.intensity, params.window_radius)
    r_all = np.concatenate(
        [space.distance_to_origin(pa), space.distance_to_origin(pb)]
    )
    if np.any(r_all > interior):
        raise ValueError(
            "pair points must lie in the interior region (radius %.4g); "
            "farthest point sits at %.4g" % (interior, float(r_all.max()))
        )
    seps = np.array([space.distance(a, b) for a, b in zip(pa, pb)])

    hits = np.zeros(len(pa), dtype=np.int64)
    used = 0
    discarded = 0
    for rep in range(replicas):
        s_proc, s_probe = _replica_streams(rng, rep)
        mps = sample_poisson(space, params.intensity, params.window_radius, s_proc)
        if len(mps) == 0:
            discarded += 1
            continue
        tess = build_tessellation(space, mps, s_probe)
        asg = [assign(space, tess, x) for x in np.vstack([pa, pb])]
        if any(a.tie for a in asg):
            discarded += 1
            continue
        adj = build_adjacency(space, tess)
        rep_clusters = clusters(adj, color(tess, params.survival))
        lab = rep_clusters.labels
        ca = [a.cell for a in asg[: len(pa)]]
        cb = [a.cell for a in asg[len(pa) :]]
        for k in range(len(pa)):
            if ca[k] == cb[k]:
                hits[k] += lab[ca[k]] >= 0
            else:
                hits[k] += lab[ca[k]] >= 0 and lab[ca[k]] == lab[cb[k]]
        used += 1
    if used == 0:
        raise RuntimeError("all replicas were discarded")
    tau = np.empty(len(pa))
    lo = np.empty(len(pa))
    hi = np.empty(len(pa))
    for k in range(len(pa)):
        tau[k], lo[k], hi[k] = wilson_interval(int(hits[k]), used)
    return TwoPointEstimate(
        intensity=params.intensity,
        survival=params.survival,
        window_radius=params.window_radius,
        points_a=pa,
        points_b=pb,
        separations=seps,
        tau_hat=tau,
        ci_lo=lo,
        ci_hi=hi,
        replicas_used=used,
        discarded=discarded,
    )


def psd_kernel_check(labels):
    """Minimum eigenvalue of the 0/1 same-cluster matrix of n >= 2 points.

    The matrix is block-constant ones over the partition, hence positive
    semidefinite exactly; anything below -1e-9 indicates a broken partition.
    """
    lab = np.asarray(labels)
    if lab.ndim != 1 or lab.size < 2:
        raise ValueError("need cluster labels for at least 2 points")
    same = (lab[:, None] == lab[None, :]).astype(float)
    return float(np.linalg.eigvalsh(same)[0])


# ---------------------------------------------------------------------------
# threshold proxy

@dataclass(frozen=True)
class ThresholdEstimate:
    method: str
    intensity: float
    window_radius: float
    grid: np.ndarray
    curve: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    threshold: float
    threshold_ci: tuple
    replicas: int

    def rows(self):
        """threshold.csv rows: lambda, p, statistic, value, ci_lo, ci_hi."""
        out = [
            (
                self.intensity,
                float(self.grid[k]),
                self.method,
                float(self.curve[k]),
                float(self.ci_lo[k]),
                float(self.ci_hi[k]),
            )
            for k in range(len(self.grid))
        ]
        out.append(
            (
                self.intensity,
                self.threshold,
                "threshold",
                self.threshold,
                self.threshold_ci[0],
                self.threshold_ci[1],
            )
        )
        return out


def _grid_half_crossing(grid, curve, strict=True):
    """p where the curve first reaches 1/2, linearly interpolated between
    the bracketing grid points.  strict demands a bracket inside the grid."""
    above = np.flatnonzero(curve >= 0.5)
    if above.size == 0:
        if strict:
            raise RuntimeError(
                "threshold estimation failed: proxy never reaches 1/2 on the grid"
            )
        return float(grid[-1])
    g = int(above[0])
    if g == 0:
        if strict:
            raise RuntimeError(
                "threshold estimation failed: proxy already at %.3f >= 1/2 at the "
                "lowest grid point; extend the grid downward" % curve[0]
            )
        return float(grid[0])
    y0, y1 = curve[g - 1], curve[g]
    return float(grid[g - 1] + (0.5 - y0) * (grid[g] - grid[g - 1]) / (y1 - y0))


def _incremental_indicators(grid, z, nbrs, start_mask, end_mask, allowed_mask):
    """Per-grid-point connection indicator under the shared-label coupling.

    Sweeping the grid upward only ever adds black cells, so edges are united
    once and the indicator sequence is monotone per realization by
    construction.
    """
    n = len(z)
    uf = UnionFind(n)
    active = np.zeros(n, dtype=bool)
    order = np.argsort(z, kind="stable")
    zs = z[order]
    out = np.zeros(len(grid), dtype=bool)
    pos = 0
    starts = np.flatnonzero(start_mask)
    ends = np.flatnonzero(end_mask)
    for gi, p in enumerate(grid):
        hi = int(np.searchsorted(zs, p, side="right"))
        for c in order[pos:hi]:
            if not allowed_mask[c]:
                continue
            active[c] = True
            for nb in nbrs[c]:
                if active[nb]:
                    uf.union(int(c), int(nb))
        pos = hi
        roots = {uf.find(int(c)) for c in starts if active[c]}
        out[gi] = any(uf.find(int(c)) in roots for c in ends if active[c])
    return out


def _filtered_neighbor_lists(adj, allowed_mask):
    nbrs = [[] for _ in range(adj.n_cells)]
    for i, j in adj.edges:
        if allowed_mask[i] and allowed_mask[j]:
            nbrs[i].append(j)
            nbrs[j].append(i)
    return nbrs


def estimate_pc(space, lam, window, p_grid, replicas, rng):
    """Finite-window threshold proxy on a survival-probability grid.

    Flat 2-D: left-right crossing of the square inscribed in the window by
    black cells owning probes inside the square (the restriction stops
    crossings from routing around the square through the surrounding
    annulus).  Elsewhere: one-arm connection from B_{window/4} to radius
    3*window/4.  The per-realization indicator is monotone in p under the
    shared-label coupling, so the mean curve is monotone exactly; any
    decrease is an estimation failure, as is a curve that never brackets
    1/2.
    """
    if space.is_graph:
        raise ValueError("threshold proxy needs a continuum backend")
    if replicas < 2:
        raise ValueError("need at least two replicas for a bootstrap interval")
    grid = np.asarray(p_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("p grid needs at least two points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("p grid must be strictly increasing")
    if grid[0] < 0 or grid[-1] > 1:
        raise ValueError("p grid must lie in [0, 1]")

    # squares only close up in flat geometry; curved and 3-d backends use
    # the rotation-invariant annulus statistic instead
    flat2d = isinstance(space, Euclidean) and space.dimension == 2
    method = "square-crossing" if flat2d else "annulus-one-arm"

    ind = np.zeros((replicas, grid.size), dtype=bool)
    for rep in range(replicas):
        s_proc, s_probe = _replica_streams(rng, rep)
        mps = sample_poisson(space, lam, window, s_proc)
        if len(mps) == 0:
            continue  # empty process: indicator stays all-false (no crossing)
        tess = build_tessellation(space, mps, s_probe)
        adj = build_adjacency(space, tess)
        z = mps.labels
        if flat2d:
            h = window / math.sqrt(2.0)
            strip = 2.0 * tess.probe_spacing
            px, py = tess.probes[:, 0], tess.probes[:, 1]
            inside = (np.abs(px) <= h) & (np.abs(py) <= h)
            allowed = np.zeros(tess.n_cells, dtype=bool)
            allowed[np.unique(tess.owner[inside])] = True
            left = np.zeros(tess.n_cells, dtype=bool)
            left[np.unique(tess.owner[inside & (px <= -h + strip)])] = True
            right = np.zeros(tess.n_cells, dtype=bool)
            right[np.unique(tess.owner[inside & (px >= h - strip)])] = True
        else:
            allowed = np.ones(tess.n_cells, dtype=bool)
            left = tess.cell_min_reach() <= 0.25 * window
            right = tess.cell_max_probe_dist() >= 0.75 * window
        nbrs = _filtered_neighbor_lists(adj, allowed)
        ind[rep] = _incremental_indicators(grid, z, nbrs, left, right, allowed)
        if np.any(np.diff(ind[rep].astype(np.int8)) < 0):
            raise RuntimeError(
                "threshold estimation failed: crossing indicator decreased "
                "in p on one realization (coupling violation)"
            )

    curve = ind.mean(axis=0)
    if np.any(np.diff(curve) < 0):
        raise RuntimeError(
            "threshold estimation failed: mean proxy curve is non-monotone"
        )
    lo = np.empty(grid.size)
    hi = np.empty(grid.size)
    for k in range(grid.size):
        _, lo[k], hi[k] = wilson_interval(int(ind[:, k].sum()), replicas)
    threshold = _grid_half_crossing(grid, curve, strict=True)
    boot_lo, boot_hi = bootstrap_ci(
        ind.astype(float),
        lambda rows: _grid_half_crossing(grid, rows.mean(axis=0), strict=False),
        n_boot=500,
        gen=rng.child(replicas).child(2).generator,
    )
    return ThresholdEstimate(
        method=method,
        intensity=float(lam),
        window_radius=float(window),
        grid=grid,
        curve=curve,
        ci_lo=lo,
        ci_hi=hi,
        threshold=threshold,
        threshold_ci=(boot_lo, boot_hi),
        replicas=replicas,
    )


# ---------------------------------------------------------------------------
# uniqueness proxies

@dataclass(frozen=True)
class UniquenessReport:
    intensity: float
    survival: float
    R_in: float
    R_out: float
    window_radius: float
    p_ge1: float
    p_ge1_ci: tuple
    p_ge2: float
    p_ge2_ci: tuple
    tau_lr: float
    tau_lr_ci: tuple
    replicas_used: int
    discarded: int

    def rows(self):
        """uniqueness.csv rows: lambda, p, R_in, R_out, p_ge1, p_ge2, tau_lr."""
        return [
            (
                self.intensity,
                self.survival,
                self.R_in,
                self.R_out,
                self.p_ge1,
                self.p_ge2,
                self.tau_lr,
            )
        ]


def uniqueness_proxy(space, lam, p, R_in, R_out, replicas, rng):
    """Annulus multiplicity and long-range tau at one survival level.

    A crossing cluster is a black cluster meeting both B_{R_in}(o) and the
    shell at radius R_out.  Reports P(>=1), P(>=2 distinct) with Wilson
    intervals, plus tau between two antipodal points at radius R_in
    (separation 2 R_in).  Neither statistic is a uniqueness certificate;
    finite windows cannot certify infinite-volume behavior, they can only
    expose a multiplicity window.
    """
    if space.is_graph:
        raise ValueError("uniqueness proxy needs a continuum backend")
    if not 0.0 <= p <= 1.0:
        raise ValueError("survival probability must lie in [0, 1]")
    if not 0 < R_in < R_out:
        raise ValueError("need 0 < R_in < R_out")
    if replicas < 1:
        raise ValueError("need at least one replica")
    r_esc = escape_radius(space, lam, 0.999)
    if not math.isfinite(r_esc):
        raise ValueError(
            "escape bound cannot certify an interior region at this intensity"
        )
    # window sized so the interior radius lands exactly at R_out
    window = R_out + 2.0 * r_esc
    x, y = space.sphere_grid(R_in, 2)

    n_ge1 = 0
    n_ge2 = 0
    n_tau = 0
    used = 0
    discarded = 0
    for rep in range(replicas):
        s_proc, s_probe = _replica_streams(rng, rep)
        mps = sample_poisson(space, lam, window, s_proc)
        if len(mps) == 0:
            discarded += 1
            continue
        tess = build_tessellation(space, mps, s_probe)
        ax, ay = assign(space, tess, x), assign(space, tess, y)
        if ax.tie or ay.tie:
            discarded += 1
            continue
        adj = build_adjacency(space, tess)
        rep_clusters = clusters(adj, color(tess, p))
        lab = rep_clusters.labels
        inner = (tess.cell_min_reach() <= R_in) & (lab >= 0)
        outer = (tess.cell_max_probe_dist() >= R_out) & (lab >= 0)
        crossing = np.intersect1d(lab[inner], lab[outer])
        n_ge1 += crossing.size >= 1
        n_ge2 += crossing.size >= 2
        if ax.cell == ay.cell:
            n_tau += lab[ax.cell] >= 0
        else:
            n_tau += lab[ax.cell] >= 0 and lab[ax.cell] == lab[ay.cell]
        used += 1
    if used == 0:
        raise RuntimeError("all replicas were discarded")
    p1, lo1, hi1 = wilson_interval(n_ge1, used)
    p2, lo2, hi2 = wilson_interval(n_ge2, used)
    pt, lot, hit = wilson_interval(n_tau, used)
    return UniquenessReport(
        intensity=float(lam),
        survival=float(p),
        R_in=float(R_in),
        R_out=float(R_out),
        window_radius=float(window),
        p_ge1=p1,
        p_ge1_ci=(lo1, hi1),
        p_ge2=p2,
        p_ge2_ci=(lo2, hi2),
        tau_lr=pt,
        tau_lr_ci=(lot, hit),
        replicas_used=used,
        discarded=discarded,
    )
