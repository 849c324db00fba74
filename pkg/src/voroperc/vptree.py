"""Exact nearest-neighbour indices over arbitrary metric backends.

VPTree answers one query at a time and is the canonical index for
nearest-nucleus lookups; below 64 points it silently degrades to a brute
force scan, which is faster there.  LandmarkIndex answers large query
batches vectorized; both are exact (triangle-inequality pruning only) and
are cross-checked against each other in the tests.
"""

from __future__ import annotations

import numpy as np

__all__ = ["VPTree", "LandmarkIndex"]

BRUTE_FORCE_MAX = 64


class _Node:
    __slots__ = ("vantage", "radius", "inner", "outer", "bucket")

    def __init__(self, vantage=None, radius=0.0, inner=None, outer=None, bucket=None):
        self.vantage = vantage
        self.radius = radius
        self.inner = inner
        self.outer = outer
        self.bucket = bucket


class VPTree:
    """Vantage-point tree over a fixed point set in a metric space."""

    def __init__(self, points, space, leaf_size=12):
        self.space = space
        self.points = np.asarray(points, dtype=float)
        if self.points.ndim != 2:
            raise ValueError("points must be a 2d array, one point per row")
        self.n = len(self.points)
        self.leaf_size = int(leaf_size)
        self._brute = self.n < BRUTE_FORCE_MAX
        if not self._brute:
            self._root = self._build(np.arange(self.n))

    def _build(self, idx):
        if idx.size <= self.leaf_size:
            return _Node(bucket=idx)
        # deterministic vantage choice keeps builds reproducible
        v = idx[0]
        rest = idx[1:]
        d = self.space.cross_distance(self.points[v][None, :], self.points[rest])[0]
        med = float(np.median(d))
        inner_mask = d <= med
        inner = rest[inner_mask]
        outer = rest[~inner_mask]
        if inner.size == 0 or outer.size == 0:
            return _Node(bucket=idx)
        return _Node(
            vantage=v, radius=med, inner=self._build(inner), outer=self._build(outer)
        )

    def query(self, q, k=1):
        """k smallest distances and their indices, ascending."""
        q = np.asarray(q, dtype=float)
        if k < 1 or k > self.n:
            raise ValueError("k must be in [1, n]")
        if self._brute:
            d = self.space.cross_distance(q[None, :], self.points)[0]
            order = np.argsort(d, kind="stable")[:k]
            return d[order], order
        best_d = np.full(k, np.inf)
        best_i = np.full(k, -1, dtype=np.int64)

        def visit(node):
            nonlocal best_d, best_i
            if node.bucket is not None:
                d = self.space.cross_distance(q[None, :], self.points[node.bucket])[0]
                cand_d = np.concatenate([best_d, d])
                cand_i = np.concatenate([best_i, node.bucket])
                order = np.argsort(cand_d, kind="stable")[:k]
                best_d, best_i = cand_d[order], cand_i[order]
                return
            dv = float(self.space.distance(q, self.points[node.vantage]))
            cand_d = np.append(best_d, dv)
            cand_i = np.append(best_i, node.vantage)
            order = np.argsort(cand_d, kind="stable")[:k]
            best_d, best_i = cand_d[order], cand_i[order]
            near_first = dv <= node.radius
            first, second = (
                (node.inner, node.outer) if near_first else (node.outer, node.inner)
            )
            visit(first)
            # the far side can only matter within tau of the shell boundary
            if abs(dv - node.radius) <= best_d[-1]:
                visit(second)

        visit(self._root)
        return best_d, best_i


class LandmarkIndex:
    """Batch exact k-nearest queries by landmark pruning.

    Points are bucketed under ~sqrt(n) landmarks; a query block prunes a
    bucket when d(q, landmark) - bucket_radius exceeds its current k-th best,
    which cannot discard a true neighbour by the triangle inequality.
    """

    def __init__(self, points, space, chunk=2048):
        self.space = space
        self.points = np.asarray(points, dtype=float)
        self.n = len(self.points)
        self.chunk = int(chunk)
        m = max(1, int(round(np.sqrt(self.n))))
        # deterministic evenly strided landmark choice
        self.landmark_ids = np.linspace(0, self.n - 1, m).astype(np.int64)
        self.landmarks = self.points[self.landmark_ids]
        d = space.cross_distance(self.points, self.landmarks)
        owner = np.argmin(d, axis=1)
        self.buckets = [np.flatnonzero(owner == g) for g in range(m)]
        self.radii = np.array(
            [
                d[members, g].max() if members.size else 0.0
                for g, members in enumerate(self.buckets)
            ]
        )

    @classmethod
    def from_buckets(cls, points, space, landmarks, owner, chunk=2048):
        """Index with caller-chosen bucketing: owner[i] names the landmark of
        point i.  Tight buckets (e.g. Voronoi cells around their nuclei) give
        far better pruning than the strided default when the metric crowds
        coarse buckets together."""
        self = cls.__new__(cls)
        self.space = space
        self.points = np.asarray(points, dtype=float)
        self.n = len(self.points)
        self.chunk = int(chunk)
        self.landmark_ids = None
        self.landmarks = np.asarray(landmarks, dtype=float)
        owner = np.asarray(owner)
        m = len(self.landmarks)
        self.buckets = [np.flatnonzero(owner == g) for g in range(m)]
        self.radii = np.array(
            [
                space.cross_distance(self.points[members], self.landmarks[g][None, :])
                .max()
                if members.size
                else 0.0
                for g, members in enumerate(self.buckets)
            ]
        )
        return self

    def query(self, Q, k=1):
        Q = np.asarray(Q, dtype=float)
        if Q.ndim != 2:
            raise ValueError("queries must be a 2d array")
        if k < 1 or k > self.n:
            raise ValueError("k must be in [1, n]")
        out_d = np.empty((len(Q), k))
        out_i = np.empty((len(Q), k), dtype=np.int64)
        for lo in range(0, len(Q), self.chunk):
            sl = slice(lo, min(lo + self.chunk, len(Q)))
            d, i = self._query_block(Q[sl], k)
            out_d[sl] = d
            out_i[sl] = i
        return out_d, out_i

    def pairs_within(self, r):
        """All unordered index pairs (i < j) at distance <= r, shape (m, 2).

        Bucket pair (g, h) is scanned only when the landmark separation minus
        both bucket radii does not exceed r; by the triangle inequality no
        qualifying pair lives in a pruned block.
        """
        if r < 0:
            raise ValueError("radius must be nonnegative")
        dll = self.space.cross_distance(self.landmarks, self.landmarks)
        out = []
        m = len(self.buckets)
        for g in range(m):
            mg = self.buckets[g]
            if mg.size == 0:
                continue
            near = np.flatnonzero(dll[g] - self.radii[g] - self.radii <= r)
            for h in near[near >= g]:
                mh = self.buckets[h]
                if mh.size == 0:
                    continue
                dm = self.space.cross_distance(self.points[mg], self.points[mh])
                a, b = np.nonzero(dm <= r)
                i, j = mg[a], mh[b]
                if h == g:
                    sel = i < j
                    i, j = i[sel], j[sel]
                else:
                    i, j = np.minimum(i, j), np.maximum(i, j)
                if i.size:
                    out.append(np.column_stack([i, j]))
        if not out:
            return np.empty((0, 2), dtype=np.int64)
        return np.unique(np.concatenate(out), axis=0)

    def _query_block(self, Q, k):
        b = len(Q)
        dl = self.space.cross_distance(Q, self.landmarks)  # (b, m)
        best_d = np.full((b, k), np.inf)
        best_i = np.full((b, k), -1, dtype=np.int64)
        # visiting buckets in ascending typical distance tightens tau early
        order = np.argsort(dl.mean(axis=0), kind="stable")
        for g in order:
            members = self.buckets[g]
            if members.size == 0:
                continue
            active = np.flatnonzero(dl[:, g] - self.radii[g] < best_d[:, -1])
            if active.size == 0:
                continue
            dm = self.space.cross_distance(Q[active], self.points[members])
            cand_d = np.concatenate([best_d[active], dm], axis=1)
            cand_i = np.concatenate(
                [best_i[active], np.broadcast_to(members, dm.shape)], axis=1
            )
            sel = np.argsort(cand_d, axis=1, kind="stable")[:, :k]
            rows = np.arange(active.size)[:, None]
            best_d[active] = cand_d[rows, sel]
            best_i[active] = cand_i[rows, sel]
        return best_d, best_i
