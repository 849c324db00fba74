"""Disjoint-set forest with path compression and union by size."""

from __future__ import annotations

import numpy as np

__all__ = ["UnionFind"]


class UnionFind:
    def __init__(self, n):
        self.parent = np.arange(int(n), dtype=np.int64)
        self.size = np.ones(int(n), dtype=np.int64)
        self.n_components = int(n)

    def find(self, x):
        root = x
        p = self.parent
        while p[root] != root:
            root = p[root]
        while p[x] != root:
            p[x], x = root, p[x]
        return int(root)

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.n_components -= 1
        return True

    def connected(self, a, b):
        return self.find(a) == self.find(b)

    def labels(self):
        """Component label per element, labels densified in first-seen order."""
        roots = np.array([self.find(i) for i in range(len(self.parent))])
        _, inverse = np.unique(roots, return_inverse=True)
        # reorder so the label sequence increases with first appearance
        first = np.full(inverse.max() + 1, len(roots), dtype=np.int64)
        for i, lab in enumerate(inverse):
            if first[lab] == len(roots):
                first[lab] = i
        rank = np.argsort(np.argsort(first, kind="stable"), kind="stable")
        return rank[inverse]
