"""Seeded sampling of the marked Poisson process in a window.

A realization is a MarkedPointSet: nuclei ordered by increasing distance
from the origin carrying iid uniform labels.  Graph backends replace the
Poisson process by independent Bernoulli marking of vertices.  The Mecke
identity E[sum_{y in Y} h(y)] = lambda * int h dvol doubles as the module's
distributional self-test.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Space, adaptive_simpson, parse_backend

__all__ = ["MarkedPointSet", "MeckeReport", "sample_poisson", "mecke_check"]

MAX_EXPECTED_POINTS = 1e8


@dataclass
class MarkedPointSet:
    """Nuclei with labels, sorted by distance from the origin.

    Continuum nuclei are a (n, point_dim) float array; graph nuclei are a
    (n,) int vertex-id array ordered by (hop distance, vertex id).
    """

    backend: str
    nuclei: np.ndarray
    labels: np.ndarray
    intensity: float
    window_radius: float
    seed_record: str = ""
    resample_count: int = 0
    origin_inserted: bool = False
    _space: Space | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.nuclei)

    @property
    def space(self) -> Space:
        if self._space is None:
            self._space = parse_backend(self.backend)
        return self._space

    def origin_distances(self):
        return self.space.distance_to_origin(self.nuclei)

    def to_json(self) -> str:
        return json.dumps(
            {
                "backend": self.backend,
                "lambda": self.intensity,
                "window": self.window_radius,
                "nuclei": self.nuclei.tolist(),
                "labels": self.labels.tolist(),
                "seed": self.seed_record,
                "resamples": self.resample_count,
                "origin_inserted": self.origin_inserted,
            }
        )

    @classmethod
    def from_json(cls, doc: str) -> "MarkedPointSet":
        d = json.loads(doc)
        space = parse_backend(d["backend"])
        dtype = np.int64 if space.is_graph else float
        return cls(
            backend=d["backend"],
            nuclei=np.asarray(d["nuclei"], dtype=dtype),
            labels=np.asarray(d["labels"], dtype=float),
            intensity=float(d["lambda"]),
            window_radius=float(d["window"]),
            seed_record=d.get("seed", ""),
            resample_count=int(d.get("resamples", 0)),
            origin_inserted=bool(d.get("origin_inserted", False)),
        )


def _strictly_ordered(space, pts, gen, window_radius):
    """Sort by distance from o, resampling exact ties until strict.

    Ties have probability zero but are representable in floats; keeping the
    ordering strict preserves the almost-sure uniqueness the estimators rely
    on.  Returns (points, distances, resample_count).
    """
    resamples = 0
    for _ in range(64):
        d = space.distance_to_origin(pts)
        order = np.argsort(d, kind="stable")
        pts, d = pts[order], d[order]
        dup = np.flatnonzero(np.diff(d) == 0.0)
        if dup.size == 0:
            return pts, d, resamples
        redraw = dup + 1
        fresh = space.sample_in_ball(window_radius, _GenStream(gen), n=redraw.size)
        pts[redraw] = fresh
        resamples += redraw.size
    raise RuntimeError("could not break distance ties after 64 rounds")


class _GenStream:
    """Adapter so helpers taking a RandomStream can reuse a live generator."""

    def __init__(self, gen):
        self.generator = gen


def sample_poisson(space, lam, window_radius, rng, include_origin=False):
    """Draw the marked process restricted to the window ball B_R(o).

    Continuum: count Poisson(lam * vol(B_R)), points uniform in the ball.
    Graph: every vertex within R hops is a nucleus independently with
    probability min(lam, 1).  With include_origin the origin is prepended as
    an extra nucleus with its own label.
    """
    if lam <= 0:
        raise ValueError("intensity must be positive")
    if window_radius <= 0:
        raise ValueError("window radius must be positive")
    gen = rng.generator

    if space.is_graph:
        dist = space.world.origin_distances()
        inside = np.flatnonzero((dist >= 0) & (dist <= int(window_radius)))
        q = min(float(lam), 1.0)
        marks = gen.random(inside.size) < q
        ids = inside[marks]
        order = np.lexsort((ids, dist[ids]))
        ids = ids[order].astype(np.int64)
        if include_origin and (ids.size == 0 or ids[0] != space.origin):
            ids = np.concatenate([[space.origin], ids[dist[ids] > 0]])
        labels = gen.random(ids.size)
        return MarkedPointSet(
            backend=space.backend,
            nuclei=ids,
            labels=labels,
            intensity=float(lam),
            window_radius=float(window_radius),
            seed_record=rng.key,
            origin_inserted=bool(include_origin),
            _space=space,
        )

    mean = lam * space.ball_volume(window_radius)
    if mean > MAX_EXPECTED_POINTS:
        raise ValueError(
            "window too large: %.3g expected points exceeds %.0e"
            % (mean, MAX_EXPECTED_POINTS)
        )
    n = int(gen.poisson(mean))
    pts = space.sample_in_ball(window_radius, _GenStream(gen), n=max(n, 1))[:n]
    resamples = 0
    if n > 0:
        pts, _, resamples = _strictly_ordered(space, pts, gen, window_radius)
    if include_origin:
        pts = np.vstack([space.origin[None, :], pts]) if n else space.origin[None, :]
    labels = gen.random(len(pts))
    return MarkedPointSet(
        backend=space.backend,
        nuclei=pts,
        labels=labels,
        intensity=float(lam),
        window_radius=float(window_radius),
        seed_record=rng.key,
        resample_count=resamples,
        origin_inserted=bool(include_origin),
        _space=space,
    )


# ---------------------------------------------------------------------------
# Mecke identity self-test

@dataclass(frozen=True)
class MeckeReport:
    empirical_mean: float
    analytic_value: float
    standard_error: float
    replicas: int

    @property
    def z_score(self) -> float:
        if self.standard_error == 0.0:
            return 0.0 if self.empirical_mean == self.analytic_value else math.inf
        return (self.empirical_mean - self.analytic_value) / self.standard_error


def _catalog(h: str):
    """Test-function catalog: "const:<c>", "indicator:<t>", "exp"."""
    if h == "exp":
        return lambda r: np.exp(-r)
    kind, _, arg = h.partition(":")
    if kind == "const":
        c = float(arg) if arg else 1.0
        return lambda r: np.full_like(np.asarray(r, dtype=float), c)
    if kind == "indicator":
        t = float(arg)
        return lambda r: (np.asarray(r, dtype=float) <= t).astype(float)
    raise ValueError("unknown test function %r" % h)


def _analytic_integral(space, h, R):
    """lambda-free integral int_{B_R} h(d(o,x)) dvol(x)."""
    if h == "exp":
        # Stieltjes by parts: int e^{-r} dV = e^{-R} V(R) + int_0^R e^{-r} V(r) dr
        tail = math.exp(-R) * space.ball_volume(R)
        bulk = adaptive_simpson(
            lambda r: math.exp(-r) * space.ball_volume(r), 0.0, R
        )
        return tail + bulk
    kind, _, arg = h.partition(":")
    if kind == "const":
        c = float(arg) if arg else 1.0
        return c * space.ball_volume(R)
    if kind == "indicator":
        t = float(arg)
        return space.ball_volume(min(t, R))
    raise ValueError("unknown test function %r" % h)


def mecke_check(space, lam, window_radius, h, replicas, rng) -> MeckeReport:
    """Compare E[sum_{y in Y} h(d(o,y))] against lambda * int_{B_R} h dvol."""
    if replicas < 2:
        raise ValueError("need at least 2 replicas")
    fn = _catalog(h)
    sums = np.empty(replicas)
    for rep in range(replicas):
        mps = sample_poisson(space, lam, window_radius, rng.child(rep))
        if len(mps) == 0:
            sums[rep] = 0.0
        else:
            sums[rep] = float(np.sum(fn(mps.origin_distances())))
    analytic = lam * _analytic_integral(space, h, window_radius)
    return MeckeReport(
        empirical_mean=float(np.mean(sums)),
        analytic_value=float(analytic),
        standard_error=float(np.std(sums, ddof=1) / math.sqrt(replicas)),
        replicas=int(replicas),
    )
