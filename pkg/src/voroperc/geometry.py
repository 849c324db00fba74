"""Metric-measure space backends for the simulator.

Continuum backends expose distance, constant-speed geodesics, exact or
quadrature ball volumes, uniform ball sampling, and origin-moving isometries.
Graph backends expose the hop metric and ball cardinalities over a finite
vertex-transitive window.

Point conventions (all float64 numpy arrays):
  euclidean(d)   shape (d,)    Cartesian coordinates
  hyperbolic2    shape (3,)    hyperboloid sheet x0^2-x1^2-x2^2=1, x0>=1
  h2xh2          shape (6,)    two hyperboloid triples side by side
  graph          int           vertex identifier

Batches stack points along the first axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Space",
    "Euclidean",
    "Hyperbolic2",
    "ProductH2xH2",
    "GraphWorld",
    "GraphSpace",
    "GrowthParams",
    "parse_backend",
    "fit_growth",
    "adaptive_simpson",
]

SIMPSON_REL_TOL = 1e-8
# product ball sampling switches from rejection out of B_t x B_t to the
# stratified radial sampler once the acceptance ratio degrades
REJECTION_MAX_T = 4.0


# ---------------------------------------------------------------------------
# stratified planar clouds

def _ring_strata(t, pitch, rng, ring_volume, radius_in_ring, stratum_diameter):
    """Jittered polar strata covering a disk of radius t: rings at most one
    pitch wide, each split into equal-measure sectors of about pitch^2 volume
    with a random per-ring rotation, one point uniform in each stratum.

    Returns (r, theta, spacing) where spacing is the max stratum diameter,
    i.e. the covering pitch of the cloud.  Exact uniformity inside every
    stratum needs the ring's radial CDF inverted by radius_in_ring(lo, hi, u).
    """
    gen = rng.generator
    n_rings = max(1, int(math.ceil(t / pitch)))
    edges = np.linspace(0.0, t, n_rings + 1)
    rr = []
    tt = []
    spacing = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = max(1, int(round(ring_volume(lo, hi) / pitch**2)))
        rot = gen.uniform(0.0, 2.0 * math.pi)
        theta = rot + (2.0 * math.pi / m) * (np.arange(m) + gen.random(m))
        rr.append(radius_in_ring(lo, hi, gen.random(m)))
        tt.append(theta)
        spacing = max(spacing, stratum_diameter(lo, hi, 2.0 * math.pi / m))
    return np.concatenate(rr), np.concatenate(tt), spacing


# ---------------------------------------------------------------------------
# hyperboloid primitives

def _mdot(x, y):
    """Minkowski pairing x0*y0 - x1*y1 - x2*y2, broadcasting over leading axes."""
    return x[..., 0] * y[..., 0] - x[..., 1] * y[..., 1] - x[..., 2] * y[..., 2]


def _h2_normalize(x):
    """Project back onto the upper sheet; cheap insurance after interpolation."""
    q = _mdot(x, x)
    s = np.sqrt(np.maximum(q, 1e-300))
    out = x / s[..., None]
    # the sheet has x0 >= 1
    np.maximum(out[..., 0], 1.0, out=out[..., 0])
    return out


def _h2_distance(x, y):
    return np.arccosh(np.maximum(_mdot(x, y), 1.0))


def _h2_point(r, theta):
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return np.stack(
        [np.cosh(r), np.sinh(r) * np.cos(theta), np.sinh(r) * np.sin(theta)],
        axis=-1,
    )


def _h2_geodesic(x, y, t):
    s = _h2_distance(x, y)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    tiny = s < 1e-12
    s_safe = np.where(tiny, 1.0, s)
    w1 = np.sinh((1.0 - t) * s_safe) / np.sinh(s_safe)
    w2 = np.sinh(t * s_safe) / np.sinh(s_safe)
    out = w1[..., None] * x + w2[..., None] * y
    if np.any(tiny):
        out = np.where(tiny[..., None], np.broadcast_to(x, out.shape), out)
    return _h2_normalize(out)


def _h2_translation(base):
    """3x3 Minkowski matrix of the transvection mapping the origin to base.

    Composition of point reflections through the origin and through the
    midpoint m: R_m(v) = 2<v,m> m - v preserves the form, and R_m R_o sends
    o to 2<o,m> m - o = base by the hyperbolic double-angle identity.
    """
    o = np.array([1.0, 0.0, 0.0])
    m = _h2_geodesic(o, np.asarray(base, dtype=float), 0.5)
    jm = m * np.array([1.0, -1.0, -1.0])
    refl_m = 2.0 * np.outer(m, jm) - np.eye(3)
    refl_o = np.diag([1.0, -1.0, -1.0])
    return refl_m @ refl_o


# ---------------------------------------------------------------------------
# quadrature

def adaptive_simpson(f, a, b, rel_tol=SIMPSON_REL_TOL, max_depth=40):
    """Adaptive Simpson quadrature of a scalar function on [a, b]."""
    if not b > a:
        return 0.0

    def simpson(lo, hi, flo, fmid, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, hi, flo, fmid, fhi, whole, tol, depth):
        mid = 0.5 * (lo + hi)
        fl = f(0.5 * (lo + mid))
        fr = f(0.5 * (mid + hi))
        left = simpson(lo, mid, flo, fl, fmid)
        right = simpson(mid, hi, fmid, fr, fhi)
        err = left + right - whole
        if depth <= 0 or abs(err) <= 15.0 * tol:
            return left + right + err / 15.0
        return recurse(lo, mid, flo, fl, fmid, left, tol / 2.0, depth - 1) + recurse(
            mid, hi, fmid, fr, fhi, right, tol / 2.0, depth - 1
        )

    mid = 0.5 * (a + b)
    flo, fmid, fhi = f(a), f(mid), f(b)
    whole = simpson(a, b, flo, fmid, fhi)
    scale = max(abs(whole), 1e-300)
    return recurse(a, b, flo, fmid, fhi, whole, rel_tol * scale, max_depth)


# ---------------------------------------------------------------------------
# growth fit

@dataclass(frozen=True)
class GrowthParams:
    """Fit of ball volume growth vol(B_t) ~ c * exp(a t) * t^b."""

    a: float
    b: float
    c: float
    residual: float
    t_lo: float
    t_hi: float

    @property
    def polynomial(self) -> bool:
        """True when no genuine exponential factor was found."""
        return self.a < 0.05


def fit_growth(space, t_grid) -> GrowthParams:
    """Least squares of log f(t) = log c + a*t + b*log t over t_grid."""
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 4 or np.any(np.diff(t) <= 0) or t[0] <= 0:
        raise ValueError("t_grid must be strictly increasing with length >= 4")
    vols = np.array([space.ball_volume(ti) for ti in t])
    if np.any(vols <= 0):
        raise ValueError("ball volumes must be positive on the fit grid")
    y = np.log(vols)
    design = np.column_stack([np.ones_like(t), t, np.log(t)])
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    rms = float(np.sqrt(np.mean(resid**2)))
    return GrowthParams(
        a=float(coef[1]),
        b=float(coef[2]),
        c=float(np.exp(coef[0])),
        residual=rms,
        t_lo=float(t[0]),
        t_hi=float(t[-1]),
    )


# ---------------------------------------------------------------------------
# continuum backends

class Space:
    """Common interface; see subclasses for the concrete metrics."""

    backend: str
    dimension: int | None  # metric dimension (None for graphs)
    point_dim: int | None  # coordinates per point (None for graphs)
    is_graph = False
    # True when equidistant sets of point pairs are geodesic lines that
    # bisector_point can parametrize (constant-curvature surfaces)
    has_line_bisectors = False

    @property
    def origin(self):
        raise NotImplementedError

    def _check(self, *arrays):
        for a in arrays:
            if a.ndim == 0 or a.shape[-1] != self.point_dim:
                raise ValueError(
                    "%s points need %d coordinates, got shape %r"
                    % (self.backend, self.point_dim, a.shape)
                )

    def distance(self, x, y):
        raise NotImplementedError

    def cross_distance(self, X, Y):
        """Distance matrix, shape (len(X), len(Y))."""
        raise NotImplementedError

    def distance_to_origin(self, X):
        return self.distance(np.asarray(X, dtype=float), self.origin)

    def geodesic_point(self, x, y, t):
        raise NotImplementedError("geodesic interpolation needs a continuum backend")

    def ball_volume(self, t) -> float:
        raise NotImplementedError

    def ball_volume_inverse(self, v) -> float:
        """Radius t with vol(B_t) = v, by bisection (volume is increasing)."""
        if v < 0:
            raise ValueError("volume must be nonnegative")
        if v == 0:
            return 0.0
        hi = 1.0
        while self.ball_volume(hi) < v:
            hi *= 2.0
            if hi > 1e6:
                raise ValueError("volume out of reachable range")
        lo = 0.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if self.ball_volume(mid) < v:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def sample_in_ball(self, t, rng, n=None):
        raise NotImplementedError("ball sampling needs a continuum backend")

    def probe_cloud(self, t, rng, n, pitch):
        """Quasi-uniform cloud of about n points covering B_t(o).

        Returns (points, spacing) where spacing is the cloud's covering pitch:
        no point of the ball is farther than ~spacing from a probe.  The
        planar backends override with jittered ring/sector strata, whose
        covering pitch is the max stratum diameter; the iid default reports
        the usual coverage scale, density * vol(spacing) = log n.
        """
        pts = self.sample_in_ball(t, rng, n=n)
        density = n / self.ball_volume(t)
        spacing = self.ball_volume_inverse(math.log(max(n, 3)) / density)
        return pts, max(spacing, pitch)

    def sphere_grid(self, r, k):
        """About k deterministic quasi-uniform points at distance r from o."""
        raise NotImplementedError

    def translate(self, base, pts):
        """Apply the isometry taking the origin to base to an array of points."""
        raise NotImplementedError

    def fit_growth(self, t_grid) -> GrowthParams:
        return fit_growth(self, t_grid)

    def __repr__(self):
        return "%s(%r)" % (type(self).__name__, self.backend)


class Euclidean(Space):
    def __init__(self, d):
        if d not in (2, 3):
            raise ValueError("euclidean backend supports d in {2, 3}")
        self.d = d
        self.dimension = d
        self.point_dim = d
        self.backend = "e%d" % d
        self.has_line_bisectors = d == 2

    @property
    def origin(self):
        return np.zeros(self.d)

    def distance(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self._check(x, y)
        return np.sqrt(np.sum((x - y) ** 2, axis=-1))

    def cross_distance(self, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        self._check(X, Y)
        sq = (
            np.sum(X**2, axis=1)[:, None]
            + np.sum(Y**2, axis=1)[None, :]
            - 2.0 * (X @ Y.T)
        )
        return np.sqrt(np.maximum(sq, 0.0))

    def distance_to_origin(self, X):
        X = np.asarray(X, dtype=float)
        return np.sqrt(np.sum(X**2, axis=-1))

    def geodesic_point(self, x, y, t):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t = np.asarray(t, dtype=float)
        return x + t[..., None] * (y - x) if t.ndim else x + t * (y - x)

    def ball_volume(self, t):
        if t < 0:
            raise ValueError("radius must be nonnegative")
        if self.d == 2:
            return math.pi * t * t
        return 4.0 / 3.0 * math.pi * t**3

    def sample_in_ball(self, t, rng, n=None):
        if t <= 0:
            raise ValueError("radius must be positive")
        gen = rng.generator
        m = 1 if n is None else int(n)
        u = gen.random(m)
        r = t * u ** (1.0 / self.d)
        if self.d == 2:
            theta = gen.random(m) * 2.0 * math.pi
            pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        else:
            g = gen.standard_normal((m, 3))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            pts = r[:, None] * g
        return pts[0] if n is None else pts

    def bisector_point(self, yi, yj, s):
        """Points at signed arclength s along the perpendicular bisector of
        each (yi, yj) row; s may be (m,) or (m, k)."""
        if self.d != 2:
            raise NotImplementedError("bisectors are planes for d=3")
        yi = np.asarray(yi, dtype=float)
        yj = np.asarray(yj, dtype=float)
        s = np.asarray(s, dtype=float)
        mid = 0.5 * (yi + yj)
        t = yj - yi
        u = np.column_stack([-t[:, 1], t[:, 0]])
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        if s.ndim == 2:
            return mid[:, None, :] + s[..., None] * u[:, None, :]
        return mid + s[:, None] * u

    def probe_cloud(self, t, rng, n, pitch):
        if self.d != 2:
            return super().probe_cloud(t, rng, n, pitch)

        def diam(a, b, phi):
            # attained at stratum corners: outer chord or diagonal
            phi = min(phi, math.pi)
            outer = 2.0 * b * math.sin(0.5 * phi)
            diag = math.sqrt(a * a + b * b - 2.0 * a * b * math.cos(phi))
            return max(outer, diag, b - a)

        r, theta, spacing = _ring_strata(
            t,
            pitch,
            rng,
            ring_volume=lambda a, b: math.pi * (b * b - a * a),
            radius_in_ring=lambda a, b, u: np.sqrt(a * a + u * (b * b - a * a)),
            stratum_diameter=diam,
        )
        return np.column_stack([r * np.cos(theta), r * np.sin(theta)]), spacing

    def sphere_grid(self, r, k):
        if self.d == 2:
            theta = np.linspace(0.0, 2.0 * math.pi, k, endpoint=False)
            return np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        # Fibonacci lattice on S^2
        i = np.arange(k) + 0.5
        phi = math.pi * (1.0 + math.sqrt(5.0)) * i
        z = 1.0 - 2.0 * i / k
        rho = np.sqrt(np.maximum(1.0 - z**2, 0.0))
        return r * np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])

    def translate(self, base, pts):
        return np.asarray(pts, dtype=float) + np.asarray(base, dtype=float)


class Hyperbolic2(Space):
    """Hyperbolic plane in the hyperboloid model.

    Chosen over the Poincare disk because distance and geodesics are
    closed-form in the Minkowski pairing and stay stable far from the origin;
    points are renormalized onto the sheet after every interpolation.
    """

    dimension = 2
    point_dim = 3
    backend = "h2"
    has_line_bisectors = True

    @property
    def origin(self):
        return np.array([1.0, 0.0, 0.0])

    def distance(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self._check(x, y)
        return _h2_distance(x, y)

    def cross_distance(self, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        self._check(X, Y)
        g = X @ (Y * np.array([1.0, -1.0, -1.0])).T
        return np.arccosh(np.maximum(g, 1.0))

    def distance_to_origin(self, X):
        X = np.asarray(X, dtype=float)
        return np.arccosh(np.maximum(X[..., 0], 1.0))

    def geodesic_point(self, x, y, t):
        return _h2_geodesic(
            np.asarray(x, dtype=float), np.asarray(y, dtype=float), t
        )

    def ball_volume(self, t):
        if t < 0:
            raise ValueError("radius must be nonnegative")
        return 2.0 * math.pi * (math.cosh(t) - 1.0)

    def sample_in_ball(self, t, rng, n=None):
        if t <= 0:
            raise ValueError("radius must be positive")
        gen = rng.generator
        m = 1 if n is None else int(n)
        u = gen.random(m)
        # radial CDF (cosh r - 1)/(cosh t - 1) inverted exactly
        r = np.arccosh(1.0 + u * (math.cosh(t) - 1.0))
        theta = gen.random(m) * 2.0 * math.pi
        pts = _h2_point(r, theta)
        return pts[0] if n is None else pts

    def bisector_point(self, yi, yj, s):
        """Points at arclength s along the bisector geodesic of each pair.

        The equidistant set {x : <x, yi - yj> = 0} in the Minkowski pairing
        is the geodesic through the midpoint m in the tangent direction
        orthogonal to the segment, so cosh(s) m + sinh(s) T2 sweeps it
        exactly; T2 = J(m x T1) is the Lorentz-orthonormal completion.
        """
        yi = np.asarray(yi, dtype=float)
        yj = np.asarray(yj, dtype=float)
        s = np.asarray(s, dtype=float)
        m = _h2_geodesic(yi, yj, 0.5)
        r = _h2_distance(m, yj)
        t1 = (yj - np.cosh(r)[:, None] * m) / np.sinh(r)[:, None]
        t2 = np.cross(m, t1) * np.array([1.0, -1.0, -1.0])
        t2 /= np.sqrt(np.maximum(-_mdot(t2, t2), 1e-300))[:, None]
        if s.ndim == 2:
            out = (
                np.cosh(s)[..., None] * m[:, None, :]
                + np.sinh(s)[..., None] * t2[:, None, :]
            )
        else:
            out = np.cosh(s)[:, None] * m + np.sinh(s)[:, None] * t2
        return _h2_normalize(out)

    def probe_cloud(self, t, rng, n, pitch):
        def diam(a, b, phi):
            phi = min(phi, math.pi)
            c = math.cos(phi)
            outer = math.acosh(max(math.cosh(b) ** 2 - math.sinh(b) ** 2 * c, 1.0))
            diag = math.acosh(
                max(math.cosh(a) * math.cosh(b) - math.sinh(a) * math.sinh(b) * c, 1.0)
            )
            return max(outer, diag, b - a)

        r, theta, spacing = _ring_strata(
            t,
            pitch,
            rng,
            ring_volume=lambda a, b: 2.0 * math.pi * (math.cosh(b) - math.cosh(a)),
            radius_in_ring=lambda a, b, u: np.arccosh(
                math.cosh(a) + u * (math.cosh(b) - math.cosh(a))
            ),
            stratum_diameter=diam,
        )
        return _h2_point(r, theta), spacing

    def sphere_grid(self, r, k):
        theta = np.linspace(0.0, 2.0 * math.pi, k, endpoint=False)
        return _h2_point(np.full(k, float(r)), theta)

    def translate(self, base, pts):
        T = _h2_translation(base)
        out = np.asarray(pts, dtype=float) @ T.T
        return _h2_normalize(out)


class ProductH2xH2(Space):
    """H2 x H2 with component distances combined by an L^p rule, p in {1,2,inf}.

    The L2 combination is the Riemannian product metric; L1 and Linf serve the
    closing-remarks variants.  Ball volume integrates shell area times the
    co-radius disc: V(t) = int_0^t 2 pi sinh(r) * A2(rho_p(t, r)) dr with
    A2(s) = 2 pi (cosh s - 1).  L1 and Linf reduce to closed forms; L2 runs
    adaptive Simpson at rel tol 1e-8 in the angle substitution r = t sin(phi).
    """

    dimension = 4
    point_dim = 6

    def __init__(self, p_norm):
        if p_norm not in (1, 2, math.inf):
            raise ValueError("p_norm must be 1, 2, or inf")
        self.p_norm = p_norm
        tag = {1: "l1", 2: "l2", math.inf: "linf"}[p_norm]
        self.backend = "h2xh2:%s" % tag

    @property
    def origin(self):
        return np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])

    def _combine(self, d1, d2):
        if self.p_norm == 1:
            return d1 + d2
        if self.p_norm == 2:
            return np.hypot(d1, d2)
        return np.maximum(d1, d2)

    def component_distances(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self._check(x, y)
        d1 = _h2_distance(x[..., :3], y[..., :3])
        d2 = _h2_distance(x[..., 3:], y[..., 3:])
        return d1, d2

    def distance(self, x, y):
        return self._combine(*self.component_distances(x, y))

    def cross_distance(self, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        self._check(X, Y)
        flip = np.array([1.0, -1.0, -1.0])
        g1 = X[:, :3] @ (Y[:, :3] * flip).T
        g2 = X[:, 3:] @ (Y[:, 3:] * flip).T
        d1 = np.arccosh(np.maximum(g1, 1.0))
        d2 = np.arccosh(np.maximum(g2, 1.0))
        return self._combine(d1, d2)

    def distance_to_origin(self, X):
        X = np.asarray(X, dtype=float)
        d1 = np.arccosh(np.maximum(X[..., 0], 1.0))
        d2 = np.arccosh(np.maximum(X[..., 3], 1.0))
        return self._combine(d1, d2)

    def geodesic_point(self, x, y, t):
        # both components move proportionally; for each L^p rule this gives
        # d(x, gamma(t)) = t d(x, y), a constant-speed geodesic
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        first = _h2_geodesic(x[..., :3], y[..., :3], t)
        second = _h2_geodesic(x[..., 3:], y[..., 3:], t)
        return np.concatenate([first, second], axis=-1)

    def _co_radius(self, t, r):
        if self.p_norm == 1:
            return t - r
        if self.p_norm == 2:
            return math.sqrt(max(t * t - r * r, 0.0))
        return t

    def ball_volume(self, t):
        if t < 0:
            raise ValueError("radius must be nonnegative")
        if t == 0:
            return 0.0
        two_pi = 2.0 * math.pi
        if self.p_norm == 1:
            # int_0^t 2pi sinh(r) * 2pi (cosh(t-r) - 1) dr in closed form
            return (two_pi**2) * (0.5 * t * math.sinh(t) - math.cosh(t) + 1.0)
        if self.p_norm == math.inf:
            return (two_pi * (math.cosh(t) - 1.0)) ** 2

        def integrand(phi):
            r = t * math.sin(phi)
            rho = t * math.cos(phi)
            return (
                two_pi
                * math.sinh(r)
                * two_pi
                * (math.cosh(rho) - 1.0)
                * t
                * math.cos(phi)
            )

        return adaptive_simpson(integrand, 0.0, 0.5 * math.pi)

    def _radial_cdf_grid(self, t, n=8192):
        """Grid inversion data for the first-component radius marginal."""
        r = np.linspace(0.0, t, n)
        rho = np.array([self._co_radius(t, ri) for ri in r])
        dens = np.sinh(r) * (np.cosh(rho) - 1.0)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(r))])
        cdf /= cdf[-1]
        return r, cdf

    def sample_in_ball(self, t, rng, n=None):
        if t <= 0:
            raise ValueError("radius must be positive")
        gen = rng.generator
        m = 1 if n is None else int(n)
        if t <= REJECTION_MAX_T:
            pts = self._sample_rejection(t, gen, m)
        else:
            pts = self._sample_stratified(t, gen, m)
        return pts[0] if n is None else pts

    def _sample_rejection(self, t, gen, m):
        # exact: uniform on B_t x B_t, accept iff the combined distance <= t
        out = np.empty((m, 6))
        filled = 0
        cosh_t = math.cosh(t)
        while filled < m:
            batch = max(2 * (m - filled), 64)
            u1 = gen.random(batch)
            u2 = gen.random(batch)
            r1 = np.arccosh(1.0 + u1 * (cosh_t - 1.0))
            r2 = np.arccosh(1.0 + u2 * (cosh_t - 1.0))
            keep = self._combine(r1, r2) <= t
            idx = np.flatnonzero(keep)[: m - filled]
            if idx.size == 0:
                continue
            th1 = gen.random(batch) * 2.0 * math.pi
            th2 = gen.random(batch) * 2.0 * math.pi
            out[filled : filled + idx.size, :3] = _h2_point(r1[idx], th1[idx])
            out[filled : filled + idx.size, 3:] = _h2_point(r2[idx], th2[idx])
            filled += idx.size
        return out

    def _sample_stratified(self, t, gen, m):
        # first-component radius from its exact marginal (grid-inverted CDF),
        # then the second component uniform in the co-radius ball
        grid_r, grid_cdf = self._radial_cdf_grid(t)
        u = gen.random(m)
        r1 = np.interp(u, grid_cdf, grid_r)
        th1 = gen.random(m) * 2.0 * math.pi
        rho = np.array([self._co_radius(t, ri) for ri in r1])
        u2 = gen.random(m)
        r2 = np.arccosh(1.0 + u2 * (np.cosh(rho) - 1.0))
        th2 = gen.random(m) * 2.0 * math.pi
        out = np.empty((m, 6))
        out[:, :3] = _h2_point(r1, th1)
        out[:, 3:] = _h2_point(r2, th2)
        return out

    def sphere_grid(self, r, k):
        m = max(3, int(round(k ** (1.0 / 3.0))))
        a = max(6, int(math.sqrt(max(k // m, 1))))
        if self.p_norm == math.inf:
            # boundary is (d1=r) x B_r union B_r x (d2=r)
            d1 = np.concatenate([np.full(m, r), np.linspace(0.0, r, m)])
            d2 = np.concatenate([np.linspace(0.0, r, m), np.full(m, r)])
        elif self.p_norm == 1:
            u = np.linspace(0.0, r, m)
            d1, d2 = u, r - u
        else:
            psi = np.linspace(0.0, 0.5 * math.pi, m)
            d1, d2 = r * np.sin(psi), r * np.cos(psi)
        th = np.linspace(0.0, 2.0 * math.pi, a, endpoint=False)
        r1 = np.repeat(np.repeat(d1, a), a)
        r2 = np.repeat(np.repeat(d2, a), a)
        t1 = np.tile(np.repeat(th, a), d1.size)
        t2 = np.tile(th, d1.size * a)
        out = np.empty((r1.size, 6))
        out[:, :3] = _h2_point(r1, t1)
        out[:, 3:] = _h2_point(r2, t2)
        return out

    def translate(self, base, pts):
        base = np.asarray(base, dtype=float)
        T1 = _h2_translation(base[:3])
        T2 = _h2_translation(base[3:])
        pts = np.asarray(pts, dtype=float)
        out = np.empty_like(pts)
        out[..., :3] = _h2_normalize(pts[..., :3] @ T1.T)
        out[..., 3:] = _h2_normalize(pts[..., 3:] @ T2.T)
        return out


# ---------------------------------------------------------------------------
# graph backends

class GraphWorld:
    """Finite window of a vertex-transitive graph family, CSR adjacency."""

    def __init__(self, family, indptr, indices, origin, params):
        self.family = family
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int32)
        self.origin = int(origin)
        self.params = params
        self.n_vertices = self.indptr.size - 1
        self._origin_dist = None

    @classmethod
    def grid(cls, d, side):
        if d < 1 or side < 2:
            raise ValueError("grid needs d >= 1 and side >= 2")
        n = side**d
        coords = np.indices((side,) * d).reshape(d, n)
        src = []
        dst = []
        for axis in range(d):
            mask = coords[axis] < side - 1
            stride = side ** (d - 1 - axis)
            a = np.flatnonzero(mask)
            b = a + stride
            src.append(a)
            dst.append(b)
            src.append(b)
            dst.append(a)
        src = np.concatenate(src)
        dst = np.concatenate(dst)
        order = np.argsort(src, kind="stable")
        src, dst = src[order], dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        origin = int(np.ravel_multi_index((side // 2,) * d, (side,) * d))
        return cls("grid", indptr, dst, origin, {"d": d, "side": side})

    @classmethod
    def regular_tree(cls, degree, depth):
        if degree < 3 or depth < 1:
            raise ValueError("regular tree needs degree >= 3 and depth >= 1")
        parents = [-1]
        level_start = 0
        level = [0]
        for dep in range(depth):
            nxt = []
            for v in level:
                k = degree if v == 0 else degree - 1
                for _ in range(k):
                    parents.append(v)
                    nxt.append(len(parents) - 1)
            level = nxt
            level_start += 1
        n = len(parents)
        src = []
        dst = []
        for v in range(1, n):
            src.append(v)
            dst.append(parents[v])
            src.append(parents[v])
            dst.append(v)
        src = np.asarray(src)
        dst = np.asarray(dst)
        order = np.argsort(src, kind="stable")
        src, dst = src[order], dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return cls("regular_tree", indptr, dst, 0, {"degree": degree, "depth": depth})

    def neighbors(self, v):
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def bfs_distances(self, sources):
        """Hop distance from the nearest source; -1 marks unreachable."""
        dist = np.full(self.n_vertices, -1, dtype=np.int32)
        frontier = np.asarray(sorted(set(int(s) for s in sources)), dtype=np.int64)
        dist[frontier] = 0
        hop = 0
        while frontier.size:
            hop += 1
            # gather all neighbors of the frontier in one CSR sweep
            counts = self.indptr[frontier + 1] - self.indptr[frontier]
            starts = self.indptr[frontier]
            nbr = self.indices[
                np.repeat(starts, counts)
                + (np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts))
            ]
            new = np.unique(nbr[dist[nbr] < 0])
            if new.size == 0:
                break
            dist[new] = hop
            frontier = new.astype(np.int64)
        return dist

    def origin_distances(self):
        if self._origin_dist is None:
            self._origin_dist = self.bfs_distances([self.origin])
        return self._origin_dist

    @property
    def eccentricity(self):
        return int(self.origin_distances().max())


class GraphSpace(Space):
    """Hop-metric adapter so graph worlds share the Space interface."""

    is_graph = True
    dimension = None
    point_dim = None

    def __init__(self, world: GraphWorld):
        self.world = world
        if world.family == "grid":
            self.backend = "grid:%d:%d" % (world.params["d"], world.params["side"])
        else:
            self.backend = "tree:%d:%d" % (world.params["degree"], world.params["depth"])

    @property
    def origin(self):
        return self.world.origin

    def distance(self, x, y):
        xa = np.atleast_1d(np.asarray(x))
        ya = np.atleast_1d(np.asarray(y))
        if xa.dtype.kind not in "iu" or ya.dtype.kind not in "iu":
            raise ValueError("graph points are integer vertex ids")
        scalar = np.asarray(x).ndim == 0 and np.asarray(y).ndim == 0
        if xa.size == 1:
            out = self.world.bfs_distances([int(xa[0])])[ya]
        else:
            if ya.size == 1:
                ya = np.full(xa.size, ya[0])
            out = np.array(
                [int(self.world.bfs_distances([int(a)])[int(b)]) for a, b in zip(xa, ya)]
            )
        return int(out[0]) if scalar else out

    def cross_distance(self, X, Y):
        X = np.atleast_1d(np.asarray(X, dtype=np.int64))
        Y = np.atleast_1d(np.asarray(Y, dtype=np.int64))
        return np.stack([self.world.bfs_distances([int(a)])[Y] for a in X])

    def distance_to_origin(self, X):
        return self.world.origin_distances()[np.asarray(X, dtype=np.int64)]

    def ball_volume(self, t):
        if t < 0:
            raise ValueError("radius must be nonnegative")
        d = self.world.origin_distances()
        return int(np.count_nonzero((d >= 0) & (d <= int(t))))


def parse_backend(spec: str) -> Space:
    """Backend selection strings used in configs.

    "e2", "e3", "h2", "h2xh2:l1", "h2xh2:l2", "h2xh2:linf",
    "grid:<d>:<side>", "tree:<degree>:<depth>".
    """
    s = spec.strip().lower()
    if s == "e2":
        return Euclidean(2)
    if s == "e3":
        return Euclidean(3)
    if s == "h2":
        return Hyperbolic2()
    if s.startswith("h2xh2:"):
        tag = s.split(":", 1)[1]
        table = {"l1": 1, "l2": 2, "linf": math.inf}
        if tag not in table:
            raise ValueError("unknown product norm %r" % tag)
        return ProductH2xH2(table[tag])
    if s.startswith("grid:"):
        parts = s.split(":")
        if len(parts) != 3:
            raise ValueError("grid backend is grid:<d>:<side>")
        return GraphSpace(GraphWorld.grid(int(parts[1]), int(parts[2])))
    if s.startswith("tree:"):
        parts = s.split(":")
        if len(parts) != 3:
            raise ValueError("tree backend is tree:<degree>:<depth>")
        return GraphSpace(GraphWorld.regular_tree(int(parts[1]), int(parts[2])))
    raise ValueError("unknown backend %r" % spec)
