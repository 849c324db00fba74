import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

import oracles
from voroperc.geometry import (
    Euclidean,
    GraphSpace,
    GraphWorld,
    Hyperbolic2,
    ProductH2xH2,
    adaptive_simpson,
    fit_growth,
    parse_backend,
)
from voroperc.rng import RandomStream

CONTINUUM = ["e2", "e3", "h2", "h2xh2:l1", "h2xh2:l2", "h2xh2:linf"]


def _sample_points(backend, n, seed=0, t=5.0):
    space = parse_backend(backend)
    return space, space.sample_in_ball(t, RandomStream(seed), n=n)


# ---------------------------------------------------------------------------
# parsing

def test_parse_backend_roundtrip():
    for name in CONTINUUM + ["grid:2:8", "tree:3:4"]:
        assert parse_backend(name).backend == name


def test_parse_backend_rejects_unknown():
    for bad in ["e4", "h3", "h2xh2:l3", "grid:2", "moebius"]:
        with pytest.raises(ValueError):
            parse_backend(bad)


# ---------------------------------------------------------------------------
# quadrature helper

def test_adaptive_simpson_exact_cases():
    assert adaptive_simpson(math.sin, 0.0, math.pi) == pytest.approx(2.0, rel=1e-9)
    assert adaptive_simpson(lambda x: x**1.5, 0.0, 1.0) == pytest.approx(0.4, rel=1e-7)


def test_adaptive_simpson_matches_scipy_on_lumpy_integrand():
    f = lambda x: math.exp(-x) * math.cosh(math.sin(3 * x))
    ref, _ = integrate.quad(f, 0.0, 5.0, limit=200)
    assert adaptive_simpson(f, 0.0, 5.0) == pytest.approx(ref, rel=1e-7)


# ---------------------------------------------------------------------------
# ball volumes

def test_ball_volume_closed_forms():
    assert Euclidean(2).ball_volume(2.0) == pytest.approx(4 * math.pi, rel=1e-12)
    assert Euclidean(3).ball_volume(1.5) == pytest.approx(4.5 * math.pi, rel=1e-12)
    assert Hyperbolic2().ball_volume(2.0) == pytest.approx(
        2 * math.pi * (math.cosh(2) - 1), rel=1e-12
    )


@pytest.mark.parametrize("norm,tag", [(1, "l1"), (2, "l2"), (math.inf, "linf")])
def test_product_volume_matches_quad_oracle(norm, tag):
    space = ProductH2xH2(norm)
    for t in [0.5, 1.0, 2.0, 4.0, 6.0, 9.0]:
        ref = oracles.ball_volume_product_quad(t, norm)
        assert space.ball_volume(t) == pytest.approx(ref, rel=1e-6)


def test_product_volume_small_t_euclidean_limit():
    # for tiny radii the product ball is a Euclidean ball of the combined norm
    t = 0.05
    assert ProductH2xH2(1).ball_volume(t) == pytest.approx(
        math.pi**2 * t**4 / 6, rel=2e-3
    )
    assert ProductH2xH2(2).ball_volume(t) == pytest.approx(
        math.pi**2 * t**4 / 2, rel=2e-3
    )
    assert ProductH2xH2(math.inf).ball_volume(t) == pytest.approx(
        math.pi**2 * t**4, rel=2e-3
    )


def test_ball_volume_ordering_by_norm():
    # L1 ball inside L2 ball inside Linf ball at equal radius
    for t in [1.0, 3.0, 6.0]:
        v1 = ProductH2xH2(1).ball_volume(t)
        v2 = ProductH2xH2(2).ball_volume(t)
        vinf = ProductH2xH2(math.inf).ball_volume(t)
        assert v1 < v2 < vinf


@pytest.mark.parametrize("backend", CONTINUUM)
def test_ball_volume_inverse_roundtrip(backend):
    space = parse_backend(backend)
    for t in [0.3, 1.7, 5.0]:
        v = space.ball_volume(t)
        assert space.ball_volume_inverse(v) == pytest.approx(t, abs=1e-9)


def test_ball_volume_rejects_negative_radius():
    for backend in CONTINUUM + ["grid:2:8"]:
        with pytest.raises(ValueError):
            parse_backend(backend).ball_volume(-1.0)


# ---------------------------------------------------------------------------
# metric axioms and distances

def test_h2_distance_examples():
    h2 = Hyperbolic2()
    o = h2.origin
    p = np.array([math.cosh(1.5), math.sinh(1.5), 0.0])
    assert h2.distance(o, p) == pytest.approx(1.5, abs=1e-12)
    q = np.array([math.cosh(1.0), -math.sinh(1.0), 0.0])
    r = np.array([math.cosh(1.0), math.sinh(1.0), 0.0])
    assert h2.distance(q, r) == pytest.approx(2.0, abs=1e-12)


def test_product_distance_combines_components():
    o2 = np.array([1.0, 0.0, 0.0])
    a = np.concatenate([o2, o2])
    b = np.concatenate(
        [
            [math.cosh(3.0), math.sinh(3.0), 0.0],
            [math.cosh(4.0), 0.0, math.sinh(4.0)],
        ]
    )
    assert ProductH2xH2(1).distance(a, b) == pytest.approx(7.0, abs=1e-12)
    assert ProductH2xH2(2).distance(a, b) == pytest.approx(5.0, abs=1e-12)
    assert ProductH2xH2(math.inf).distance(a, b) == pytest.approx(4.0, abs=1e-12)


def test_distance_shape_validation():
    with pytest.raises(ValueError):
        Hyperbolic2().distance(np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        ProductH2xH2(2).cross_distance(np.zeros((4, 3)), np.zeros((4, 6)))
    with pytest.raises(ValueError):
        Euclidean(2).distance(np.zeros(3), np.zeros(3))


@pytest.mark.parametrize("backend", CONTINUUM)
def test_cross_distance_agrees_with_pairwise(backend):
    space, pts = _sample_points(backend, 40, seed=3)
    other = space.sample_in_ball(5.0, RandomStream(4), n=30)
    mat = space.cross_distance(pts, other)
    assert mat.shape == (40, 30)
    for i in [0, 7, 39]:
        for j in [0, 11, 29]:
            assert mat[i, j] == pytest.approx(
                float(space.distance(pts[i], other[j])), abs=1e-10
            )


@settings(max_examples=60, deadline=None)
@given(
    data=st.tuples(
        *[st.floats(min_value=0.0, max_value=8.0) for _ in range(3)],
        *[st.floats(min_value=0.0, max_value=2 * math.pi) for _ in range(3)],
    )
)
@pytest.mark.parametrize("backend", ["e2", "h2", "h2xh2:l1", "h2xh2:l2", "h2xh2:linf"])
def test_metric_axioms(backend, data):
    space = parse_backend(backend)
    r, theta = data[:3], data[3:]

    def mk(i):
        if backend == "e2":
            return np.array([r[i] * math.cos(theta[i]), r[i] * math.sin(theta[i])])
        h = np.array(
            [math.cosh(r[i]), math.sinh(r[i]) * math.cos(theta[i]), math.sinh(r[i]) * math.sin(theta[i])]
        )
        if backend == "h2":
            return h
        g = np.array(
            [math.cosh(r[(i + 1) % 3]), math.sinh(r[(i + 1) % 3]) * math.sin(theta[i]), math.sinh(r[(i + 1) % 3]) * math.cos(theta[i])]
        )
        return np.concatenate([h, g])

    x, y, z = mk(0), mk(1), mk(2)
    dxy = float(space.distance(x, y))
    assert dxy >= 0
    assert dxy == pytest.approx(float(space.distance(y, x)), abs=1e-10)
    # arccosh near 1 floors at sqrt(2 eps) * cosh(r); r <= 8 gives ~2e-5
    assert float(space.distance(x, x)) == pytest.approx(0.0, abs=1e-4)
    assert float(space.distance(x, z)) <= dxy + float(space.distance(y, z)) + 1e-4


# ---------------------------------------------------------------------------
# geodesics

@pytest.mark.parametrize("backend", CONTINUUM)
def test_geodesic_constant_speed(backend):
    space, pts = _sample_points(backend, 20, seed=11, t=4.0)
    x, y = pts[:10], pts[10:]
    d = space.distance(x, y)
    for t in [0.0, 0.25, 0.5, 0.8, 1.0]:
        g = space.geodesic_point(x, y, np.full(10, t))
        np.testing.assert_allclose(space.distance(x, g), t * d, atol=5e-5)
        np.testing.assert_allclose(space.distance(g, y), (1 - t) * d, atol=5e-5)


def test_geodesic_endpoints_and_midpoint_scalar():
    h2 = Hyperbolic2()
    x = np.array([math.cosh(2.0), math.sinh(2.0), 0.0])
    y = np.array([math.cosh(1.0), 0.0, math.sinh(1.0)])
    np.testing.assert_allclose(h2.geodesic_point(x, y, 0.0), x, atol=1e-12)
    np.testing.assert_allclose(h2.geodesic_point(x, y, 1.0), y, atol=1e-12)
    mid = h2.geodesic_point(x, y, 0.5)
    assert float(h2.distance(x, mid)) == pytest.approx(
        float(h2.distance(mid, y)), abs=1e-10
    )


def test_geodesic_degenerate_pair():
    h2 = Hyperbolic2()
    x = np.array([math.cosh(1.0), math.sinh(1.0), 0.0])
    np.testing.assert_allclose(h2.geodesic_point(x, x, 0.7), x, atol=1e-12)


# ---------------------------------------------------------------------------
# isometries

@pytest.mark.parametrize("backend", ["e2", "h2", "h2xh2:l2", "h2xh2:l1"])
def test_translate_moves_origin_and_preserves_distances(backend):
    space, pts = _sample_points(backend, 25, seed=21, t=3.0)
    base = space.sample_in_ball(6.0, RandomStream(22))
    moved = space.translate(base, pts)
    orig_at = space.translate(base, space.origin[None, :])[0]
    assert float(space.distance(orig_at, base)) == pytest.approx(0.0, abs=1e-7)
    before = space.cross_distance(pts, pts)
    after = space.cross_distance(moved, moved)
    # self-distances after moving to radius <= 9 float at ~cosh(9)*sqrt(eps)
    np.testing.assert_allclose(after, before, atol=2e-5)


def test_h2_points_stay_on_sheet_after_translate():
    h2 = Hyperbolic2()
    pts = h2.sample_in_ball(6.0, RandomStream(31), n=200)
    base = np.array([math.cosh(3.0), math.sinh(3.0) * 0.6, math.sinh(3.0) * 0.8])
    moved = h2.translate(base, pts)
    q = moved[:, 0] ** 2 - moved[:, 1] ** 2 - moved[:, 2] ** 2
    # evaluating the form at distance ~9 already costs ~cosh(9)^2 * eps
    np.testing.assert_allclose(q, 1.0, atol=1e-6)


# ---------------------------------------------------------------------------
# ball sampling

@pytest.mark.parametrize(
    "backend,t",
    [("e2", 3.0), ("e3", 2.0), ("h2", 4.0), ("h2", 10.0),
     ("h2xh2:l1", 3.0), ("h2xh2:l2", 3.0), ("h2xh2:linf", 3.0),
     ("h2xh2:l1", 6.5), ("h2xh2:l2", 6.5), ("h2xh2:linf", 6.5)],
)
def test_samples_lie_in_ball(backend, t):
    space, pts = _sample_points(backend, 2000, seed=5, t=t)
    d = space.distance_to_origin(pts)
    assert float(np.max(d)) <= t + 1e-9


@pytest.mark.parametrize(
    "backend,t,cdf",
    [
        ("e2", 3.0, lambda r: oracles.radial_cdf_e2(r, 3.0)),
        ("e3", 2.0, lambda r: oracles.radial_cdf_e3(r, 2.0)),
        ("h2", 4.0, lambda r: oracles.radial_cdf_h2(r, 4.0)),
        ("h2", 12.0, lambda r: oracles.radial_cdf_h2(r, 12.0)),
    ],
)
def test_radial_law(backend, t, cdf):
    space, pts = _sample_points(backend, 4000, seed=6, t=t)
    r = space.distance_to_origin(pts)
    assert stats.kstest(r, cdf).pvalue > 1e-3


@pytest.mark.parametrize("norm", [1, 2, math.inf])
@pytest.mark.parametrize("t", [3.0, 6.5])
def test_product_first_radius_law(norm, t):
    # covers both the rejection regime (t<=4) and the stratified regime (t>4)
    space = ProductH2xH2(norm)
    pts = space.sample_in_ball(t, RandomStream(7), n=4000)
    r1 = np.arccosh(np.maximum(pts[:, 0], 1.0))
    assert stats.kstest(r1, lambda r: oracles.product_first_radius_cdf(r, t, norm)).pvalue > 1e-3


def test_h2_angle_uniform():
    pts = Hyperbolic2().sample_in_ball(5.0, RandomStream(8), n=4000)
    theta = np.arctan2(pts[:, 2], pts[:, 1]) / (2 * math.pi) + 0.5
    assert stats.kstest(theta, "uniform").pvalue > 1e-3


@pytest.mark.parametrize("norm", [1, 2, math.inf])
def test_product_volume_against_hit_fraction(norm):
    # samples in the larger ball land in the smaller one at the volume ratio;
    # exercises sampler and quadrature together through both regimes
    space = ProductH2xH2(norm)
    for t_small, t_big, n in [(3.0, 4.0, 30000), (5.0, 6.5, 30000)]:
        pts = space.sample_in_ball(t_big, RandomStream(9), n=n)
        frac = float(np.mean(space.distance_to_origin(pts) <= t_small))
        expect = space.ball_volume(t_small) / space.ball_volume(t_big)
        se = math.sqrt(expect * (1 - expect) / n)
        assert abs(frac - expect) < max(4 * se, 0.01 * expect)


# ---------------------------------------------------------------------------
# sphere grids

@pytest.mark.parametrize("backend", CONTINUUM)
def test_sphere_grid_on_sphere(backend):
    space = parse_backend(backend)
    pts = space.sphere_grid(2.5, 64)
    d = space.distance_to_origin(pts)
    np.testing.assert_allclose(d, 2.5, atol=1e-8)
    assert len(pts) >= 32


# ---------------------------------------------------------------------------
# growth fits

def test_growth_e2_polynomial():
    g = fit_growth(Euclidean(2), np.linspace(5, 15, 24))
    assert g.polynomial
    assert abs(g.a) < 1e-8
    assert g.b == pytest.approx(2.0, abs=1e-6)
    assert g.residual < 1e-9


def test_growth_h2_exponential_rate_one():
    g = fit_growth(Hyperbolic2(), np.linspace(5, 15, 24))
    assert not g.polynomial
    assert g.a == pytest.approx(1.0, abs=0.05)
    assert abs(g.b) < 0.15
    assert g.residual < 0.01


@pytest.mark.parametrize(
    "norm,rate,tol",
    [(1, 1.0, 0.1), (2, math.sqrt(2.0), 0.08), (math.inf, 2.0, 0.05)],
)
def test_growth_product_rates(norm, rate, tol):
    g = fit_growth(ProductH2xH2(norm), np.linspace(5, 12, 18))
    assert not g.polynomial
    assert g.a == pytest.approx(rate, abs=tol)


def test_growth_rejects_bad_grid():
    with pytest.raises(ValueError):
        fit_growth(Euclidean(2), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        fit_growth(Euclidean(2), [3.0, 2.0, 4.0, 5.0])


# ---------------------------------------------------------------------------
# graph worlds

def test_grid_world_structure():
    gs = parse_backend("grid:2:5")
    w = gs.world
    assert w.n_vertices == 25
    corner = 0
    center = w.origin
    assert len(w.neighbors(corner)) == 2
    assert len(w.neighbors(center)) == 4
    # hop metric is the L1 metric on coordinates
    far = 24
    assert int(gs.distance(corner, far)) == 8
    assert gs.ball_volume(1) == 5
    assert gs.ball_volume(2) == 13


def test_grid_world_eccentricity():
    gs = parse_backend("grid:2:128")
    assert gs.world.n_vertices == 128 * 128
    assert gs.world.eccentricity == 128


def test_tree_world_structure():
    gs = parse_backend("tree:3:2")
    w = gs.world
    assert w.n_vertices == 10
    assert len(w.neighbors(0)) == 3
    degs = np.diff(w.indptr)
    assert int(np.sum(degs == 1)) == 6  # leaves
    assert gs.ball_volume(1) == 4
    assert gs.ball_volume(2) == 10


def test_tree_world_size_at_depth_14():
    gs = parse_backend("tree:3:14")
    assert gs.world.n_vertices == 49150


def test_graph_growth_fits():
    tree = fit_growth(parse_backend("tree:3:10"), np.arange(2.0, 10.0))
    assert tree.a > 0.3  # genuinely exponential
    grid = fit_growth(parse_backend("grid:2:200"), np.arange(5.0, 96.0, 5.0))
    assert grid.polynomial
    assert grid.b == pytest.approx(2.0, abs=0.25)


def test_graph_space_rejects_continuum_ops():
    gs = parse_backend("grid:2:8")
    with pytest.raises(NotImplementedError):
        gs.geodesic_point(0, 5, 0.5)
    with pytest.raises(NotImplementedError):
        gs.sample_in_ball(2.0, RandomStream(0))
    with pytest.raises(ValueError):
        gs.distance(0.5, 3)


def test_graph_cross_distance_symmetric_block():
    gs = parse_backend("grid:2:7")
    ids = np.array([0, 10, 24, 48])
    mat = gs.cross_distance(ids, ids)
    assert mat.shape == (4, 4)
    assert np.array_equal(mat, mat.T)
    assert np.all(np.diag(mat) == 0)
