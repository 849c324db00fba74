import math

import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

import oracles
from voroperc.geometry import GraphWorld, parse_backend
from voroperc.pointprocess import MarkedPointSet, sample_poisson
from voroperc.rng import RandomStream
from voroperc.tessellation import (
    assign,
    build_adjacency,
    build_graph_adjacency,
    build_tessellation,
    cell_count_probe,
    escape_bound,
    escape_bound_check,
    escape_radius,
    graph_voronoi,
    touching_probe,
    typical_cell_radius,
)


def _manual_mps(backend, nuclei, window, intensity=1.0):
    nuclei = np.asarray(nuclei, dtype=float)
    return MarkedPointSet(
        backend=backend,
        nuclei=nuclei,
        labels=np.linspace(0.1, 0.9, len(nuclei)),
        intensity=intensity,
        window_radius=window,
    )


def _tess(backend, nuclei, window, seed=0, intensity=1.0, rho=64.0):
    space = parse_backend(backend)
    mps = _manual_mps(backend, nuclei, window, intensity)
    t = build_tessellation(space, mps, RandomStream(seed), rho_probe=rho,
                           interior_margin=math.inf)
    return space, t


# ---------------------------------------------------------------------------
# build and assign

def test_probe_distances_ordered():
    space = parse_backend("h2")
    mps = sample_poisson(space, 1.0, 4.0, RandomStream(1).child(0))
    t = build_tessellation(space, mps, RandomStream(1).child(1))
    assert np.all(t.d1 <= t.d2 + 1e-12)
    assert np.all(t.d2 <= t.d3 + 1e-12)
    assert len(t.probes) >= t.rho_probe * len(mps) * 0.5


def test_assignment_matches_kdtree_oracle():
    space, t = _tess("e2", np.random.default_rng(3).uniform(-4, 4, (120, 2)), 6.0)
    ref = oracles.nearest_assignment_e2(t.points.nuclei, t.probes)
    np.testing.assert_array_equal(t.owner, ref)


def test_assignment_invariant_under_nucleus_permutation():
    rng = np.random.default_rng(4)
    nuclei = rng.uniform(-3, 3, (40, 2))
    perm = rng.permutation(40)
    space, t1 = _tess("e2", nuclei, 5.0, seed=9)
    _, t2 = _tess("e2", nuclei[perm], 5.0, seed=9)
    np.testing.assert_array_equal(perm[t2.owner], t1.owner)


def test_assign_single_nucleus():
    space, t = _tess("e2", [[1.0, 0.0]], 3.0)
    a = assign(space, t, np.array([2.0, 0.0]))
    assert a.cell == 0
    assert a.nearest == pytest.approx(1.0)
    assert a.runner_up == math.inf
    assert not a.tie


def test_assign_two_nuclei_and_tie_flag():
    space, t = _tess("e2", [[0.0, 0.0], [4.0, 0.0]], 6.0)
    a = assign(space, t, np.array([1.0, 0.0]))
    assert a.cell == 0
    assert a.nearest == pytest.approx(1.0)
    assert a.runner_up == pytest.approx(3.0)
    assert not a.tie
    on_bisector = assign(space, t, np.array([2.0, 5.0]))
    assert on_bisector.tie


def test_probe_budget_guard():
    space = parse_backend("e2")
    mps = _manual_mps("e2", [[0.0, 0.0]], 500.0, intensity=10.0)
    with pytest.raises(ValueError, match="probe budget"):
        build_tessellation(space, mps, RandomStream(0))


def test_graph_backend_rejected():
    space = parse_backend("grid:2:8")
    mps = sample_poisson(space, 0.5, 4, RandomStream(0))
    with pytest.raises(ValueError, match="graph_voronoi"):
        build_tessellation(space, mps, RandomStream(1))


# ---------------------------------------------------------------------------
# adjacency

def test_two_cells_one_edge():
    space, t = _tess("e2", [[-1.0, 0.0], [1.0, 0.0]], 4.0)
    adj = build_adjacency(space, t)
    assert adj.edges == [(0, 1)]
    w = adj.witness(0, 1)
    assert w.equidistance_gap <= adj.eta_eq
    assert w.margin == math.inf  # no third nucleus anywhere


def test_exact_square_degenerate_tie():
    nuclei = [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]
    space, t = _tess("e2", nuclei, 4.0, seed=2)
    adj = build_adjacency(space, t)
    sides = {(0, 1), (0, 2), (1, 3), (2, 3)}
    assert sides.issubset(set(adj.edges))
    # both diagonals meet at the co-circular center and are flagged
    assert adj.has_edge(0, 3) and adj.has_edge(1, 2)
    assert adj.degenerate_ties > 0


def test_perturbed_square_resolves_one_diagonal():
    nuclei = np.array([[1e-3, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
    space, t = _tess("e2", nuclei, 4.0, seed=2)
    adj = build_adjacency(space, t)
    ref = oracles.delaunay_adjacency_e2(nuclei)
    diagonals = [(0, 3), (1, 2)]
    present = [d for d in diagonals if adj.has_edge(*d)]
    assert len(present) == 1
    assert present[0] in ref
    assert adj.degenerate_ties == 0


@pytest.mark.parametrize("seed", [11, 12, 13])
def test_witness_adjacency_vs_circumcircle_oracle(seed):
    space = parse_backend("e2")
    mps = sample_poisson(space, 1.0, 7.0, RandomStream(seed).child(0))
    assert 64 < len(mps) <= 200
    t = build_tessellation(space, mps, RandomStream(seed).child(1),
                           interior_margin=math.inf)
    adj = build_adjacency(space, t)
    ref = oracles.delaunay_adjacency_e2(mps.nuclei)
    # compare away from the hull where the probe cloud has full context
    r = mps.origin_distances()
    interior = np.flatnonzero(r < 4.5)
    ref_int = {e for e in ref if e[0] in interior and e[1] in interior}
    got_int = {e for e in adj.edges if e[0] in interior and e[1] in interior}
    missing = ref_int - got_int
    spurious = got_int - ref_int
    agree = len(ref_int & got_int)
    assert agree / max(len(ref_int), 1) >= 0.99, (missing, spurious)
    assert not spurious


def test_witnesses_revalidate_by_direct_evaluation():
    space = parse_backend("h2")
    mps = sample_poisson(space, 1.0, 4.5, RandomStream(21).child(0))
    t = build_tessellation(space, mps, RandomStream(21).child(1),
                           interior_margin=math.inf)
    adj = build_adjacency(space, t)
    assert len(adj.edges) > 0
    Y = mps.nuclei
    for (i, j) in adj.edges:
        w = adj.witness(i, j)
        d_all = space.cross_distance(w.location[None, :], Y)[0]
        di, dj = d_all[i], d_all[j]
        assert abs(di - dj) <= adj.eta_eq * (1 + 1e-6) + 1e-12
        others = np.delete(d_all, [i, j])
        margin = (others.min() if others.size else math.inf) - max(di, dj)
        assert margin == pytest.approx(w.margin, abs=1e-9)
        assert w.margin >= -1e-9


def test_adjacency_symmetric_loop_free():
    space = parse_backend("e2")
    mps = sample_poisson(space, 1.0, 5.0, RandomStream(22).child(0))
    t = build_tessellation(space, mps, RandomStream(22).child(1),
                           interior_margin=math.inf)
    adj = build_adjacency(space, t)
    for (i, j) in adj.edges:
        assert i < j
        assert j in adj.neighbors(i)
        assert i in adj.neighbors(j)


def test_adjacency_requires_probes():
    space, t = _tess("e2", [[0.0, 0.0], [1.0, 0.0]], 3.0)
    t.probes = t.probes[:0]
    with pytest.raises(ValueError):
        build_adjacency(space, t)


# ---------------------------------------------------------------------------
# touching and walls

def test_wall_margin_three_nuclei_example():
    # bisector of the pair at (+-1, 0) is x=0; the third nucleus (0, 0.2)
    # caps the attainable margin at 0.2 (approached far down the bisector),
    # so a D=0.05 wall exists inside a window of radius 12 but D=0.5 cannot.
    nuclei = [[0.0, 0.2], [-1.0, 0.0], [1.0, 0.0]]
    space, t = _tess("e2", nuclei, 12.0, seed=5, intensity=0.02)
    adj = build_adjacency(space, t)
    assert adj.has_edge(1, 2)
    m = adj.witness(1, 2).margin
    assert 0.1 < m < 0.2
    # supremum margin along the wall inside the window
    sup = abs(-12.0 - 0.2) - math.sqrt(1.0 + 144.0)
    assert m <= sup + 1e-9


def test_touching_probe_reports_consistent():
    space = parse_backend("e2")
    reports, summary = touching_probe(space, 1.0, 1.0, 0.05, 30, RandomStream(30))
    assert len(reports) == 30
    for r in reports:
        assert r.pairs_wall_D <= r.pairs_touching <= r.pairs_total
        assert r.all_pairs_touch == (r.pairs_touching == r.pairs_total)
    assert summary.replicas_used + summary.discarded == 30
    if summary.replicas_used:
        assert 0.0 <= summary.ci_lo <= summary.p_all_touch <= summary.ci_hi <= 1.0


def test_wall_counts_non_increasing_in_D():
    space = parse_backend("e2")
    walls = []
    for D in [0.01, 0.05, 0.2]:
        reports, _ = touching_probe(space, 1.0, 1.0, D, 20, RandomStream(31))
        walls.append(np.array([r.pairs_wall_D for r in reports]))
        # same seed -> same realizations -> touching counts identical
        if len(walls) > 1:
            np.testing.assert_array_equal(
                [r.pairs_touching for r in reports], touching_ref
            )
        touching_ref = [r.pairs_touching for r in reports]
    assert np.all(walls[0] >= walls[1])
    assert np.all(walls[1] >= walls[2])


def test_touching_wall_at_zero_D_matches_touching():
    space = parse_backend("e2")
    reports, _ = touching_probe(space, 1.0, 1.0, 0.0, 15, RandomStream(32))
    for r in reports:
        if not r.discarded:
            assert r.pairs_wall_D == r.pairs_touching


def test_cell_count_probe_basics():
    space = parse_backend("h2")
    dist = cell_count_probe(space, 0.5, 1.0, 40, RandomStream(33))
    assert np.all(dist.counts >= 1)
    p1, lo1, hi1 = dist.prob_at_least(1)
    assert p1 == 1.0
    p3, lo3, hi3 = dist.prob_at_least(3)
    assert 0.0 <= lo3 <= p3 <= hi3 <= 1.0
    assert dist.discarded + len(dist.counts) == 40


def test_default_window_is_ball_plus_margin():
    space = parse_backend("e2")
    r_typ = typical_cell_radius(space, 1.0)
    assert r_typ == pytest.approx(1.0 / math.sqrt(math.pi), rel=1e-9)
    reports, _ = touching_probe(space, 1.0, 2.0, 0.0, 2, RandomStream(34))
    assert reports  # runs with the default window R + 3 r_typ


# ---------------------------------------------------------------------------
# cell connectivity via probe graphs

@pytest.mark.parametrize("backend,lam,window", [("e2", 1.0, 3.5), ("h2", 1.0, 3.0)])
def test_cells_are_probe_connected(backend, lam, window):
    space = parse_backend(backend)
    bad = 0
    total = 0
    for cfg in range(50):
        mps = sample_poisson(space, lam, window, RandomStream(40 + cfg).child(0))
        if len(mps) < 2:
            continue
        t = build_tessellation(space, mps, RandomStream(40 + cfg).child(1),
                               interior_margin=math.inf)
        eps = 2.0 * t.probe_spacing
        for c in range(t.n_cells):
            ids = t.cell_probe_ids(c)
            if ids.size < 8:
                continue
            pts = t.probes[ids]
            dm = space.cross_distance(pts, pts)
            comp = connected_components(csr_matrix(dm <= eps), directed=False)[0]
            total += 1
            if comp != 1:
                bad += 1
    assert total > 100
    assert bad == 0


# ---------------------------------------------------------------------------
# graph Voronoi

def test_graph_voronoi_path_tie_to_smaller_id():
    world = GraphWorld.grid(1, 5)
    gv = graph_voronoi(world, [0, 4])
    np.testing.assert_array_equal(gv.owner, [0, 0, 0, 4, 4])
    np.testing.assert_array_equal(gv.dist, [0, 1, 2, 1, 0])
    assert gv.unassigned.size == 0


def test_graph_voronoi_all_nuclei_singletons():
    world = GraphWorld.grid(2, 4)
    gv = graph_voronoi(world, np.arange(16))
    np.testing.assert_array_equal(gv.owner, np.arange(16))
    assert np.all(gv.dist == 0)


def test_graph_voronoi_single_nucleus_covers():
    world = GraphWorld.regular_tree(3, 4)
    gv = graph_voronoi(world, [7])
    assert np.all(gv.owner == 7)
    assert gv.unassigned.size == 0


def test_graph_voronoi_unassigned_component():
    world = GraphWorld("grid", np.array([0, 0, 0]), np.array([], dtype=np.int32),
                       0, {"d": 1, "side": 2})
    gv = graph_voronoi(world, [0])
    assert gv.owner[1] == -1
    np.testing.assert_array_equal(gv.unassigned, [1])


def test_graph_voronoi_owner_is_min_nearest():
    world = GraphWorld.grid(2, 9)
    gen = np.random.default_rng(7)
    nuclei = np.sort(gen.choice(81, size=8, replace=False))
    gv = graph_voronoi(world, nuclei)
    dist_all = np.stack([world.bfs_distances([int(s)]) for s in nuclei])
    best = dist_all.min(axis=0)
    np.testing.assert_array_equal(gv.dist, best)
    expect_owner = nuclei[np.argmax(dist_all == best[None, :], axis=0)]
    np.testing.assert_array_equal(gv.owner, expect_owner)


def test_graph_adjacency_pairs():
    world = GraphWorld.grid(1, 6)
    gv = graph_voronoi(world, [0, 3, 5])
    adj = build_graph_adjacency(world, gv.owner)
    assert adj == {(0, 3), (3, 5)}


# ---------------------------------------------------------------------------
# escape bound

def test_escape_bound_formula_against_oracles():
    assert escape_bound(parse_backend("e2"), 1.0, 8.0) == pytest.approx(
        oracles.escape_bound_e2(1.0, 8.0), rel=1e-12
    )
    assert escape_bound(parse_backend("h2"), 1.0, 6.0) == pytest.approx(
        oracles.escape_bound_h2(1.0, 6.0), rel=1e-12
    )


def test_escape_bound_vacuous_flag():
    space = parse_backend("e2")
    chk = escape_bound_check(space, 0.01, 1.0, 20, RandomStream(50))
    assert chk.vacuous
    assert chk.bound >= 1.0


def test_escape_empirical_below_bound_e2():
    space = parse_backend("e2")
    chk = escape_bound_check(space, 1.0, 5.0, 300, RandomStream(51))
    assert not chk.vacuous
    assert chk.empirical <= chk.bound
    assert chk.empirical == 0.0  # bound ~1e-7 at this radius


def test_escape_empirical_below_bound_h2():
    space = parse_backend("h2")
    chk = escape_bound_check(space, 1.0, 3.0, 800, RandomStream(52))
    assert not chk.vacuous
    assert chk.bound == pytest.approx(oracles.escape_bound_h2(1.0, 3.0), rel=1e-12)
    assert chk.empirical <= chk.bound


def test_escape_radius_solves_bound():
    space = parse_backend("e2")
    r = escape_radius(space, 1.0, 0.999)
    assert escape_bound(space, 1.0, r) <= 1e-3 + 1e-9
    assert escape_bound(space, 1.0, 0.9 * r) > 1e-3
