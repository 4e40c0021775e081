import math

import numpy as np
import pytest

from convexflow.convex_body import convex_hull, cube_points, tetrahedron_points
from convexflow.discretization import ball_radial, embed, icosphere, mesh_from_body, sample_radial
from convexflow.geodesics import (
    BudgetExceeded,
    DistancePanel,
    SurfacePoint,
    dijkstra,
    distance_to_point,
    fast_march,
    locate_direction,
    march_from,
    panel_eval,
    random_panel,
    unfold_polyhedron,
    vertex_point,
)
from convexflow.verification import distance_symmetry


@pytest.fixture(scope="module")
def sphere6():
    s = icosphere(6)
    return s, embed(sample_radial(ball_radial(1.0), s), s)


@pytest.fixture(scope="module")
def sphere4():
    s = icosphere(4)
    return s, embed(sample_radial(ball_radial(1.0), s), s)


def _antipode(s, v):
    return int(np.argmin(s.directions @ s.directions[v]))


def test_antipodal_distance_on_sphere(sphere6):
    s, m = sphere6
    T = fast_march(m, 0)
    a = _antipode(s, 0)
    assert T[a] == pytest.approx(math.pi, rel=0.01)
    D = dijkstra(m, 0)
    assert math.pi <= D[a] <= 1.1 * math.pi
    assert np.all(T <= D + 1e-12)


def test_fast_marching_tracks_great_circles(sphere6):
    s, m = sphere6
    T = fast_march(m, 5)
    exact = np.arccos(np.clip(s.directions @ s.directions[5], -1, 1))
    assert np.abs(T - exact).max() < 0.02


def test_exact_scaling(sphere4):
    _, m = sphere4
    np.testing.assert_array_equal(fast_march(m.scaled(2.0), 3), 2 * fast_march(m, 3))


def test_symmetry_and_triangle_inequality(sphere4):
    s, m = sphere4
    assert distance_symmetry(m, [(0, 100), (7, 2000), (50, 51)]) < 0.01
    Ta, Tb = fast_march(m, 0), fast_march(m, 900)
    # d(0, x) <= d(0, 900) + d(900, x), up to first-order discretisation error
    assert np.all(Ta <= Ta[900] + Tb + 0.02)


def test_march_reports_fallbacks(sphere4):
    _, m = sphere4
    r = march_from(m, 0)
    assert r.distances[0] == 0 and r.unfold_fallbacks >= 0


def test_point_source_inside_triangle(sphere4):
    s, m = sphere4
    d = np.array([0.3, -0.2, 0.9])
    src = locate_direction(s, d)
    assert src.vertex(m) is None
    assert sum(src.bary) == pytest.approx(1.0)
    T = fast_march(m, src)
    corners = m.triangles[src.triangle]
    assert np.all(T[corners] < np.max(m.current_lengths))
    # same-triangle target: straight segment in the layout
    tgt = SurfacePoint(src.triangle, (0.2, 0.3, 0.5))
    dd = distance_to_point(m, T, tgt, src)
    p = m.positions[corners]
    exact = np.linalg.norm(np.asarray(src.bary) @ p - np.asarray(tgt.bary) @ p)
    assert dd == pytest.approx(exact, rel=1e-9)


def test_vertex_point_roundtrip(sphere4):
    _, m = sphere4
    assert vertex_point(m, 42).vertex(m) == 42
    assert locate_direction(icosphere(4), icosphere(4).directions[42]).vertex(m) == 42


def _nearest(m, x):
    return int(np.argmin(np.linalg.norm(m.positions - np.asarray(x), axis=1)))


def test_cube_mesh_distances_are_exact(cube):
    # flat faces of right isosceles triangles: straight geodesics are recovered exactly
    for level in (3, 5):
        m = mesh_from_body(cube, level)
        T = fast_march(m, _nearest(m, [0.5, 0.5, 0.5]))
        assert T[_nearest(m, [-0.5, -0.5, -0.5])] == pytest.approx(math.sqrt(5), rel=1e-12)
        T = fast_march(m, _nearest(m, [0.5, 0, 0]))
        assert T[_nearest(m, [0, 0.5, 0])] == pytest.approx(1.0, rel=1e-12)


def test_cube_cut_locus_error_is_first_order(cube):
    # the opposite face centre is reached around four edges at once
    errs = []
    for level in (3, 4, 5):
        m = mesh_from_body(cube, level)
        T = fast_march(m, _nearest(m, [0.5, 0, 0]))
        errs.append(abs(T[_nearest(m, [-0.5, 0, 0])] - 2.0))
    assert errs[0] < 0.05
    assert errs[1] <= 0.55 * errs[0] and errs[2] <= 0.55 * errs[1]


def test_unfolding_cube(cube):
    h = 0.5
    assert unfold_polyhedron(cube, [h, h, h], [-h, -h, -h]) == pytest.approx(math.sqrt(5), rel=1e-12)
    assert unfold_polyhedron(cube, [h, 0, 0], [0, h, 0]) == pytest.approx(1.0, rel=1e-12)
    assert unfold_polyhedron(cube, [h, 0, 0], [-h, 0, 0]) == pytest.approx(2.0, rel=1e-12)
    assert unfold_polyhedron(cube, [h, 0.1, 0.2], [h, -0.3, 0]) == pytest.approx(math.hypot(0.4, 0.2))
    with pytest.raises(BudgetExceeded):
        unfold_polyhedron(cube, [h, h, h], [-h, -h, -h], max_faces=1)
    with pytest.raises(ValueError):
        unfold_polyhedron(cube, [0, 0, 0], [h, 0, 0])


def test_unfolding_tetrahedron_opposite_edge_midpoints():
    tet = convex_hull(tetrahedron_points())
    v = tet.vertices
    a = np.linalg.norm(v[0] - v[1])
    # the two faces meeting along a third edge unfold to a rhombus, where the
    # midpoints of opposite edges sit one edge length apart
    d = unfold_polyhedron(tet, (v[0] + v[1]) / 2, (v[2] + v[3]) / 2)
    assert d == pytest.approx(a, rel=1e-12)
    assert unfold_polyhedron(tet, v[0], v[1]) == pytest.approx(a, rel=1e-12)


def test_unfolding_scales_with_body():
    body = convex_hull(cube_points() * 3.0)
    assert unfold_polyhedron(body, [1.5] * 3, [-1.5] * 3) == pytest.approx(3 * math.sqrt(5))


def test_random_panel(tmp_path):
    cand = icosphere(2).directions
    p = random_panel(cand, 25, 7)
    q = random_panel(cand, 25, 7)
    assert len(p) == 25
    for (a, b), (c, d) in zip(p.pairs, q.pairs):
        np.testing.assert_array_equal(a, c)
        np.testing.assert_array_equal(b, d)
        assert a @ b <= math.cos(math.pi / 6) + 1e-15
    s = icosphere(2)
    m = embed(sample_radial(ball_radial(1.0), s), s)
    same = DistancePanel([(cand[3], cand[3]), (cand[3], cand[9])])
    out = panel_eval(m, s, same)
    assert out.values[0] == 0.0
    assert out.values[1] == fast_march(m, 3)[9]
    out.to_csv(tmp_path / "panel.csv", s, ["# config abc"])
    lines = (tmp_path / "panel.csv").read_text().splitlines()
    assert lines[:2] == ["# config abc", "src,dst,value,method"]
    assert lines[3].startswith("3,9,")
