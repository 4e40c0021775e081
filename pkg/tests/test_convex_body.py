import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convexflow.convex_body import (
    DegenerateError,
    DegenerateInput,
    convex_hull,
    cube_points,
    fibonacci_sphere,
    nondegeneracy,
    octahedron_points,
    radial,
    read_hull,
    read_points,
    support,
    tetrahedron_points,
    write_hull,
    write_points,
)
from convexflow.sphere import fibonacci_dirs


def test_cube_hull(cube):
    assert len(cube.vertices) == 8
    assert len(cube.facets) == 12
    np.testing.assert_allclose(cube.center, 0, atol=1e-15)
    assert cube.inradius == pytest.approx(0.5, abs=1e-9)
    assert cube.circumradius == pytest.approx(np.sqrt(3) / 2)


def test_interior_points_are_dropped():
    pts = np.vstack([cube_points(), np.random.default_rng(0).uniform(-0.4, 0.4, (50, 3))])
    assert len(convex_hull(pts).vertices) == 8


def test_facets_outward(cube):
    tri = cube.vertices[cube.facets]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    assert np.all(np.einsum("ij,ij->i", n, tri.mean(axis=1) - cube.center) > 0)


def test_degenerate_inputs():
    with pytest.raises(DegenerateInput, match="degenerate input"):
        convex_hull([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.3, 0.2, 0]])
    with pytest.raises(DegenerateInput):
        convex_hull([[0, 0, 0], [1, 0, 0], [0, 1, 0]])
    assert issubclass(DegenerateInput, DegenerateError)


def test_support_cube(cube):
    d = np.array([[1.0, 0, 0], [0, 0, -1.0], np.ones(3) / np.sqrt(3)])
    np.testing.assert_allclose(support(cube, d), [0.5, 0.5, np.sqrt(3) / 2])


def test_radial_cube(cube):
    d = np.array([[1.0, 0, 0], np.ones(3) / np.sqrt(3), [1.0, 1.0, 0] / np.sqrt(2)])
    np.testing.assert_allclose(radial(cube, d), [0.5, np.sqrt(3) / 2, np.sqrt(2) / 2])


def test_octahedron_and_tetrahedron():
    octa = convex_hull(octahedron_points(1.0))
    assert octa.inradius == pytest.approx(1 / np.sqrt(3), rel=1e-9)
    tet = convex_hull(tetrahedron_points())
    # regular tetrahedron: inradius / circumradius = 1/3
    assert tet.inradius / tet.circumradius == pytest.approx(1 / 3, rel=1e-9)


def test_ball_sample_inradius():
    body = convex_hull(fibonacci_sphere(2000))
    r = nondegeneracy(body)
    assert 0.99 < r < 1.0


def test_nondegeneracy_threshold(cube):
    with pytest.raises(DegenerateError):
        nondegeneracy(cube, r_min=0.6)


def test_rotation_and_scale(cube, rng):
    from convexflow.sphere import random_rotation

    r = random_rotation(rng)
    d = fibonacci_dirs(200)
    np.testing.assert_allclose(support(cube.rotated(r), d @ r.T), support(cube, d), atol=1e-12)
    np.testing.assert_allclose(support(cube.scaled(2.0), d), 2 * support(cube, d), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_support_sublinear(seed):
    g = np.random.default_rng(seed)
    body = convex_hull(g.normal(size=(30, 3)))
    x, y = g.normal(size=(2, 3))
    h = lambda v: support(body, v[None] / np.linalg.norm(v))[0] * np.linalg.norm(v)
    assert h(x + y) <= h(x) + h(y) + 1e-12
    # radial point lies on the boundary: its support in the facet normal equals the offset
    d = g.normal(size=3)
    d /= np.linalg.norm(d)
    p = radial(body, d[None])[0] * d
    assert np.min(body.offsets - body.normals @ p) == pytest.approx(0, abs=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.permutations(list(range(8))))
def test_hull_independent_of_point_order(perm):
    a = convex_hull(cube_points())
    b = convex_hull(cube_points()[list(perm)])
    np.testing.assert_array_equal(a.vertices, b.vertices)
    np.testing.assert_array_equal(a.facets, b.facets)


def test_io_roundtrip(tmp_path, cube):
    write_points(tmp_path / "p.txt", cube_points(), header="cube")
    np.testing.assert_array_equal(read_points(tmp_path / "p.txt"), cube_points())
    write_hull(tmp_path / "h.txt", cube)
    back = read_hull(tmp_path / "h.txt")
    np.testing.assert_array_equal(back.vertices, cube.vertices)
