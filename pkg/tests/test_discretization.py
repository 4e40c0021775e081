import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convexflow.discretization import (
    MAX_LEVEL,
    DegenerateTriangle,
    IntrinsicMesh,
    LevelTooLarge,
    RadialField,
    ball_radial,
    edge_ratio_bounds,
    ellipsoid_radial,
    embed,
    icosphere,
    gradient_bound_quantity,
    mesh_from_body,
    read_mesh,
    sample_radial,
    smooth_curvature,
    smooth_metric_at,
    write_mesh,
)


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_icosphere_counts(level):
    m = icosphere(level)
    f = 20 * 4**level
    assert len(m.triangles) == f
    assert len(m.edges) == 3 * f // 2
    assert m.n_vertices == 10 * 4**level + 2
    assert m.euler_characteristic() == 2
    np.testing.assert_allclose(np.linalg.norm(m.directions, axis=1), 1, atol=1e-15)


def test_icosphere_level_guard():
    with pytest.raises(LevelTooLarge):
        icosphere(MAX_LEVEL + 1)


def test_icosphere_axes_are_vertices():
    d = icosphere(1).directions
    for axis in np.eye(3):
        assert np.isclose(d @ axis, 1).any()


def test_sphere_curvature_and_gauss_bonnet():
    s = icosphere(4)
    m = embed(sample_radial(ball_radial(2.0), s), s)
    assert abs(m.angle_defect.sum() - 4 * np.pi) < 1e-11
    np.testing.assert_allclose(m.curvature, 0.25, rtol=5e-3)
    assert m.total_area == pytest.approx(16 * np.pi, rel=5e-3)


def test_cube_surface_defects(cube):
    m = mesh_from_body(cube, 2)
    corners = np.isclose(np.abs(m.positions), 0.5).all(axis=1)
    np.testing.assert_allclose(m.angle_defect[corners], np.pi / 2, atol=1e-12)
    np.testing.assert_allclose(m.angle_defect[~corners], 0, atol=1e-12)
    assert m.total_area == pytest.approx(6.0, rel=1e-12)


def _ellipsoid_k(p, a, b, c):
    return 1 / (a * a * b * b * c * c * ((p[:, 0] / a**2) ** 2 + (p[:, 1] / b**2) ** 2 + (p[:, 2] / c**2) ** 2) ** 2)


def test_ellipsoid_pole_curvature():
    # principal curvatures c/a^2 at the pole (0, 0, 1): K = c^2 / a^4
    a, c = 1.0, 1.5
    s = icosphere(5)
    m = embed(sample_radial(ellipsoid_radial(a, a, c), s), s)
    pole = int(np.argmax(s.directions[:, 2]))
    assert s.directions[pole, 2] == 1.0
    assert m.curvature[pole] == pytest.approx(c * c / a**4, rel=0.01)


def test_ellipsoid_curvature_mean_error_converges():
    errs = []
    for level in (3, 4, 5):
        s = icosphere(level)
        m = embed(sample_radial(ellipsoid_radial(1.0, 1.0, 1.5), s), s)
        errs.append(np.mean(np.abs(m.curvature / _ellipsoid_k(m.positions, 1.0, 1.0, 1.5) - 1)))
    assert errs[0] > errs[1] > errs[2]
    assert np.log2(errs[1] / errs[2]) >= 1.0


def test_two_curvature_routes_agree():
    gaps = []
    for level in (3, 4):
        s = icosphere(level)
        rf = sample_radial(ellipsoid_radial(1.0, 1.2, 1.5), s)
        m = embed(rf, s)
        gaps.append(np.mean(np.abs(m.curvature - smooth_curvature(rf, s))))
    assert gaps[1] < gaps[0] / 2


def test_smooth_metric_ball():
    s = icosphere(3)
    rf = sample_radial(ball_radial(1.5), s)
    g, h2, k = smooth_metric_at(rf, s, 7)
    np.testing.assert_allclose(g, 1.5**2 * np.eye(2), atol=1e-8)
    np.testing.assert_allclose(h2, 1.5 * np.eye(2), atol=1e-8)
    assert k == pytest.approx(1 / 1.5**2, rel=1e-8)
    np.testing.assert_allclose(smooth_curvature(rf, s), 1 / 1.5**2, rtol=1e-8)


def test_gradient_bound_quantity_ball_and_ellipsoid():
    s = icosphere(4)
    combined, vsq = gradient_bound_quantity(sample_radial(ball_radial(1.0), s), s)
    assert combined == pytest.approx(1.0, abs=1e-10) and vsq == pytest.approx(1.0)
    combined, vsq = gradient_bound_quantity(sample_radial(ellipsoid_radial(1, 1, 1.5), s), s)
    assert combined <= vsq * 1.01


def test_conformal_lengths_and_scaling():
    s = icosphere(2)
    m = embed(sample_radial(ball_radial(), s), s)
    u = np.linspace(-0.1, 0.0, m.n_vertices)
    w = m.with_conformal(u)
    e = m.edges
    np.testing.assert_allclose(w.current_lengths, np.exp(0.5 * (u[e[:, 0]] + u[e[:, 1]])) * m.base_lengths)
    # constant u = c scales all lengths by e^c and curvature by e^{-2c}
    c = -0.3
    v = m.with_conformal(np.full(m.n_vertices, c))
    np.testing.assert_allclose(v.current_lengths, np.exp(c) * m.base_lengths, rtol=1e-15)
    np.testing.assert_allclose(v.curvature, np.exp(-2 * c) * m.curvature, rtol=1e-12)
    assert edge_ratio_bounds(m) == pytest.approx(1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.3))
def test_gauss_bonnet_random_conformal(seed, amp):
    s = icosphere(2)
    m = embed(sample_radial(ball_radial(), s), s)
    u = amp * np.random.default_rng(seed).uniform(-1, 1, m.n_vertices)
    w = m.with_conformal(u)
    if w.min_margin > 0:
        assert abs(w.angle_defect.sum() - 4 * np.pi) < 1e-11


def test_embed_rejects_collapsed_triangles():
    s = icosphere(1)
    with pytest.raises(DegenerateTriangle):
        embed(RadialField(np.full(s.n_vertices, 1e-300)), s)


def test_mesh_roundtrip(tmp_path):
    s = icosphere(2)
    m = embed(sample_radial(ellipsoid_radial(1, 2, 3), s), s).with_conformal(np.full(s.n_vertices, -0.01))
    write_mesh(tmp_path / "m.txt", m, ["# config x"])
    back, other = read_mesh(tmp_path / "m.txt")
    assert other == ["# config x"]
    np.testing.assert_array_equal(back.current_lengths, m.current_lengths)
    np.testing.assert_array_equal(back.curvature, m.curvature)
    assert isinstance(back, IntrinsicMesh)
