import numpy as np
import pytest
from scipy.special import sph_harm_y

from convexflow import sphere


def test_quadrature_weights_and_exactness():
    d, w = sphere.quadrature(10)
    assert w.sum() == pytest.approx(4 * np.pi, rel=1e-14)
    # integral of z^4 over the sphere is 4 pi / 5
    assert (w * d[:, 2] ** 4).sum() == pytest.approx(4 * np.pi / 5, rel=1e-13)
    # x^2 y^2 z^2 integrates to 4 pi / 105
    assert (w * (d[:, 0] * d[:, 1] * d[:, 2]) ** 2).sum() == pytest.approx(4 * np.pi / 105, rel=1e-13)


def test_orthonormality():
    lmax = 12
    d, w = sphere.quadrature(2 * lmax)
    y = sphere.sh_matrix(lmax, d)
    gram = (y * w[:, None]).T @ y
    np.testing.assert_allclose(gram, np.eye(sphere.n_coeffs(lmax)), atol=1e-13)


def test_against_scipy_zonal_and_sectoral():
    # m = 0 and m > 0 cosine harmonics agree with scipy's complex ones
    # (no Condon-Shortley phase here, so compare up to sign)
    rng = np.random.default_rng(1)
    d = rng.normal(size=(20, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    theta = np.arccos(d[:, 2])
    phi = np.arctan2(d[:, 1], d[:, 0])
    y = sphere.sh_matrix(6, d)
    for l, m in [(0, 0), (3, 0), (4, 2), (6, 5)]:
        ref = sph_harm_y(l, m, theta, phi)
        ref = ref.real if m == 0 else np.sqrt(2) * ref.real
        ours = y[:, sphere.coeff_index(l, m)]
        assert np.allclose(ours, ref, atol=1e-12) or np.allclose(ours, -ref, atol=1e-12)


def test_eval_matches_matrix():
    rng = np.random.default_rng(2)
    c = rng.normal(size=sphere.n_coeffs(8))
    d = sphere.fibonacci_dirs(50)
    np.testing.assert_allclose(sphere.sh_eval(8, c, d), sphere.sh_matrix(8, d) @ c, atol=1e-13)


def test_project_recovers_polynomial():
    d, w = sphere.quadrature(16)
    f = 1.0 + d[:, 0] * d[:, 1] - 0.5 * d[:, 2] ** 3
    c = sphere.sh_project(8, f, w, d)
    np.testing.assert_allclose(sphere.sh_eval(8, c, d), f, atol=1e-13)


def test_degrees():
    assert list(sphere.degrees(2)) == [0, 1, 1, 1, 2, 2, 2, 2, 2]


def test_exp_log_roundtrip():
    d = sphere.fibonacci_dirs(30)
    e1, e2 = sphere.tangent_frames(d)
    np.testing.assert_allclose(np.einsum("ij,ij->i", e1, d), 0, atol=1e-15)
    p = sphere.exp_map(d, e1, e2, 0.1, -0.05)
    for i in range(len(d)):
        ab = sphere.log_map(d[i], p[i : i + 1], e1[i], e2[i])
        np.testing.assert_allclose(ab[0], [0.1, -0.05], atol=1e-13)


def test_random_rotation_is_proper():
    r = sphere.random_rotation(np.random.default_rng(0))
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-14)
    assert np.linalg.det(r) == pytest.approx(1.0)
