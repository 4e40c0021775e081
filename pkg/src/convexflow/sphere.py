"""Spherical utilities: real spherical harmonics, quadrature, tangent frames."""

from __future__ import annotations

import math

import numpy as np
from numba import njit


def n_coeffs(lmax: int) -> int:
    return (lmax + 1) ** 2


def coeff_index(l: int, m: int) -> int:
    return l * l + l + m


def degrees(lmax: int) -> np.ndarray:
    """Degree l of every coefficient slot, in storage order."""
    return np.concatenate([np.full(2 * l + 1, l) for l in range(lmax + 1)])


def _recursion_tables(lmax):
    a = np.zeros((lmax + 1, lmax + 1))
    b = np.zeros((lmax + 1, lmax + 1))
    for m in range(lmax + 1):
        for l in range(m + 2, lmax + 1):
            a[l, m] = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b[l, m] = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
    diag = np.array([np.sqrt((2.0 * m + 1.0) / (2.0 * m)) if m else 0.0 for m in range(lmax + 1)])
    sub = np.sqrt(2.0 * np.arange(lmax + 1) + 3.0)
    return a, b, diag, sub


_TABLES: dict[int, tuple] = {}


def _tables(lmax):
    if lmax not in _TABLES:
        _TABLES[lmax] = _recursion_tables(lmax)
    return _TABLES[lmax]


@njit(cache=True)
def _basis_point(lmax, x, y, z, ta, tb, tdiag, tsub, p, row):
    # fully normalised associated Legendre functions p[l, m] (m >= 0),
    # including 1/sqrt(4 pi), so the real harmonics are orthonormal on the
    # unit sphere; no Condon-Shortley phase.
    r = math.sqrt(x * x + y * y + z * z)
    ct = z / r
    rxy = math.sqrt(x * x + y * y)
    st = rxy / r
    if rxy > 0.0:
        c1 = x / rxy
        s1 = y / rxy
    else:
        c1 = 1.0
        s1 = 0.0
    p[0, 0] = 0.28209479177387814
    for m in range(1, lmax + 1):
        p[m, m] = tdiag[m] * st * p[m - 1, m - 1]
    for m in range(0, lmax):
        p[m + 1, m] = tsub[m] * ct * p[m, m]
    for m in range(0, lmax + 1):
        for l in range(m + 2, lmax + 1):
            p[l, m] = ta[l, m] * (ct * p[l - 1, m] - tb[l, m] * p[l - 2, m])
    s2 = 1.4142135623730951
    for l in range(lmax + 1):
        row[l * l + l] = p[l, 0]
    cm = 1.0
    sm = 0.0
    for m in range(1, lmax + 1):
        cm, sm = cm * c1 - sm * s1, sm * c1 + cm * s1
        for l in range(m, lmax + 1):
            base = l * l + l
            row[base + m] = s2 * p[l, m] * cm
            row[base - m] = s2 * p[l, m] * sm


@njit(cache=True)
def _sh_matrix(lmax, dirs, ta, tb, tdiag, tsub):
    n = dirs.shape[0]
    out = np.empty((n, (lmax + 1) ** 2))
    p = np.zeros((lmax + 1, lmax + 1))
    for i in range(n):
        _basis_point(lmax, dirs[i, 0], dirs[i, 1], dirs[i, 2], ta, tb, tdiag, tsub, p, out[i])
    return out


@njit(cache=True)
def _sh_eval(lmax, coeffs, dirs, ta, tb, tdiag, tsub):
    n = dirs.shape[0]
    out = np.empty(n)
    p = np.zeros((lmax + 1, lmax + 1))
    row = np.empty((lmax + 1) ** 2)
    for i in range(n):
        _basis_point(lmax, dirs[i, 0], dirs[i, 1], dirs[i, 2], ta, tb, tdiag, tsub, p, row)
        acc = 0.0
        for k in range(row.shape[0]):
            acc += coeffs[k] * row[k]
        out[i] = acc
    return out


@njit(cache=True)
def _sh_project(lmax, weighted, dirs, ta, tb, tdiag, tsub):
    # fixed-order accumulation of sum_q w_q f_q Y(q)
    out = np.zeros((lmax + 1) ** 2)
    p = np.zeros((lmax + 1, lmax + 1))
    row = np.empty((lmax + 1) ** 2)
    for i in range(dirs.shape[0]):
        _basis_point(lmax, dirs[i, 0], dirs[i, 1], dirs[i, 2], ta, tb, tdiag, tsub, p, row)
        for k in range(row.shape[0]):
            out[k] += weighted[i] * row[k]
    return out


def sh_matrix(lmax: int, dirs) -> np.ndarray:
    """Real orthonormal harmonics, shape (N, (lmax+1)^2)."""
    return _sh_matrix(int(lmax), np.ascontiguousarray(dirs, dtype=float), *_tables(int(lmax)))


def sh_eval(lmax: int, coeffs, dirs) -> np.ndarray:
    d = np.ascontiguousarray(dirs, dtype=float).reshape(-1, 3)
    return _sh_eval(
        int(lmax), np.ascontiguousarray(coeffs, dtype=float), d, *_tables(int(lmax))
    )


def sh_project(lmax: int, values, weights, dirs) -> np.ndarray:
    w = np.ascontiguousarray(np.asarray(values) * np.asarray(weights), dtype=float)
    return _sh_project(
        int(lmax), w, np.ascontiguousarray(dirs, dtype=float), *_tables(int(lmax))
    )


def quadrature(degree: int):
    """Gauss-Legendre x uniform-azimuth rule exact for harmonics up to ``degree``.

    Returns ``(dirs, weights)`` with weights summing to 4 pi.
    """
    n_theta = degree // 2 + 1
    n_phi = degree + 1
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = (np.arange(n_phi) + 0.5) * (2.0 * np.pi / n_phi)
    st = np.sqrt(1.0 - x * x)
    dirs = np.stack(
        [
            np.outer(st, np.cos(phi)),
            np.outer(st, np.sin(phi)),
            np.outer(x, np.ones_like(phi)),
        ],
        axis=-1,
    ).reshape(-1, 3)
    weights = np.outer(w, np.full(n_phi, 2.0 * np.pi / n_phi)).ravel()
    return dirs, weights


def fibonacci_dirs(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    r = np.sqrt(1.0 - z * z)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def tangent_frames(dirs):
    """Orthonormal (e1, e2) completing each unit direction to a right-handed frame."""
    d = np.atleast_2d(np.asarray(dirs, dtype=float))
    helper = np.where(
        (np.abs(d[:, 0]) < 0.9)[:, None], np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    )
    e1 = helper - np.einsum("ij,ij->i", helper, d)[:, None] * d
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(d, e1)
    return e1, e2


def exp_map(dirs, e1, e2, a, b):
    """Point at normal coordinates (a, b) around each direction."""
    a = np.broadcast_to(np.asarray(a, dtype=float), (len(dirs),))
    b = np.broadcast_to(np.asarray(b, dtype=float), (len(dirs),))
    v = a[:, None] * e1 + b[:, None] * e2
    r = np.hypot(a, b)
    safe = np.where(r > 0, r, 1.0)
    sinc = np.where(r > 0, np.sin(r) / safe, 1.0)
    return np.cos(r)[:, None] * dirs + sinc[:, None] * v


def log_map(base, points, e1, e2):
    """Normal coordinates of ``points`` (K, 3) about unit ``base`` in frame (e1, e2)."""
    c = np.clip(points @ base, -1.0, 1.0)
    ang = np.arccos(c)
    t = points - c[:, None] * base
    nt = np.linalg.norm(t, axis=1)
    scale = np.where(nt > 0, ang / np.where(nt > 0, nt, 1.0), 0.0)
    return np.column_stack([(t @ e1) * scale, (t @ e2) * scale])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q
