"""Icosphere parametrisation, intrinsic edge-length meshes and metric formulas.

An ``IntrinsicMesh`` stores base edge lengths (the metric g0) plus one
conformal factor per vertex; current lengths follow the discrete conformal
rule ``l_ij = exp((u_i + u_j) / 2) * l0_ij`` which realises g = exp(2u) g0.
Curvature is angle defect over the mixed (Voronoi) vertex area.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable

import math

import numpy as np
from numba import njit

from . import sphere
from .convex_body import ConvexBody, radial
from .smoothing import SupportField, radial_from_support

MAX_LEVEL = 8


class LevelTooLarge(ValueError):
    pass


class DegenerateTriangle(ValueError):
    pass


class IllConditionedStencil(np.linalg.LinAlgError):
    pass


# -- topology -----------------------------------------------------------------

def _edge_topology(triangles: np.ndarray):
    """Unique edges, per-triangle edge ids (opposite each corner), flanking triangles."""
    f = len(triangles)
    # edge opposite corner k joins corners k+1 and k+2
    pairs = np.stack(
        [triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]], axis=1
    ).reshape(-1, 2)
    key = np.sort(pairs, axis=1)
    edges, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    tri_edges = inverse.reshape(f, 3)
    counts = np.bincount(inverse, minlength=len(edges))
    if np.any(counts != 2):
        raise ValueError("mesh is not a closed 2-manifold: edge without two triangles")
    order = np.argsort(inverse, kind="stable")
    edge_tris = (order // 3).reshape(-1, 2)
    return edges, tri_edges, edge_tris


@dataclass(frozen=True)
class SphereMesh:
    level: int
    directions: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    edge_tris: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.directions)

    def euler_characteristic(self) -> int:
        return len(self.directions) - len(self.edges) + len(self.triangles)

    @cached_property
    def round_lengths(self) -> np.ndarray:
        """Chord lengths of the edges on the unit sphere."""
        d = self.directions
        return np.linalg.norm(d[self.edges[:, 0]] - d[self.edges[:, 1]], axis=1)

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        return _neighbors(self.edges, self.n_vertices)

    def ring(self, vertex: int, depth: int = 2) -> np.ndarray:
        """Vertices within ``depth`` edges of ``vertex`` (excluding it)."""
        seen = {int(vertex)}
        frontier = [int(vertex)]
        for _ in range(depth):
            nxt = []
            for v in frontier:
                for w in self.neighbors[v]:
                    if int(w) not in seen:
                        seen.add(int(w))
                        nxt.append(int(w))
            frontier = nxt
        seen.discard(int(vertex))
        return np.array(sorted(seen), dtype=np.int64)

    def rotated(self, rotation) -> SphereMesh:
        r = np.asarray(rotation, dtype=float)
        return SphereMesh(
            self.level, self.directions @ r.T, self.triangles, self.edges,
            self.tri_edges, self.edge_tris,
        )


def _neighbors(edges: np.ndarray, n: int) -> list[np.ndarray]:
    both = np.concatenate([edges, edges[:, ::-1]])
    both = both[np.lexsort((both[:, 1], both[:, 0]))]
    splits = np.searchsorted(both[:, 0], np.arange(1, n))
    return np.split(both[:, 1], splits)


def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return v / np.linalg.norm(v, axis=1)[:, None], f


def _subdivide(verts: np.ndarray, tris: np.ndarray, project: bool):
    """One midpoint subdivision; old vertices keep their indices."""
    pairs = np.sort(
        np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1
    )
    edges, inv = np.unique(pairs, axis=0, return_inverse=True)
    inv = inv.ravel()
    mids = 0.5 * (verts[edges[:, 0]] + verts[edges[:, 1]])
    if project:
        mids /= np.linalg.norm(mids, axis=1)[:, None]
    f = len(tris)
    m01, m12, m20 = (inv[:f] + len(verts), inv[f:2 * f] + len(verts), inv[2 * f:] + len(verts))
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    new = np.concatenate(
        [
            np.stack([a, m01, m20], 1),
            np.stack([b, m12, m01], 1),
            np.stack([c, m20, m12], 1),
            np.stack([m01, m12, m20], 1),
        ]
    )
    return np.vstack([verts, mids]), new


def icosphere(level: int, frame=None) -> SphereMesh:
    """Midpoint-subdivided icosahedron with vertices pushed to the unit sphere.

    ``frame`` optionally rotates all directions (indexing is unchanged).
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    if level > MAX_LEVEL:
        raise LevelTooLarge(f"level {level} > {MAX_LEVEL}")
    v, f = _icosahedron()
    for _ in range(level):
        v, f = _subdivide(v, f, project=True)
    edges, tri_edges, edge_tris = _edge_topology(f)
    mesh = SphereMesh(level, v, f, edges, tri_edges, edge_tris)
    return mesh.rotated(frame) if frame is not None else mesh


# -- intrinsic meshes ---------------------------------------------------------

@njit(cache=True)
def _geometry(u, base, edges, triangles, tri_edges):
    """Lengths, corner angles, areas, margins and per-vertex sums.

    Vertex areas are mixed Voronoi areas: the circumcentric share of each
    corner, or area/2 (obtuse corner) and area/4 (others) in obtuse
    triangles.  Accumulation runs in triangle order, so results are
    reproducible bit for bit.
    """
    ne = edges.shape[0]
    nf = triangles.shape[0]
    nv = u.shape[0]
    lengths = np.empty(ne)
    for e in range(ne):
        lengths[e] = math.exp(0.5 * (u[edges[e, 0]] + u[edges[e, 1]])) * base[e]
    angles = np.empty((nf, 3))
    area = np.empty(nf)
    margin = np.empty(nf)
    vertex_area = np.zeros(nv)
    angle_sum = np.zeros(nv)
    ell = np.empty(3)
    cot = np.empty(3)
    share = np.empty(3)
    for f in range(nf):
        for k in range(3):
            ell[k] = lengths[tri_edges[f, k]]
        per = ell[0] + ell[1] + ell[2]
        m = per
        for k in range(3):
            k1 = (k + 1) % 3
            k2 = (k + 2) % 3
            slack = ell[k1] + ell[k2] - ell[k]
            if slack < m:
                m = slack
            c = (ell[k1] * ell[k1] + ell[k2] * ell[k2] - ell[k] * ell[k]) / (2.0 * ell[k1] * ell[k2])
            c = min(1.0, max(-1.0, c))
            angles[f, k] = math.acos(c)
        margin[f] = m / per
        # Kahan's stable Heron formula on sorted lengths a >= b >= c
        a, b, c = ell[0], ell[1], ell[2]
        if a < b:
            a, b = b, a
        if b < c:
            b, c = c, b
        if a < b:
            a, b = b, a
        prod = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
        area[f] = 0.25 * math.sqrt(max(prod, 0.0))
        obtuse = -1
        for k in range(3):
            if angles[f, k] > 0.5 * math.pi:
                obtuse = k
        if obtuse >= 0:
            for k in range(3):
                share[k] = 0.5 * area[f] if k == obtuse else 0.25 * area[f]
        else:
            for k in range(3):
                k1 = (k + 1) % 3
                k2 = (k + 2) % 3
                cot[k] = (ell[k1] * ell[k1] + ell[k2] * ell[k2] - ell[k] * ell[k]) / (4.0 * area[f])
            for k in range(3):
                k1 = (k + 1) % 3
                k2 = (k + 2) % 3
                share[k] = (ell[k2] * ell[k2] * cot[k2] + ell[k1] * ell[k1] * cot[k1]) / 8.0
        for k in range(3):
            v = triangles[f, k]
            vertex_area[v] += share[k]
            angle_sum[v] += angles[f, k]
    return lengths, angles, area, margin, vertex_area, angle_sum


class IntrinsicMesh:
    """Closed triangle mesh described by edge lengths and conformal factors.

    Geometry derived from the current lengths (angles, areas, defects,
    curvature) is computed once at construction; use :meth:`with_conformal`
    to obtain the mesh for a new conformal field.
    """

    def __init__(
        self,
        triangles,
        edges,
        tri_edges,
        edge_tris,
        base_lengths,
        conformal=None,
        positions=None,
        directions=None,
        round_lengths=None,
    ):
        self.triangles = triangles
        self.edges = edges
        self.tri_edges = tri_edges
        self.edge_tris = edge_tris
        self.base_lengths = np.asarray(base_lengths, dtype=float)
        nv = int(edges.max()) + 1
        self.conformal = np.zeros(nv) if conformal is None else np.asarray(conformal, dtype=float)
        self.positions = positions
        self.directions = directions
        self.round_lengths = round_lengths
        self._compute()

    @classmethod
    def from_positions(cls, positions, triangles, directions=None, round_lengths=None):
        tris = np.asarray(triangles, dtype=np.int64)
        edges, tri_edges, edge_tris = _edge_topology(tris)
        p = np.asarray(positions, dtype=float)
        base = np.linalg.norm(p[edges[:, 0]] - p[edges[:, 1]], axis=1)
        return cls(tris, edges, tri_edges, edge_tris, base, None, p, directions, round_lengths)

    def with_conformal(self, u) -> IntrinsicMesh:
        return IntrinsicMesh(
            self.triangles, self.edges, self.tri_edges, self.edge_tris,
            self.base_lengths, u, self.positions, self.directions, self.round_lengths,
        )

    def scaled(self, factor: float) -> IntrinsicMesh:
        pos = None if self.positions is None else self.positions * factor
        return IntrinsicMesh(
            self.triangles, self.edges, self.tri_edges, self.edge_tris,
            self.base_lengths * factor, self.conformal, pos, self.directions,
            self.round_lengths,
        )

    def _compute(self):
        (
            self.current_lengths,
            self.angles,
            self.tri_area,
            self.tri_margin,
            self.vertex_area,
            self.angle_sum,
        ) = _geometry(
            self.conformal, self.base_lengths, self.edges, self.triangles, self.tri_edges
        )
        self.angle_defect = 2 * np.pi - self.angle_sum
        with np.errstate(divide="ignore", invalid="ignore"):
            self.curvature = self.angle_defect / self.vertex_area

    @property
    def n_vertices(self) -> int:
        return len(self.conformal)

    @property
    def min_margin(self) -> float:
        return float(self.tri_margin.min())

    @property
    def total_area(self) -> float:
        return float(self.tri_area.sum())

    def gauss_bonnet_residual(self) -> float:
        return float(abs(self.angle_defect.sum() - 4 * np.pi))

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        return _neighbors(self.edges, self.n_vertices)


# -- radial fields ------------------------------------------------------------

@dataclass(frozen=True)
class RadialField:
    rho: np.ndarray

    @property
    def v(self) -> np.ndarray:
        return 1.0 / self.rho


def ball_radial(r: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
    return lambda d: np.full(len(np.atleast_2d(d)), float(r))


def ellipsoid_radial(a: float, b: float, c: float, frame=None):
    """Radial function of the ellipsoid x^2/a^2 + y^2/b^2 + z^2/c^2 = 1."""
    frame = np.eye(3) if frame is None else np.asarray(frame, dtype=float)

    def rho(d):
        x = np.atleast_2d(d) @ frame
        return 1.0 / np.sqrt((x[:, 0] / a) ** 2 + (x[:, 1] / b) ** 2 + (x[:, 2] / c) ** 2)

    return rho


def sample_radial(source, mesh: SphereMesh) -> RadialField:
    """Radial function at the mesh directions.

    ``source`` is a ConvexBody (exact ray casting), a SupportField (gauge
    minimisation) or a callable mapping directions to radii.
    """
    d = mesh.directions
    if isinstance(source, ConvexBody):
        rho = radial(source, d)
    elif isinstance(source, SupportField):
        rho = radial_from_support(source, d)
    else:
        rho = np.asarray(source(d), dtype=float)
    if np.any(rho <= 0):
        raise ValueError("radial function must be positive")
    return RadialField(np.asarray(rho, dtype=float))


def source_center(source) -> np.ndarray:
    return np.asarray(getattr(source, "center", np.zeros(3)), dtype=float)


def embed(field: RadialField, mesh: SphereMesh, center=None) -> IntrinsicMesh:
    """Intrinsic data of the radial graph ``center + rho * direction``."""
    center = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    pos = center + field.rho[:, None] * mesh.directions
    base = np.linalg.norm(pos[mesh.edges[:, 0]] - pos[mesh.edges[:, 1]], axis=1)
    if not np.all(base > 0) or not np.all(np.isfinite(base)):
        raise DegenerateTriangle("radial graph has zero-length or non-finite edges")
    m = IntrinsicMesh(
        mesh.triangles, mesh.edges, mesh.tri_edges, mesh.edge_tris, base,
        None, pos, mesh.directions, mesh.round_lengths,
    )
    if m.min_margin < 1e-12:
        raise DegenerateTriangle(f"triangle inequality margin {m.min_margin:.3e}")
    return m


def mesh_from_body(body: ConvexBody, level: int) -> IntrinsicMesh:
    """Mesh the polyhedral surface itself by subdividing its hull facets."""
    v, f = body.vertices.copy(), body.facets.copy()
    for _ in range(level):
        v, f = _subdivide(v, f, project=False)
    return IntrinsicMesh.from_positions(v, f)


# -- smooth metric formulas on the radial graph -------------------------------

def _fit_derivatives(values, mesh: SphereMesh, vertex: int, rings: int = 2):
    """Value, gradient and Hessian at ``vertex`` in normal coordinates.

    Weighted least-squares quadratic fit over the ``rings``-ring; weights
    decay with geodesic distance.
    """
    base = mesh.directions[vertex]
    nb = mesh.ring(vertex, rings)
    e1, e2 = sphere.tangent_frames(base[None, :])
    xy = sphere.log_map(base, mesh.directions[nb], e1[0], e2[0])
    scale = np.sqrt((xy**2).sum(1)).mean()
    x, y = xy[:, 0] / scale, xy[:, 1] / scale
    a = np.column_stack(
        [np.ones_like(x), x, y, 0.5 * x * x, x * y, 0.5 * y * y]
    )
    a = np.vstack([[1, 0, 0, 0, 0, 0], a])
    rhs = np.concatenate([[values[vertex]], values[nb]])
    w = np.concatenate([[1.0], 1.0 / np.maximum(np.hypot(x, y), 1e-12)])
    aw = a * w[:, None]
    if np.linalg.cond(aw) > 1e8:
        raise IllConditionedStencil(f"stencil at vertex {vertex} is ill-conditioned")
    coef, *_ = np.linalg.lstsq(aw, rhs * w, rcond=None)
    grad = coef[1:3] / scale
    hess = np.array([[coef[3], coef[4]], [coef[4], coef[5]]]) / scale**2
    return coef[0], grad, hess


def smooth_metric_at(field: RadialField, mesh: SphereMesh, vertex: int):
    """Induced metric, second fundamental form and Gauss curvature at a vertex.

    g_ij = rho^2 delta_ij + rho_i rho_j and
    h_ij = (rho^2 delta_ij + 2 rho_i rho_j - rho rho_ij) / sqrt(rho^2 + |grad rho|^2),
    derivatives taken with the round connection (normal coordinates).
    """
    rho, grad, hess = _fit_derivatives(field.rho, mesh, vertex)
    rho = field.rho[vertex]
    eye = np.eye(2)
    g = rho**2 * eye + np.outer(grad, grad)
    h2ff = (rho**2 * eye + 2 * np.outer(grad, grad) - rho * hess) / np.sqrt(
        rho**2 + grad @ grad
    )
    return g, h2ff, float(np.linalg.det(h2ff) / np.linalg.det(g))


def smooth_curvature(field: RadialField, mesh: SphereMesh) -> np.ndarray:
    return np.array([smooth_metric_at(field, mesh, i)[2] for i in range(mesh.n_vertices)])


def gradient_bound_quantity(field: RadialField, mesh: SphereMesh):
    """(max |grad v|^2 + v^2, max v^2) for v = 1 / rho, gradient in the round metric."""
    v = field.v
    combined = np.empty(mesh.n_vertices)
    for i in range(mesh.n_vertices):
        _, grad, _ = _fit_derivatives(v, mesh, i)
        combined[i] = grad @ grad + v[i] ** 2
    return float(combined.max()), float((v**2).max())


def edge_ratio_bounds(mesh: IntrinsicMesh) -> float:
    """max over edges of max(r, 1/r), r = current length / round chord length."""
    r = mesh.current_lengths / mesh.round_lengths
    return float(np.maximum(r, 1.0 / r).max())


# -- text I/O ----------------------------------------------------------------

def write_mesh(path, mesh: IntrinsicMesh, header_lines=()) -> None:
    """``v x y z`` / ``f i j k`` / ``u vertex value`` lines, 17 significant digits."""
    lines = list(header_lines)
    if mesh.positions is None:
        raise ValueError("mesh has no embedding to write")
    lines += ["v " + " ".join(f"{x:.17g}" for x in p) for p in mesh.positions]
    lines += ["f " + " ".join(str(int(i)) for i in f) for f in mesh.triangles]
    lines += [f"u {i} {x:.17g}" for i, x in enumerate(mesh.conformal)]
    if mesh.directions is not None:
        lines += ["d " + " ".join(f"{x:.17g}" for x in p) for p in mesh.directions]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path):
    """Inverse of :func:`write_mesh`; returns (mesh, other header lines)."""
    v, f, u, d, other = [], [], {}, [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "v":
            v.append([float(x) for x in parts[1:4]])
        elif tag == "f":
            f.append([int(x) for x in parts[1:4]])
        elif tag == "u":
            u[int(parts[1])] = float(parts[2])
        elif tag == "d":
            d.append([float(x) for x in parts[1:4]])
        else:
            other.append(line)
    directions = np.array(d) if d else None
    rl = None
    mesh = IntrinsicMesh.from_positions(np.array(v), np.array(f), directions)
    if directions is not None:
        rl = np.linalg.norm(directions[mesh.edges[:, 0]] - directions[mesh.edges[:, 1]], axis=1)
        mesh.round_lengths = rl
    conf = np.array([u.get(i, 0.0) for i in range(mesh.n_vertices)])
    return mesh.with_conformal(conf), other
