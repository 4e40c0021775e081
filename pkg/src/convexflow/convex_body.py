"""Convex hull, support and radial functions of an embedded convex surface."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError


class DegenerateError(ValueError):
    """The body has (numerically) empty interior."""


class DegenerateInput(DegenerateError):
    """Input points are affinely dependent (rank < 3)."""


class NoIntersection(RuntimeError):
    """A ray from the center missed every facet; the hull is corrupt."""


@dataclass(frozen=True)
class ConvexBody:
    """Convex hull of a point set with an interior base point.

    Attributes
    ----------
    vertices : (V, 3) array
        Hull vertices, a subset of the input points.
    facets : (F, 3) int array
        Triangles indexing ``vertices``, oriented counter-clockwise seen
        from outside.
    center : (3,) array
        Strictly interior point used as origin for support and radial
        functions.
    inradius, circumradius : float
        Radius of the largest inscribed ball and max distance from
        ``center`` to a vertex.
    """

    vertices: np.ndarray
    facets: np.ndarray
    center: np.ndarray
    inradius: float
    circumradius: float
    normals: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)

    @property
    def diameter(self) -> float:
        d = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    def rotated(self, rotation: np.ndarray) -> ConvexBody:
        """Apply an orthogonal map to the original vertices and rebuild."""
        return convex_hull(self.vertices @ np.asarray(rotation, dtype=float).T)

    def scaled(self, factor: float) -> ConvexBody:
        return convex_hull(self.vertices * float(factor))


def _facet_planes(points: np.ndarray, facets: np.ndarray):
    a, b, c = points[facets[:, 0]], points[facets[:, 1]], points[facets[:, 2]]
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1)[:, None]
    return n, np.einsum("ij,ij->i", n, a)


def _chebyshev_center(normals: np.ndarray, planes: np.ndarray):
    # max r  s.t.  <n_f, x> + r <= b_f
    a_ub = np.hstack([normals, np.ones((len(normals), 1))])
    res = linprog(
        c=[0.0, 0.0, 0.0, -1.0],
        A_ub=a_ub,
        b_ub=planes,
        bounds=[(None, None)] * 3 + [(0.0, None)],
        method="highs",
    )
    if not res.success:
        raise DegenerateError(f"inradius LP failed: {res.message}")
    return res.x[:3], float(res.x[3])


def convex_hull(points) -> ConvexBody:
    """Build the convex hull of at least four non-coplanar points.

    Points are sorted lexicographically before triangulation so that the
    facet list does not depend on input order.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
        raise DegenerateInput("need at least 4 points in R^3")
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[2] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateInput("degenerate input: points are coplanar")

    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
    pts = pts[order]
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:  # pragma: no cover - qhull precision failure
        raise DegenerateInput(f"degenerate input: {exc}") from exc

    used = np.unique(hull.simplices)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = pts[used]
    facets = remap[hull.simplices]

    # orient each triangle so its normal agrees with qhull's outward normal
    n, _ = _facet_planes(verts, facets)
    flip = np.einsum("ij,ij->i", n, hull.equations[:, :3]) < 0
    facets[flip] = facets[flip][:, [0, 2, 1]]
    facets = facets[np.lexsort(facets.T[::-1])]

    normals, planes = _facet_planes(verts, facets)
    center = verts.mean(axis=0)
    slack = planes - normals @ center
    scale = np.abs(verts - center).max()
    if slack.min() <= 1e-9 * scale:
        center, _ = _chebyshev_center(normals, planes)
        slack = planes - normals @ center
    _, inradius = _chebyshev_center(normals, planes)
    circumradius = float(np.linalg.norm(verts - center, axis=1).max())
    return ConvexBody(
        vertices=verts,
        facets=facets,
        center=center,
        inradius=inradius,
        circumradius=circumradius,
        normals=normals,
        offsets=slack,
    )


def support(body: ConvexBody, direction) -> np.ndarray | float:
    """Support function about the center, h(x) = max <v - c, x>.

    Accepts a single unit vector or an (N, 3) array of them.
    """
    d = np.asarray(direction, dtype=float)
    vals = (body.vertices - body.center) @ d.T
    return vals.max(axis=0)


def radial(body: ConvexBody, direction) -> np.ndarray | float:
    """Distance from the center to the boundary along unit ``direction``."""
    d = np.asarray(direction, dtype=float)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    cos = d @ body.normals.T  # (N, F)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(cos > 1e-15, body.offsets[None, :] / cos, np.inf)
    rho = t.min(axis=1)
    if not np.all(np.isfinite(rho)):
        raise NoIntersection("ray from center does not meet the hull")
    return float(rho[0]) if single else rho


def nondegeneracy(body: ConvexBody, r_min: float | None = None) -> float:
    """Return the inradius, raising ``DegenerateError`` below ``r_min``.

    The default threshold is relative: 1e-6 times the circumradius.
    """
    if r_min is None:
        r_min = 1e-6 * body.circumradius
    if body.inradius < r_min:
        raise DegenerateError(
            f"degenerate body: inradius {body.inradius:.3e} < {r_min:.3e}"
        )
    return body.inradius


# -- canned bodies -----------------------------------------------------------

def cube_points(side: float = 1.0) -> np.ndarray:
    s = side / 2.0
    return np.array(
        [[x, y, z] for x in (-s, s) for y in (-s, s) for z in (-s, s)], dtype=float
    )


def octahedron_points(radius: float = 1.0) -> np.ndarray:
    e = np.eye(3) * radius
    return np.vstack([e, -e])


def tetrahedron_points() -> np.ndarray:
    return np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float
    ) / np.sqrt(3.0)


def fibonacci_sphere(n: int, radius: float = 1.0) -> np.ndarray:
    """Quasi-uniform points on a sphere (deterministic)."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    r = np.sqrt(1.0 - z * z)
    return radius * np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


# -- text I/O ----------------------------------------------------------------

def read_points(path) -> np.ndarray:
    """Read ``x y z`` triples, one per line; ``#`` starts a comment."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append([float(x) for x in line.split()[:3]])
    return np.array(rows, dtype=float).reshape(-1, 3)


def write_points(path, points, header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines += [" ".join(f"{x:.17g}" for x in p) for p in np.asarray(points)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_hull(path, body: ConvexBody, header: str | None = None) -> None:
    """Vertex lines ``v x y z`` then facet lines ``f i j k`` (0-based)."""
    lines = [f"# {header}"] if header else []
    lines += ["v " + " ".join(f"{x:.17g}" for x in v) for v in body.vertices]
    lines += ["f " + " ".join(str(int(i)) for i in f) for f in body.facets]
    Path(path).write_text("\n".join(lines) + "\n")


def read_hull(path) -> ConvexBody:
    verts = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("v "):
            verts.append([float(x) for x in line.split()[1:4]])
    return convex_hull(np.array(verts))
