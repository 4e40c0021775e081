"""Geodesic distances on intrinsic meshes and an exact polyhedral oracle.

``fast_march`` is a first-order triangle-wavefront solver working purely
from edge lengths; obtuse corners are handled by unfolding neighbouring
triangles until a supporting vertex inside the obtuse cone is found.
``unfold_polyhedron`` enumerates face sequences of a convex polyhedron and
returns the shortest straight segment in the planar unfolding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import chain
from pathlib import Path

import numpy as np
from numba import njit
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra as _cs_dijkstra

from .convex_body import ConvexBody
from .discretization import IntrinsicMesh, SphereMesh

MAX_UNFOLD = 12
INTERCEPT_TOL = 1e-12
RIGHT_ANGLE_TOL = 1e-12


class UnfoldingDepthExceeded(RuntimeWarning):
    pass


class BudgetExceeded(RuntimeError):
    pass


# -- numba kernels ------------------------------------------------------------

@njit(cache=True)
def _planar_update(px, py, ax, ay, ta, bx, by, tb):
    """Distance at p from a wavefront known at a and b (virtual point source).

    The source sits on the far side of segment ab from p; returns inf when
    the straight ray from the source to p misses the segment.
    """
    ex = bx - ax
    ey = by - ay
    lab = math.sqrt(ex * ex + ey * ey)
    if lab <= 0.0:
        return np.inf
    ux = ex / lab
    uy = ey / lab
    # frame: a at origin, b on +x axis, p below (y < 0)
    qx = (px - ax) * ux + (py - ay) * uy
    qy = -(px - ax) * uy + (py - ay) * ux
    flip = 1.0
    if qy > 0.0:
        flip = -1.0
        qy = -qy
    sx = (ta * ta - tb * tb + lab * lab) / (2.0 * lab)
    sy2 = ta * ta - sx * sx
    if sy2 < 0.0:
        return np.inf
    sy = math.sqrt(sy2)
    if qy >= 0.0:
        return np.inf
    # intercept of segment s -> q with the line y = 0
    t = sy / (sy - qy)
    ix = sx + t * (qx - sx)
    if ix < -INTERCEPT_TOL * lab or ix > (1.0 + INTERCEPT_TOL) * lab:
        return np.inf
    dx = qx - sx
    dy = qy - sy
    return math.sqrt(dx * dx + dy * dy)


@njit(cache=True)
def _place(px, py, qx, qy, lp, lq, rx, ry):
    """Point at distances lp from p and lq from q, on the side of pq away from r."""
    ex = qx - px
    ey = qy - py
    d = math.sqrt(ex * ex + ey * ey)
    ux = ex / d
    uy = ey / d
    a = (lp * lp - lq * lq + d * d) / (2.0 * d)
    h = math.sqrt(max(lp * lp - a * a, 0.0))
    nx = -uy
    ny = ux
    if (rx - px) * nx + (ry - py) * ny > 0.0:
        nx = -nx
        ny = -ny
    return px + a * ux + h * nx, py + a * uy + h * ny


@njit(cache=True)
def _edge_of(tri_edges, triangles, t, p, q):
    for k in range(3):
        v = triangles[t, k]
        if v != p and v != q:
            return tri_edges[t, k], v
    return -1, -1


@njit(cache=True)
def _other_tri(edge_tris, e, t):
    if edge_tris[e, 0] == t:
        return edge_tris[e, 1]
    return edge_tris[e, 0]


@njit(cache=True)
def _length(lengths, tri_edges, triangles, t, p, q):
    e, _ = _edge_of(tri_edges, triangles, t, p, q)
    return lengths[e]


@njit(cache=True)
def _triangle_update(x, t, T, state, lengths, triangles, tri_edges, edge_tris, max_unfold, flags):
    # other two corners, in triangle order
    k = 0
    for j in range(3):
        if triangles[t, j] == x:
            k = j
    a = triangles[t, (k + 1) % 3]
    b = triangles[t, (k + 2) % 3]
    lxa = _length(lengths, tri_edges, triangles, t, x, a)
    lxb = _length(lengths, tri_edges, triangles, t, x, b)
    lab = lengths[tri_edges[t, k]]
    best = np.inf
    if state[a] == 2:
        best = min(best, T[a] + lxa)
    if state[b] == 2:
        best = min(best, T[b] + lxb)
    if state[a] != 2 or state[b] != 2:
        return best
    # layout: x at origin, a on +x axis, b in upper half plane
    cth = (lxa * lxa + lxb * lxb - lab * lab) / (2.0 * lxa * lxb)
    cth = min(1.0, max(-1.0, cth))
    ax, ay = lxa, 0.0
    bx, by = lxb * cth, lxb * math.sqrt(max(0.0, 1.0 - cth * cth))
    # right angles round to either sign; only clearly obtuse corners unfold
    if cth >= -RIGHT_ANGLE_TOL:
        return min(best, _planar_update(0.0, 0.0, ax, ay, T[a], bx, by, T[b]))
    # obtuse at x: unfold across the far edge until a vertex falls in the cone
    p, q = a, b
    px, py, qx, qy = ax, ay, bx, by
    rx, ry = 0.0, 0.0
    cur = t
    for _ in range(max_unfold):
        e, _r = _edge_of(tri_edges, triangles, cur, p, q)
        nxt = _other_tri(edge_tris, e, cur)
        _e2, c = _edge_of(tri_edges, triangles, nxt, p, q)
        lpc = _length(lengths, tri_edges, triangles, nxt, p, c)
        lqc = _length(lengths, tri_edges, triangles, nxt, q, c)
        cx, cy = _place(px, py, qx, qy, lpc, lqc, rx, ry)
        # cone spanned by rays x->a (angle 0) and x->b
        cross_a = ax * cy - ay * cx
        cross_b = bx * cy - by * cx
        if cross_a >= 0.0 and cross_b <= 0.0:
            if state[c] == 2:
                u1 = _planar_update(0.0, 0.0, ax, ay, T[a], cx, cy, T[c])
                u2 = _planar_update(0.0, 0.0, cx, cy, T[c], bx, by, T[b])
                best = min(best, u1, u2, T[c] + math.sqrt(cx * cx + cy * cy))
            return best
        if cross_a < 0.0:
            # c lies beyond ray x->a: continue across edge (c, q)
            rx, ry = px, py
            p, px, py = c, cx, cy
        else:
            rx, ry = qx, qy
            q, qx, qy = c, cx, cy
        cur = nxt
    flags[0] += 1
    return best


@njit(cache=True)
def _heap_push(hk, hv, n, key, val):
    i = n
    hk[i] = key
    hv[i] = val
    while i > 0:
        parent = (i - 1) // 2
        if hk[parent] < hk[i] or (hk[parent] == hk[i] and hv[parent] <= hv[i]):
            break
        hk[parent], hk[i] = hk[i], hk[parent]
        hv[parent], hv[i] = hv[i], hv[parent]
        i = parent
    return n + 1


@njit(cache=True)
def _heap_pop(hk, hv, n):
    key = hk[0]
    val = hv[0]
    n -= 1
    hk[0] = hk[n]
    hv[0] = hv[n]
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        s = i
        if l < n and (hk[l] < hk[s] or (hk[l] == hk[s] and hv[l] < hv[s])):
            s = l
        if r < n and (hk[r] < hk[s] or (hk[r] == hk[s] and hv[r] < hv[s])):
            s = r
        if s == i:
            break
        hk[s], hk[i] = hk[i], hk[s]
        hv[s], hv[i] = hv[i], hv[s]
        i = s
    return key, val, n


@njit(cache=True)
def _fmm(seed_v, seed_t, nv, lengths, triangles, tri_edges, edge_tris, vt_ptr, vt_idx, max_unfold):
    T = np.full(nv, np.inf)
    state = np.zeros(nv, dtype=np.int8)
    cap = 8 * triangles.shape[0] + 16
    hk = np.empty(cap)
    hv = np.empty(cap, dtype=np.int64)
    n = 0
    flags = np.zeros(1, dtype=np.int64)
    for i in range(seed_v.shape[0]):
        v = seed_v[i]
        if seed_t[i] < T[v]:
            T[v] = seed_t[i]
            state[v] = 1
            n = _heap_push(hk, hv, n, T[v], v)
    while n > 0:
        key, v, n = _heap_pop(hk, hv, n)
        if state[v] == 2 or key > T[v]:
            continue
        state[v] = 2
        for j in range(vt_ptr[v], vt_ptr[v + 1]):
            t = vt_idx[j]
            for k in range(3):
                x = triangles[t, k]
                if state[x] == 2:
                    continue
                # x may be reached through every triangle around it that
                # now has an accepted corner; triangle t is the one that changed
                cand = _triangle_update(
                    x, t, T, state, lengths, triangles, tri_edges, edge_tris, max_unfold, flags
                )
                if cand < T[x]:
                    T[x] = cand
                    state[x] = 1
                    if n >= cap:
                        return T, -1
                    n = _heap_push(hk, hv, n, cand, x)
    return T, flags[0]


# -- surface points -----------------------------------------------------------

@dataclass(frozen=True)
class SurfacePoint:
    """A point given by a triangle and barycentric coordinates."""

    triangle: int
    bary: tuple[float, float, float]

    def vertex(self, mesh) -> int | None:
        b = np.asarray(self.bary)
        k = int(np.argmax(b))
        if b[k] == 1.0:
            return int(mesh.triangles[self.triangle, k])
        return None


def vertex_point(mesh, v: int) -> SurfacePoint:
    tris = np.flatnonzero(np.any(mesh.triangles == v, axis=1))
    t = int(tris[0])
    k = int(np.flatnonzero(mesh.triangles[t] == v)[0])
    bary = [0.0, 0.0, 0.0]
    bary[k] = 1.0
    return SurfacePoint(t, tuple(bary))


def locate_direction(sphere_mesh: SphereMesh, direction) -> SurfacePoint:
    """Triangle hit by the ray along ``direction`` on the flat-faced icosphere."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    match = np.flatnonzero(np.abs(sphere_mesh.directions @ d - 1.0) < 1e-14)
    if match.size:
        return vertex_point(sphere_mesh, int(match[0]))
    p = sphere_mesh.directions[sphere_mesh.triangles]  # (F, 3, 3)
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > 1e-15
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = -p[:, 0]
    bu = np.einsum("ij,ij->i", s, h) * inv
    q = np.cross(s, e1)
    bv = (q @ d) * inv
    tt = np.einsum("ij,ij->i", e2, q) * inv
    tol = 1e-12
    hit = ok & (bu >= -tol) & (bv >= -tol) & (bu + bv <= 1 + tol) & (tt > 0)
    cand = np.flatnonzero(hit)
    if cand.size == 0:
        raise ValueError("direction does not meet the icosphere")
    t = int(cand[0])
    b1, b2 = float(bu[t]), float(bv[t])
    return SurfacePoint(t, (1.0 - b1 - b2, b1, b2))


def _triangle_layout(mesh: IntrinsicMesh, t: int) -> np.ndarray:
    """Planar coordinates of the corners of triangle ``t`` (current metric)."""
    ell = mesh.current_lengths[mesh.tri_edges[t]]
    l01, l12, l20 = ell[2], ell[0], ell[1]
    c = (l01**2 + l20**2 - l12**2) / (2 * l01 * l20)
    c = min(1.0, max(-1.0, c))
    return np.array(
        [[0.0, 0.0], [l01, 0.0], [l20 * c, l20 * math.sqrt(max(0.0, 1 - c * c))]]
    )


def _point_xy(mesh, sp: SurfacePoint):
    lay = _triangle_layout(mesh, sp.triangle)
    return lay, np.asarray(sp.bary) @ lay


# -- public API ---------------------------------------------------------------

@dataclass
class _Topology:
    vt_ptr: np.ndarray
    vt_idx: np.ndarray


def _topology(mesh) -> _Topology:
    topo = getattr(mesh, "_vt_topology", None)
    if topo is None:
        t = mesh.triangles.ravel()
        order = np.argsort(t, kind="stable")
        counts = np.bincount(t, minlength=mesh.n_vertices)
        ptr = np.concatenate([[0], np.cumsum(counts)])
        topo = _Topology(ptr.astype(np.int64), (order // 3).astype(np.int64))
        mesh._vt_topology = topo
    return topo


@dataclass
class MarchResult:
    distances: np.ndarray
    unfold_fallbacks: int = 0


def _march(mesh: IntrinsicMesh, seed_v, seed_t, max_unfold=MAX_UNFOLD) -> MarchResult:
    topo = _topology(mesh)
    T, flags = _fmm(
        np.asarray(seed_v, dtype=np.int64), np.asarray(seed_t, dtype=float),
        mesh.n_vertices, mesh.current_lengths, mesh.triangles, mesh.tri_edges,
        mesh.edge_tris, topo.vt_ptr, topo.vt_idx, max_unfold,
    )
    if flags < 0:  # pragma: no cover - heap capacity is generous
        raise RuntimeError("fast marching heap overflow")
    return MarchResult(T, int(flags))


def fast_march(mesh: IntrinsicMesh, source) -> np.ndarray:
    """Geodesic distance from a vertex (or SurfacePoint) to every vertex."""
    return march_from(mesh, source).distances


def march_from(mesh: IntrinsicMesh, source) -> MarchResult:
    if isinstance(source, SurfacePoint):
        v = source.vertex(mesh)
        if v is None:
            lay, p = _point_xy(mesh, source)
            d = np.linalg.norm(lay - p, axis=1)
            return _march(mesh, mesh.triangles[source.triangle], d)
        source = v
    return _march(mesh, [int(source)], [0.0])


def distance_to_point(mesh: IntrinsicMesh, T: np.ndarray, target: SurfacePoint, source=None) -> float:
    """Evaluate the distance field ``T`` at a point inside a triangle."""
    v = target.vertex(mesh)
    if v is not None:
        return float(T[v])
    lay, q = _point_xy(mesh, target)
    tri = mesh.triangles[target.triangle]
    best = np.inf
    for i in range(3):
        best = min(best, T[tri[i]] + float(np.linalg.norm(lay[i] - q)))
        j = (i + 1) % 3
        best = min(
            best,
            _planar_update(q[0], q[1], lay[i, 0], lay[i, 1], T[tri[i]], lay[j, 0], lay[j, 1], T[tri[j]]),
        )
    if isinstance(source, SurfacePoint) and source.triangle == target.triangle:
        _, p = _point_xy(mesh, source)
        best = min(best, float(np.linalg.norm(p - q)))
    return float(best)


@njit(cache=True)
def _eval_in_triangle(lay, tv, pts):
    out = np.empty(pts.shape[0])
    for k in range(pts.shape[0]):
        px, py = pts[k, 0], pts[k, 1]
        best = np.inf
        for i in range(3):
            dx = lay[i, 0] - px
            dy = lay[i, 1] - py
            best = min(best, tv[i] + math.sqrt(dx * dx + dy * dy))
            j = (i + 1) % 3
            best = min(best, _planar_update(px, py, lay[i, 0], lay[i, 1], tv[i],
                                            lay[j, 0], lay[j, 1], tv[j]))
        out[k] = best
    return out


def sample_in_triangles(mesh: IntrinsicMesh, fields, triangles, n: int = 12):
    """Evaluate vertex distance fields on a barycentric grid inside triangles.

    Returns (triangle ids, barycentric coords, values of shape (len(fields), N)).
    """
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = i + j <= n
    bary = np.column_stack([i[keep], j[keep], n - i[keep] - j[keep]]) / n
    tri_ids, bs, vals = [], [], []
    for t in triangles:
        lay = _triangle_layout(mesh, int(t))
        pts = bary @ lay
        corner = mesh.triangles[t]
        vals.append([_eval_in_triangle(lay, np.ascontiguousarray(f[corner]), pts) for f in fields])
        tri_ids.append(np.full(len(bary), t))
        bs.append(bary)
    return np.concatenate(tri_ids), np.concatenate(bs), np.concatenate(vals, axis=1)


def dijkstra(mesh: IntrinsicMesh, source: int) -> np.ndarray:
    """Shortest paths along mesh edges under the current lengths."""
    e = mesh.edges
    n = mesh.n_vertices
    g = coo_matrix((mesh.current_lengths, (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    return _cs_dijkstra(g, directed=False, indices=int(source))


# -- panels -------------------------------------------------------------------

@dataclass
class DistancePanel:
    """Fixed probe pairs of unit directions and their distances."""

    pairs: list[tuple[np.ndarray, np.ndarray]]
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    method: str = "fast_marching"
    labels: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def with_values(self, values, method=None) -> DistancePanel:
        return DistancePanel(
            self.pairs, np.asarray(values, dtype=float), method or self.method, self.labels
        )

    def to_csv(self, path, sphere_mesh: SphereMesh | None = None, header_lines=()) -> None:
        lines = list(header_lines) + ["src,dst,value,method"]
        for (a, b), v in zip(self.pairs, self.values):
            lines.append(f"{_point_label(a, sphere_mesh)},{_point_label(b, sphere_mesh)},{v:.17g},{self.method}")
        Path(path).write_text("\n".join(lines) + "\n")


def _point_label(d, sphere_mesh) -> str:
    if sphere_mesh is not None:
        hit = np.flatnonzero(np.all(sphere_mesh.directions == d, axis=1))
        if hit.size:
            return str(int(hit[0]))
    return ":".join(f"{x:.17g}" for x in d)


def random_panel(
    candidates: np.ndarray, size: int, seed: int, min_angle: float = np.pi / 6
) -> DistancePanel:
    """``size`` direction pairs drawn from ``candidates`` with angle >= ``min_angle``."""
    rng = np.random.default_rng(seed)
    pairs = []
    cos_max = math.cos(min_angle)
    while len(pairs) < size:
        i, j = rng.integers(0, len(candidates), size=2)
        if candidates[i] @ candidates[j] <= cos_max:
            pairs.append((candidates[i].copy(), candidates[j].copy()))
    return DistancePanel(pairs, labels=[f"random{k}" for k in range(size)])


def panel_eval(
    mesh: IntrinsicMesh, sphere_mesh: SphereMesh, panel: DistancePanel
) -> DistancePanel:
    """Fast-marching distances for every pair, one march per distinct source."""
    values = np.empty(len(panel))
    cache: dict[bytes, tuple[SurfacePoint, np.ndarray]] = {}
    for k, (a, b) in enumerate(panel.pairs):
        key = np.asarray(a, dtype=float).tobytes()
        if key not in cache:
            sp = locate_direction(sphere_mesh, a)
            cache[key] = (sp, fast_march(mesh, sp))
        src, T = cache[key]
        tgt = locate_direction(sphere_mesh, b)
        values[k] = 0.0 if np.array_equal(a, b) else distance_to_point(mesh, T, tgt, src)
    return panel.with_values(values, "fast_marching")


def panel_prober(sphere_mesh: SphereMesh, panel: DistancePanel):
    """Callable mesh -> panel distance vector (for flow traces)."""
    located = [(locate_direction(sphere_mesh, a), locate_direction(sphere_mesh, b)) for a, b in panel.pairs]
    same = [bool(np.array_equal(a, b)) for a, b in panel.pairs]

    def probe(mesh: IntrinsicMesh) -> np.ndarray:
        out = np.empty(len(located))
        fields: dict[tuple, np.ndarray] = {}
        for k, (src, tgt) in enumerate(located):
            key = (src.triangle, src.bary)
            if key not in fields:
                fields[key] = fast_march(mesh, src)
            out[k] = 0.0 if same[k] else distance_to_point(mesh, fields[key], tgt, src)
        return out

    return probe


# -- exact unfolding on convex polyhedra --------------------------------------

def _polygon_faces(body: ConvexBody, tol: float = 1e-9):
    """Merge coplanar hull triangles into convex polygon faces.

    Returns a list of (normal, ordered vertex ids).
    """
    n = body.normals
    groups: list[list[int]] = []
    for f in range(len(body.facets)):
        for g in groups:
            h = g[0]
            if n[f] @ n[h] > 1 - tol and abs(body.offsets[f] - body.offsets[h]) < tol:
                g.append(f)
                break
        else:
            groups.append([f])
    faces = []
    for g in groups:
        ids = sorted(set(chain.from_iterable(body.facets[f] for f in g)))
        normal = n[g[0]]
        pts = body.vertices[ids]
        c = pts.mean(axis=0)
        e1 = pts[0] - c
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(normal, e1)
        ang = np.arctan2((pts - c) @ e2, (pts - c) @ e1)
        faces.append((normal, [ids[i] for i in np.argsort(ang)]))
    return faces


def _faces_of_point(body, faces, p, tol=1e-9):
    out = []
    for i, (normal, ids) in enumerate(faces):
        v = body.vertices[ids]
        if abs((p - v[0]) @ normal) > tol:
            continue
        inside = True
        for k in range(len(ids)):
            a, b = v[k], v[(k + 1) % len(ids)]
            if np.cross(b - a, p - a) @ normal < -tol:
                inside = False
                break
        if inside:
            out.append(i)
    return out


def _shared_edge(faces, i, j):
    s = set(faces[i][1]) & set(faces[j][1])
    return tuple(sorted(s)) if len(s) == 2 else None


def _rotate_about(points, a, b, angle):
    k = (b - a) / np.linalg.norm(b - a)
    p = points - a
    c, s = math.cos(angle), math.sin(angle)
    rot = p * c + np.cross(k, p) * s + np.outer(p @ k, k) * (1 - c)
    return rot + a


def unfold_polyhedron(body: ConvexBody, point_a, point_b, max_faces: int = 6) -> float:
    """Shortest surface path between two boundary points of a convex polyhedron.

    Every face sequence of length <= ``max_faces`` joining a face containing
    ``point_a`` to one containing ``point_b`` is unfolded into the plane of
    the first face; the straight segment is kept when it crosses each shared
    edge inside the edge.
    """
    a = np.asarray(point_a, dtype=float)
    b = np.asarray(point_b, dtype=float)
    faces = _polygon_faces(body)
    fa = _faces_of_point(body, faces, a)
    fb = set(_faces_of_point(body, faces, b))
    if not fa or not fb:
        raise ValueError("points must lie on the polyhedron boundary")
    if fb & set(fa):
        return float(np.linalg.norm(a - b))
    adj = {
        i: [j for j in range(len(faces)) if j != i and _shared_edge(faces, i, j)]
        for i in range(len(faces))
    }
    best = np.inf

    def walk(seq, edges, target_point):
        # target_point: b expressed in the current unfolded frame
        nonlocal best
        last = seq[-1]
        if last in fb:
            seg = target_point - a
            ok = True
            for p, q in edges:
                # segment must cross edge pq (coplanar after unfolding)
                m = np.column_stack([seg, p - q])
                try:
                    st, *_ = np.linalg.lstsq(m, p - a, rcond=None)
                except np.linalg.LinAlgError:  # pragma: no cover
                    ok = False
                    break
                s, t = st
                if not (-1e-9 <= s <= 1 + 1e-9 and -1e-9 <= t <= 1 + 1e-9):
                    ok = False
                    break
                if np.linalg.norm(a + s * seg - (p + t * (q - p))) > 1e-7:
                    ok = False
                    break
            if ok:
                best = min(best, float(np.linalg.norm(seg)))
            return
        if len(seq) >= max_faces:
            return
        for nxt in adj[last]:
            if nxt in seq:
                continue
            walk_next(seq, edges, nxt)

    # unfolded vertex positions are tracked per sequence
    def walk_next(seq, edges, nxt):
        last = seq[-1]
        i0, i1 = _shared_edge(faces, last, nxt)
        pos = frames[-1]
        p, q = pos[i0], pos[i1]
        n_last = normals[-1]
        # rotate the next face about edge pq into the current plane
        rot_next = _face_rotation(faces, last, nxt, body, i0, i1, pos, n_last)
        new_pos = dict(pos)
        new_pos.update(rot_next)
        frames.append(new_pos)
        normals.append(n_last)
        tp = _unfold_point(body, faces, nxt, b, body.vertices, new_pos) if nxt in fb else None
        walk(seq + [nxt], edges + [(p, q)], tp)
        frames.pop()
        normals.pop()

    for f0 in fa:
        frames = [{i: body.vertices[i].copy() for i in faces[f0][1]}]
        normals = [faces[f0][0]]
        walk([f0], [], None)
    if not np.isfinite(best):
        raise BudgetExceeded(f"no unfolded segment within {max_faces} faces")
    return best


def _face_rotation(faces, last, nxt, body, i0, i1, pos, n_last):
    """Unfolded positions of ``nxt``'s vertices in the plane of face ``last``."""
    ids = faces[nxt][1]
    orig = body.vertices
    # map face nxt rigidly: first rotate it about its edge into the plane of
    # `last` in 3D original coordinates, then carry it along with `last`'s
    # unfolding (rigid map determined by the shared edge).
    n_a = faces[last][0]
    n_b = faces[nxt][0]
    e0, e1 = orig[i0], orig[i1]
    k = (e1 - e0) / np.linalg.norm(e1 - e0)
    ang = math.atan2(np.cross(n_b, n_a) @ k, n_b @ n_a)
    flat = _rotate_about(orig[ids], e0, e1, ang)
    # rigid map sending (orig e0, orig e1, normal of last) to unfolded positions
    src = _frame(e0, e1, n_a)
    dst = _frame(pos[i0], pos[i1], n_last)
    mapped = (flat - e0) @ src.T @ dst + pos[i0]
    return {i: mapped[j] for j, i in enumerate(ids)}


def _frame(p, q, n):
    x = (q - p) / np.linalg.norm(q - p)
    z = n / np.linalg.norm(n)
    y = np.cross(z, x)
    return np.array([x, y, z])


def _unfold_point(body, faces, f, point, orig, pos):
    """Position of ``point`` (on face f) in the unfolded frame, by affine coordinates."""
    ids = faces[f][1][:3]
    v = orig[ids]
    m = np.column_stack([v[1] - v[0], v[2] - v[0]])
    st, *_ = np.linalg.lstsq(m, point - v[0], rcond=None)
    u0, u1, u2 = (pos[i] for i in ids)
    return u0 + st[0] * (u1 - u0) + st[1] * (u2 - u0)
