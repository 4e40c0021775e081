"""Smooth convex approximants of a convex body via its support function.

The support function is expanded in real spherical harmonics and damped by
the spherical heat kernel, ``c_lm -> exp(-l(l+1) eps) c_lm``.  The heat
kernel is a positive zonal kernel, so the damped function is again a
support function; strict convexity lost to truncation or grid effects is
restored by Minkowski-adding a small ball (a shift of the l = 0 term).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import sphere
from .convex_body import ConvexBody, support

FD_STEP = 1e-4
SQRT_4PI = float(np.sqrt(4.0 * np.pi))


class QuadratureTooCoarse(ValueError):
    pass


@dataclass(frozen=True)
class SupportField:
    """Truncated harmonic expansion of a support function about ``center``.

    ``frame`` is the orthogonal matrix whose columns carry the harmonic
    basis axes: the field at direction ``x`` is ``sum c_lm Y_lm(frame.T x)``.
    """

    lmax: int
    coefficients: np.ndarray
    center: np.ndarray
    margin: float
    quadrature_level: int
    frame: np.ndarray = field(default_factory=lambda: np.eye(3))
    epsilon: float = 0.0
    shift: float = 0.0

    def __call__(self, dirs) -> np.ndarray:
        d = np.atleast_2d(np.asarray(dirs, dtype=float))
        return sphere.sh_eval(self.lmax, self.coefficients, d @ self.frame)

    @property
    def mean_support(self) -> float:
        return float(self.coefficients[0]) / SQRT_4PI

    def quadrature(self):
        dirs, w = sphere.quadrature(self.quadrature_level)
        return dirs @ self.frame.T, w


def _support_values(source, dirs) -> np.ndarray:
    """Support about the origin of a ConvexBody or SupportField."""
    d = np.atleast_2d(np.asarray(dirs, dtype=float))
    if isinstance(source, ConvexBody):
        return support(source, d) + d @ source.center
    return source(d) + d @ source.center


def default_quadrature_level(lmax: int) -> int:
    return max(4 * lmax + 4, 8)


def project_support(
    body: ConvexBody,
    lmax: int,
    quadrature_level: int | None = None,
    frame=None,
) -> SupportField:
    """Quadrature projection of the body's support function onto degree <= lmax."""
    if lmax < 0:
        raise ValueError("lmax must be >= 0")
    if quadrature_level is None:
        quadrature_level = default_quadrature_level(lmax)
    if quadrature_level < 2 * lmax:
        raise QuadratureTooCoarse(
            f"quadrature level {quadrature_level} cannot resolve degree {2 * lmax}"
        )
    frame = np.eye(3) if frame is None else np.asarray(frame, dtype=float)
    q, w = sphere.quadrature(quadrature_level)
    values = support(body, q @ frame.T)
    coeffs = sphere.sh_project(lmax, values, w, q)
    f = SupportField(
        lmax=int(lmax),
        coefficients=coeffs,
        center=np.array(body.center, dtype=float),
        margin=np.nan,
        quadrature_level=int(quadrature_level),
        frame=frame,
    )
    return replace(f, margin=measure_margin(f))


def reconstruction_error(field: SupportField, body: ConvexBody, n: int = 10_000) -> float:
    """Sup-norm gap between the field and the exact support on ``n`` directions."""
    rng = np.random.default_rng(0)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return float(np.abs(field(d) - support(body, d)).max())


def tangent_hessian(fn, dirs, step: float = FD_STEP) -> np.ndarray:
    """Covariant Hessian of ``fn`` on the unit sphere by central differences.

    Second differences are taken in normal coordinates about each direction,
    where the Christoffel symbols vanish.  Returns shape (N, 2, 2).
    """
    dirs = np.atleast_2d(dirs)
    e1, e2 = sphere.tangent_frames(dirs)
    offs = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]
    pts = np.concatenate(
        [sphere.exp_map(dirs, e1, e2, a * step, b * step) for a, b in offs]
    )
    v = fn(pts).reshape(len(offs), -1)
    f0 = v[0]
    h11 = (v[1] - 2 * f0 + v[2]) / step**2
    h22 = (v[3] - 2 * f0 + v[4]) / step**2
    h12 = (v[5] - v[6] - v[7] + v[8]) / (4 * step**2)
    return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)


def radii_of_curvature(field: SupportField, dirs) -> np.ndarray:
    """Eigenvalues of (Hess h + h I) at each direction, shape (N, 2)."""
    dirs = np.atleast_2d(dirs)
    hess = tangent_hessian(field, dirs)
    hess = hess + field(dirs)[:, None, None] * np.eye(2)
    return np.linalg.eigvalsh(hess)


def measure_margin(field: SupportField) -> float:
    q, _ = field.quadrature()
    return float(radii_of_curvature(field, q).min())


def default_mu_min(field: SupportField) -> float:
    return 1e-3 * field.mean_support


def margin_repair(field: SupportField, mu_min: float | None = None) -> SupportField:
    """Minkowski-add a ball so that the measured margin reaches ``mu_min``."""
    if mu_min is None:
        mu_min = default_mu_min(field)
    if field.margin >= mu_min:
        return field
    c = mu_min - field.margin
    coeffs = field.coefficients.copy()
    coeffs[0] += c * SQRT_4PI
    out = replace(field, coefficients=coeffs, shift=field.shift + c)
    return replace(out, margin=measure_margin(out))


def heat_mollify(
    field: SupportField, epsilon: float, repair: bool = True, mu_min: float | None = None
) -> SupportField:
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if epsilon == 0:
        out = field
    else:
        l = sphere.degrees(field.lmax)
        coeffs = field.coefficients * np.exp(-l * (l + 1) * epsilon)
        out = replace(field, coefficients=coeffs, epsilon=field.epsilon + epsilon)
        out = replace(out, margin=measure_margin(out))
    return margin_repair(out, mu_min) if repair else out


def smooth_body(
    body: ConvexBody,
    lmax: int,
    epsilon: float,
    quadrature_level: int | None = None,
    frame=None,
    mu_min: float | None = None,
) -> SupportField:
    """Projection, heat damping and margin repair in one call."""
    f = project_support(body, lmax, quadrature_level, frame)
    return heat_mollify(f, epsilon, repair=True, mu_min=mu_min)


def hausdorff_distance(a, b, n: int = 20_000, refine: int = 8) -> float:
    """Sup of |h_a - h_b| over ``n`` quasi-uniform directions.

    The ``refine`` largest grid values are then polished by a local
    Nelder-Mead search in normal coordinates, so the result does not depend
    on whether the grid happens to hit a corner direction.  Supports are
    taken about the origin so bodies with different centers compare
    correctly.  Either argument may be a ConvexBody.
    """
    d = sphere.fibonacci_dirs(n)
    gap = np.abs(_support_values(a, d) - _support_values(b, d))
    best = float(gap.max())
    if refine <= 0:
        return best
    start = d[np.argsort(gap)[-refine:]]
    e1, e2 = sphere.tangent_frames(start)
    step = 2.0 * np.sqrt(4.0 * np.pi / n)
    for i in range(len(start)):
        base, f1, f2 = start[i : i + 1], e1[i : i + 1], e2[i : i + 1]

        def neg(ab):
            x = sphere.exp_map(base, f1, f2, ab[0], ab[1])
            return -float(np.abs(_support_values(a, x) - _support_values(b, x))[0])

        res = minimize(neg, np.zeros(2), method="Nelder-Mead",
                       options={"initial_simplex": [[0, 0], [step, 0], [0, step]],
                                "xatol": 1e-10, "fatol": 1e-14})
        best = max(best, -float(res.fun))
    return best


# -- radial function of a smooth support field --------------------------------

def _homogeneous(field: SupportField, y: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(y, axis=1)
    return r * field(y / r[:, None])


def radial_from_support(field: SupportField, dirs) -> np.ndarray:
    """Radial function of the body with support ``field`` about its center.

    rho(d) = min over normals n with <n, d> > 0 of h(n) / <n, d>; in the
    gnomonic chart n ~ d + w this is the minimum of the convex function
    H(d + w), H the 1-homogeneous extension of h.  Solved by damped Newton
    with finite-difference derivatives, starting from the best quadrature
    normal.
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    n = len(dirs)
    e1, e2 = sphere.tangent_frames(dirs)

    # initial guess from the quadrature normals
    q, _ = field.quadrature()
    hq = field(q)
    w = np.zeros((n, 2))
    best = np.full(n, np.inf)
    for s in range(0, n, 2048):
        sl = slice(s, s + 2048)
        cos = dirs[sl] @ q.T
        with np.errstate(divide="ignore"):
            ratio = np.where(cos > 0.2, hq[None, :] / cos, np.inf)
        k = ratio.argmin(axis=1)
        best[sl] = ratio[np.arange(len(k)), k]
        nq = q[k] / cos[np.arange(len(k)), k][:, None]
        w[sl, 0] = np.einsum("ij,ij->i", nq, e1[sl])
        w[sl, 1] = np.einsum("ij,ij->i", nq, e2[sl])

    step = FD_STEP
    f = _value_at(field, dirs, e1, e2, np.arange(n), w)
    active = np.ones(n, dtype=bool)
    for _ in range(40):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        wi = w[idx]
        offs = np.array([[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1]])
        vals = np.stack([_value_at(field, dirs, e1, e2, idx, wi + step * o) for o in offs])
        f0 = f[idx]
        g = np.column_stack([(vals[0] - vals[1]) / (2 * step), (vals[2] - vals[3]) / (2 * step)])
        h11 = (vals[0] - 2 * f0 + vals[1]) / step**2
        h22 = (vals[2] - 2 * f0 + vals[3]) / step**2
        h12 = (vals[4] - vals[5] - vals[6] + vals[7]) / (4 * step**2)
        det = h11 * h22 - h12 * h12
        ok = (det > 0) & (h11 > 0)
        sd = np.where(
            ok[:, None],
            -np.column_stack([h22 * g[:, 0] - h12 * g[:, 1], -h12 * g[:, 0] + h11 * g[:, 1]])
            / np.where(ok, det, 1.0)[:, None],
            -g,
        )
        t = 1.0
        done = np.zeros(len(idx), dtype=bool)
        for _ls in range(40):
            todo = np.flatnonzero(~done)
            trial = wi[todo] + t * sd[todo]
            ft = _value_at(field, dirs, e1, e2, idx[todo], trial)
            better = ft <= f0[todo]
            w[idx[todo[better]]] = trial[better]
            f[idx[todo[better]]] = ft[better]
            done[todo[better]] = True
            if done.all():
                break
            t *= 0.5
        decrement = -np.einsum("ij,ij->i", g, sd)
        converged = (decrement < 1e-13 * f0) | ~done
        active[idx[converged]] = False
    return np.minimum(f, best)


def _value_at(field, dirs, e1, e2, idx, wv):
    y = dirs[idx] + wv[:, :1] * e1[idx] + wv[:, 1:] * e2[idx]
    return _homogeneous(field, y)


# -- text I/O ----------------------------------------------------------------

def write_field(path, field: SupportField, header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines.append(f"lmax {field.lmax}")
    lines.append("center " + " ".join(f"{x:.17g}" for x in field.center))
    lines.append("frame " + " ".join(f"{x:.17g}" for x in field.frame.ravel()))
    lines.append(f"quadrature {field.quadrature_level}")
    lines.append(f"epsilon {field.epsilon:.17g}")
    lines.append(f"shift {field.shift:.17g}")
    lines.append(f"margin {field.margin:.17g}")
    for l in range(field.lmax + 1):
        for m in range(-l, l + 1):
            lines.append(f"{l} {m} {field.coefficients[sphere.coeff_index(l, m)]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path) -> SupportField:
    meta: dict[str, list[str]] = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0][0].isalpha():
            meta[parts[0]] = parts[1:]
        else:
            rows.append((int(parts[0]), int(parts[1]), float(parts[2])))
    lmax = int(meta["lmax"][0])
    coeffs = np.zeros(sphere.n_coeffs(lmax))
    for l, m, v in rows:
        coeffs[sphere.coeff_index(l, m)] = v
    return SupportField(
        lmax=lmax,
        coefficients=coeffs,
        center=np.array([float(x) for x in meta["center"]]),
        margin=float(meta["margin"][0]),
        quadrature_level=int(meta["quadrature"][0]),
        frame=np.array([float(x) for x in meta["frame"]]).reshape(3, 3),
        epsilon=float(meta.get("epsilon", ["0"])[0]),
        shift=float(meta.get("shift", ["0"])[0]),
    )
