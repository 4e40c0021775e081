"""Property checks over flow runs and a deterministic JSON report.

Every check returns a ``Check`` holding the measured values, the tolerance
and a verdict that can be re-derived from those numbers alone.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import spearmanr

from .convex_body import ConvexBody
from .discretization import IntrinsicMesh, RadialField, SphereMesh, gradient_bound_quantity
from .geodesics import DistancePanel, fast_march, sample_in_triangles
from .pipeline import (
    FlowRun,
    RunConfig,
    flow_run,
    make_panel,
    reference_panel,
    rotate_panel,
)
from .ricci_flow import FlowTrace, area_law_check, curvature_bound_fit
from .smoothing import hausdorff_distance

GB_TOL = 1e-9
MONOTONE_TOL = 1e-12
POSITIVITY_TOL = 1e-6
AREA_TOL = 1e-3
EQUIVARIANCE_TOL = 1e-6
SYMMETRY_TOL = 1e-12
ALEXANDROV_TOL = 0.02
GRADIENT_TOL = 0.01


class MissingPanel(ValueError):
    pass


class ScheduleMismatch(ValueError):
    pass


class CorrespondenceAmbiguous(RuntimeError):
    pass


@dataclass
class Check:
    name: str
    anchor: str
    measured: dict
    tolerance: dict
    verdict: bool

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "anchor": self.anchor,
            "measured": _clean(self.measured),
            "tolerance": _clean(self.tolerance),
            "verdict": "pass" if self.verdict else "fail",
        }


@dataclass
class VerificationReport:
    checks: list[Check] = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    config_hash: str = ""

    @property
    def passed(self) -> bool:
        return all(c.verdict for c in self.checks)

    def to_json(self) -> str:
        doc = {
            "config_hash": self.config_hash,
            "metadata": _clean(self.metadata),
            "constants": _clean({k: self.constants.get(k) for k in ("c1", "c2", "K_bar", "C_equiv")}),
            "checks": [c.as_dict() for c in sorted(self.checks, key=lambda c: c.name)],
            "all_pass": self.passed,
        }
        return json.dumps(doc, indent=2) + "\n"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def emit_report(checks: Sequence[Check], metadata: dict | None = None,
                constants: dict | None = None, config_hash: str = "") -> VerificationReport:
    return VerificationReport(list(checks), dict(constants or {}), dict(metadata or {}), config_hash)


def relative_spread(a: float, b: float) -> float:
    """|a - b| relative to the second (finer) value."""
    return abs(a - b) / abs(b) if b != 0 else (0.0 if a == 0 else math.inf)


# -- per-trace identities -----------------------------------------------------

def check_gauss_bonnet(trace: FlowTrace, name: str = "gauss_bonnet") -> Check:
    r = float(np.abs(trace.column("gbResidual")).max())
    return Check(name, "total angle defect equals 4 pi", {"max_residual": r},
                 {"abs": GB_TOL}, r <= GB_TOL)


def check_area_law(trace: FlowTrace, name: str = "area_law", tol: float = AREA_TOL) -> Check:
    r = area_law_check(trace)
    return Check(name, "area decreases at rate 8 pi", {"max_rel_residual": r}, {"rel": tol}, r <= tol)


def check_positivity(trace: FlowTrace, name: str = "positivity") -> Check:
    kmin = trace.column("minK")
    kmax = trace.column("maxK")
    worst = float((kmin + POSITIVITY_TOL * np.abs(kmax)).min())
    return Check(name, "curvature stays positive along the flow",
                 {"min_K": float(kmin.min()), "margin": worst},
                 {"rel_to_max_K": POSITIVITY_TOL}, worst >= 0)


def check_monotonicity(trace: FlowTrace, name: str = "monotonicity") -> Check:
    ratio = float(trace.column("maxLengthRatio").max())
    du = float(trace.column("maxDu").max())
    scale = max(1.0, float(np.abs(trace.column("minU")).max()))
    ok = ratio <= 1 + MONOTONE_TOL and du <= MONOTONE_TOL * scale
    return Check(name, "g(t) <= g0 and u non-increasing",
                 {"max_length_ratio": ratio, "max_du": du}, {"rel": MONOTONE_TOL}, ok)


def trace_checks(trace: FlowTrace, prefix: str) -> list[Check]:
    return [
        check_gauss_bonnet(trace, f"{prefix}.gauss_bonnet"),
        check_positivity(trace, f"{prefix}.positivity"),
        check_monotonicity(trace, f"{prefix}.monotonicity"),
    ]


# -- distance checks ----------------------------------------------------------

def check_distance_sandwich(trace: FlowTrace, d0_panel: DistancePanel | np.ndarray,
                            name: str = "distance_sandwich"):
    """Upper bound d_t <= d_0 exactly (c1 = 0) and the fitted c2."""
    if trace.n_panel == 0:
        raise MissingPanel("trace carries no panel distances")
    d0 = np.asarray(getattr(d0_panel, "values", d0_panel), dtype=float)
    t, p = trace.sampled()
    keep = t > 0
    t, p = t[keep], p[keep]
    upper = float((p / np.where(d0 > 0, d0, 1.0) - 1.0).max()) if len(t) else 0.0
    c2 = float(((d0 - p) / np.sqrt(t)[:, None]).max()) if len(t) else 0.0
    c1 = 0.0
    ok = upper <= 1e-9
    chk = Check(name, "d - c2 sqrt(t) <= d_g(t) <= exp(c1 t) d",
                {"c1": c1, "c2": c2, "max_rel_increase": upper}, {"upper_rel": 1e-9}, ok)
    return c1, c2, chk


def check_stability(name: str, anchor: str, coarse: float, fine: float, tol: float) -> Check:
    s = relative_spread(coarse, fine)
    ok = math.isfinite(coarse) and math.isfinite(fine) and s <= tol
    return Check(name, anchor, {"coarse": coarse, "fine": fine, "spread": s}, {"rel": tol}, ok)


def panel_deviation(values, reference) -> float:
    ref = np.asarray(getattr(reference, "values", reference), dtype=float)
    v = np.asarray(values, dtype=float)
    nz = ref > 0
    return float((np.abs(v[nz] - ref[nz]) / ref[nz]).max())


def _decreasing(seq, slack):
    return all(b < a * (1 + slack) for a, b in zip(seq, seq[1:]))


def check_initial_convergence(runs: Sequence[FlowRun], reference: DistancePanel,
                              tol: float = 0.05, slack: float = 0.10,
                              name: str = "initial_convergence") -> Check:
    """Sup panel deviation at (eps_k, t_k) decreases and ends within ``tol``."""
    if len(runs) < 3:
        raise ScheduleMismatch("need at least three epsilon values")
    eps = [r.epsilon for r in runs]
    if any(a <= b for a, b in zip(eps, eps[1:])):
        raise ScheduleMismatch("epsilons must be strictly decreasing")
    if any(len(r.panel) != len(reference) for r in runs):
        raise ScheduleMismatch("panels do not match the reference")
    devs = [panel_deviation(r.trace.sampled()[1][-1], reference) for r in runs]
    ok = _decreasing(devs, slack) and devs[-1] <= tol
    return Check(name, "sup |d_g(t) - d| -> 0 as (eps, t) -> 0",
                 {"epsilon": eps, "t": [r.t_target for r in runs], "sup_rel_dev": devs},
                 {"finest_rel": tol, "slack": slack}, ok)


def check_d_equals_dhu(run: FlowRun, reference: DistancePanel, tol: float = 0.05,
                       name: str = "d_equals_dhu") -> Check:
    """Panel of the conformal metric at the smallest sampled t > 0 against d."""
    t, p = run.trace.sampled()
    pos = np.flatnonzero(t > 0)
    if pos.size == 0:
        raise MissingPanel("no panel sampled at t > 0")
    k = int(pos[0])
    dev = panel_deviation(p[k], reference)
    return Check(name, "d = d_{h,u0}", {"t": float(t[k]), "sup_rel_dev": dev}, {"rel": tol}, dev <= tol)


def check_hausdorff_controls_intrinsic(fields, panels0, reference: DistancePanel, body,
                                       slack: float = 0.10,
                                       name: str = "hausdorff_controls_intrinsic") -> Check:
    dh = [hausdorff_distance(body, f) if f is not None else 0.0 for f in fields]
    dev = [panel_deviation(p, reference) for p in panels0]
    if len(dh) >= 3 and np.ptp(dh) > 0 and np.ptp(dev) > 0:
        rho = float(spearmanr(dh, dev).statistic)
    else:
        rho = 1.0
    ok = _decreasing(dh, slack) and _decreasing(dev, slack) and rho == 1.0
    return Check(name, "Hausdorff closeness controls intrinsic closeness",
                 {"hausdorff": dh, "sup_rel_dev_t0": dev, "rank_correlation": rho},
                 {"slack": slack}, ok)


# -- metric equivalence and curvature bound ------------------------------------

def metric_equivalence_constant(meshes: Sequence[IntrinsicMesh]) -> float:
    """max over meshes/edges of max(r, 1/r), r = length / unit-sphere chord."""
    c = 1.0
    for m in meshes:
        r = m.current_lengths / m.round_lengths
        c = max(c, float(r.max()), float((1.0 / r).max()))
    return c


def check_metric_equivalence(run: FlowRun, name: str = "metric_equivalence",
                             expected: float | None = None, tol: float = 0.01):
    meshes = [m for t, m in run.snapshot_meshes() if t > 0]
    if len(meshes) < 5:
        raise MissingPanel("need meshes at >= 5 positive times")
    c = metric_equivalence_constant(meshes)
    measured = {"C_equiv": c}
    ok = math.isfinite(c)
    if expected is not None:
        measured["expected"] = expected
        measured["rel_err"] = abs(c - expected) / expected
        ok = ok and measured["rel_err"] <= tol
    return c, Check(name, "C^-1 delta <= g(t) <= C delta", measured, {"rel": tol}, ok)


def ball_equivalence_constant(radius: float, times) -> float:
    """Closed-form C for a round sphere: edge ratios are r sqrt(1 - 2t/r^2)."""
    s = radius * np.sqrt(1 - 2 * np.asarray(times, dtype=float) / radius**2)
    return float(max(1.0, np.maximum(s, 1 / s).max()))


def curvature_bound(run: FlowRun) -> float:
    return curvature_bound_fit(run.trace, 0.0)


# -- closed forms -------------------------------------------------------------

def check_sphere_closed_form(run: FlowRun, radius: float = 1.0, tol: float = 0.01,
                             name: str = "sphere_closed_form") -> Check:
    """K = 1/(r^2 - 2t) per vertex, distances scaled by sqrt(1 - 2t/r^2)."""
    kdev = 0.0
    for t, m in run.snapshot_meshes():
        k = 1.0 / (radius**2 - 2 * t)
        kdev = max(kdev, float(np.abs(m.curvature / k - 1).max()))
    t, p = run.trace.sampled()
    d0 = np.array([radius * math.acos(max(-1.0, min(1.0, float(a @ b)))) for a, b in run.panel.pairs])
    scale = np.sqrt(1 - 2 * t / radius**2)[:, None]
    ddev = float((np.abs(p - scale * d0) / (scale * d0)).max())
    return Check(name, "round sphere shrinks with K = 1/(1-2t)",
                 {"max_rel_K_dev": kdev, "max_rel_distance_dev": ddev},
                 {"rel": tol}, kdev <= tol and ddev <= tol)


def check_gradient_bound(rf: RadialField, sphere: SphereMesh, label: str, tol: float = GRADIENT_TOL) -> Check:
    combined, vsq = gradient_bound_quantity(rf, sphere)
    ratio = combined / vsq
    return Check(f"gradient_bound.{label}", "max(|grad v|^2 + v^2) <= max v^2",
                 {"max_combined": combined, "max_v_squared": vsq, "ratio": ratio},
                 {"rel": tol}, ratio <= 1 + tol)


# -- equivariance ----------------------------------------------------------------

def vertex_correspondence(dirs_a: np.ndarray, dirs_b: np.ndarray, rotation) -> np.ndarray:
    """Index map b -> a matching rotation^T dirs_b to the nearest of dirs_a."""
    back = dirs_b @ np.asarray(rotation)  # rows: R^T d
    dist, idx = cKDTree(dirs_a).query(back)
    if len(np.unique(idx)) != len(idx) or dist.max() > 1e-6:
        raise CorrespondenceAmbiguous("nearest-direction matching is not a bijection")
    return idx


def edge_lengths_relative_difference(mesh_a, mesh_b, vmap) -> float:
    ea = {tuple(sorted(e)): i for i, e in enumerate(mesh_a.edges.tolist())}
    mapped = np.sort(vmap[mesh_b.edges], axis=1)
    ia = np.array([ea[(int(x), int(y))] for x, y in mapped])
    la = mesh_a.current_lengths[ia]
    return float((np.abs(mesh_b.current_lengths - la) / la).max())


def check_equivariance(body: ConvexBody, rotation, cfg: RunConfig, panel: DistancePanel,
                       level: int, t_target: float, tol: float = EQUIVARIANCE_TOL,
                       name: str = "equivariance", epsilon: float | None = None) -> Check:
    """Run the pipeline on body and rotated body and compare edge lengths."""
    r = np.asarray(rotation, dtype=float)
    if np.abs(r @ r.T - np.eye(3)).max() > 1e-12:
        raise ValueError("rotation must be orthogonal to 1e-12")
    eps = cfg.epsilons[0] if epsilon is None else epsilon
    a = flow_run(body, level, cfg.lmax, eps, cfg.cfl, panel, t_target=t_target, n_samples=2)
    b = flow_run(body.rotated(r), level, cfg.lmax, eps, cfg.cfl, rotate_panel(panel, r),
                 t_target=t_target, n_samples=2, frame=r)
    vmap = vertex_correspondence(a.sphere.directions, b.sphere.directions, r)
    diffs = []
    for (ta, ua), (tb, ub) in zip(a.trace.snapshots, b.trace.snapshots):
        if ta != tb:
            raise CorrespondenceAmbiguous("runs recorded different times")
        diffs.append(edge_lengths_relative_difference(
            a.mesh0.with_conformal(ua), b.mesh0.with_conformal(ub), vmap))
    worst = max(diffs)
    return Check(name, "the flow intertwines isometries", {"max_rel_length_diff": worst,
                 "times": [t for t, _ in a.trace.snapshots]}, {"rel": tol}, worst <= tol)


def icosahedral_rotation() -> np.ndarray:
    """Rotation by 2 pi / 5 about an icosahedron vertex axis."""
    phi = (1 + 5**0.5) / 2
    k = np.array([0.0, 1.0, phi]) / math.hypot(1.0, phi)
    ang = 2 * math.pi / 5
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(ang) * kx + (1 - math.cos(ang)) * kx @ kx


# -- Alexandrov comparison -----------------------------------------------------

def geodesic_point(mesh: IntrinsicMesh, db, dc, fields, balance: float = 0.1, n: int = 12):
    """Point near the middle of a shortest b-c path, at sub-triangle resolution.

    Minimises the excess d(b,x) + d(x,c) - d(b,c) over barycentric samples in
    the triangles around the best vertex, subject to d(b,x)/(d(b,x)+d(x,c))
    within ``balance`` of 1/2.  Returns the values of ``(db, dc, *fields)``.
    """
    frac = db / np.maximum(db + dc, 1e-300)
    ok = np.abs(frac - 0.5) <= balance
    excess = np.where(ok, db + dc, np.inf)
    v0 = int(np.argmin(excess))
    ring = mesh_ring(mesh, v0, 2)
    tris = np.flatnonzero(np.isin(mesh.triangles, ring).all(axis=1))
    _, _, vals = sample_in_triangles(mesh, [db, dc, *fields], tris, n)
    s, r = vals[0], vals[1]
    ok = np.abs(s / (s + r) - 0.5) <= balance
    k = int(np.argmin(np.where(ok, s + r, np.inf)))
    return vals[:, k]


def mesh_ring(mesh: IntrinsicMesh, v: int, depth: int) -> np.ndarray:
    nbrs = mesh.neighbors
    ring = {v}
    front = {v}
    for _ in range(depth):
        front = {int(w) for u in front for w in nbrs[u]} - ring
        ring |= front
    return np.array(sorted(ring))


def check_alexandrov(mesh: IntrinsicMesh, n: int = 100, seed: int = 0,
                     tol: float = ALEXANDROV_TOL, name: str = "alexandrov") -> Check:
    """d(a, m) >= comparison value for m near the middle of a b-c geodesic.

    The comparison uses Stewart's formula at the measured split
    s = d(b, m), L = d(b, m) + d(m, c).
    """
    rng = np.random.default_rng(seed)
    nv = mesh.n_vertices
    worst = np.inf
    fails = 0
    for _ in range(n):
        a, b, c = (int(x) for x in rng.choice(nv, size=3, replace=False))
        da, db, dc = fast_march(mesh, a), fast_march(mesh, b), fast_march(mesh, c)
        s, r, dam = geodesic_point(mesh, db, dc, [da])
        L = s + r
        comp2 = (da[b] ** 2 * r + da[c] ** 2 * s) / L - s * r
        comp = math.sqrt(max(comp2, 0.0))
        slack = (dam - comp) / dam if dam > 0 else 0.0
        worst = min(worst, slack)
        if slack < -tol:
            fails += 1
    return Check(name, "d(a,m) >= comparison value (non-negative curvature)",
                 {"triangles": n, "min_rel_slack": worst, "failures": fails},
                 {"rel": tol}, fails == 0)


def distance_symmetry(mesh: IntrinsicMesh, pairs) -> float:
    """Max relative asymmetry of fast marching run from both endpoints."""
    worst = 0.0
    for i, j in pairs:
        dij = fast_march(mesh, i)[j]
        dji = fast_march(mesh, j)[i]
        worst = max(worst, abs(dij - dji) / max(dij, dji))
    return worst



# -- suite ----------------------------------------------------------------------

def _run_one(args):
    cfg, source, eps, level = args
    body = source if isinstance(source, ConvexBody) else None
    panel = make_panel(cfg, body)
    frac = cfg.t_fraction if cfg.t_fraction > 0 else eps
    return flow_run(source, level, cfg.lmax, eps, cfg.cfl, panel,
                    t_fraction=frac, n_samples=cfg.n_samples)


def run_all(cfg: RunConfig, source, level: int | None = None, jobs: int = 1) -> list[FlowRun]:
    """One flow per epsilon; ``jobs`` > 1 runs them in worker processes."""
    level = cfg.level if level is None else level
    tasks = [(cfg, source, eps, level) for eps in cfg.epsilons]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
            return list(ex.map(_run_one, tasks))
    return [_run_one(t) for t in tasks]


def suite_checks(cfg: RunConfig, source, runs: Sequence[FlowRun]):
    """Checks and fitted constants over per-epsilon runs of one source."""
    checks: list[Check] = []
    c2s, kbars, cs = [], [], []
    for r in runs:
        tag = f"eps={r.epsilon:g}"
        checks += trace_checks(r.trace, tag)
        checks.append(check_area_law(r.trace, f"{tag}.area_law"))
        _, c2, chk = check_distance_sandwich(r.trace, r.d0, f"{tag}.distance_sandwich")
        checks.append(chk)
        c2s.append(c2)
        kbars.append(curvature_bound(r))
        if isinstance(source, tuple):
            _, radius = source
            checks.append(check_sphere_closed_form(r, radius, cfg.tol_closed_form,
                                                   f"{tag}.sphere_closed_form"))
            expected = ball_equivalence_constant(radius, [t for t, _ in r.trace.snapshots if t > 0])
        else:
            expected = None
        c, chk = check_metric_equivalence(r, f"{tag}.metric_equivalence", expected,
                                          cfg.tol_closed_form)
        cs.append(c)
        checks.append(chk)
    if isinstance(source, ConvexBody) and len(runs) >= 3:
        ref = reference_panel(source, runs[0].panel)
        checks.append(check_initial_convergence(runs, ref, cfg.tol_distance, cfg.tol_slack))
        checks.append(check_d_equals_dhu(runs[-1], ref, cfg.tol_distance))
        checks.append(check_hausdorff_controls_intrinsic(
            [r.field for r in runs], [r.d0 for r in runs], ref, source, cfg.tol_slack))
    kbar = kbars[-1]
    if len(runs) >= 2:
        window = common_window_runs(cfg, source, runs)
        pair = [curvature_bound(r) for r in window]
        checks.append(check_curvature_bound(pair, window[0].t_target, cfg.tol_stability))
        kbar = max(pair)
    constants = {"c1": 0.0, "c2": max(c2s), "K_bar": kbar, "C_equiv": max(cs)}
    return checks, constants


def common_window_runs(cfg: RunConfig, source, runs: Sequence[FlowRun]) -> list[FlowRun]:
    """The two finest epsilons flowed to the coarsest run's final time.

    The bound K <= K_bar / t is uniform in epsilon on a fixed interval, so
    the comparison needs one window for both runs.
    """
    t_common = runs[0].t_target
    out = []
    for r in runs[-2:]:
        if r.t_target == t_common:
            out.append(r)
            continue
        out.append(flow_run(source, int(r.sphere.level), cfg.lmax, r.epsilon, cfg.cfl, r.panel,
                            t_target=t_common, n_samples=2))
    return out


def check_curvature_bound(kbars: Sequence[float], window: float, tol: float = 0.25,
                          name: str = "curvature_bound_stability") -> Check:
    chk = check_stability(name, "K <= K_bar / t on (0, T]", kbars[0], kbars[1], tol)
    chk.measured["window"] = window
    return chk


def run_suite(cfg: RunConfig, source, jobs: int = 1):
    runs = run_all(cfg, source, jobs=jobs)
    checks, constants = suite_checks(cfg, source, runs)
    meta = {
        "input": cfg.input, "level": cfg.level, "lmax": cfg.lmax,
        "epsilons": list(cfg.epsilons), "cfl": cfg.cfl, "panel_seed": cfg.panel_seed,
        "panel_size": cfg.panel_size, "t_targets": [r.t_target for r in runs],
    }
    return emit_report(checks, meta, constants, cfg.hash), runs


def trace_file_checks(path, tol_area: float = AREA_TOL) -> list[Check]:
    """Checks that need only a saved trace file."""
    trace, _ = FlowTrace.from_csv(path)
    name = Path(path).stem
    checks = trace_checks(trace, name) + [check_area_law(trace, f"{name}.area_law", tol_area)]
    if trace.n_panel:
        _, _, chk = check_distance_sandwich(trace, trace.panel_table()[0], f"{name}.distance_sandwich")
        checks.append(chk)
    return checks
