"""End-to-end runs: body -> smooth support -> radial mesh -> flow with panels.

Also holds the run configuration (key = value text) and its hash, which
every artifact embeds so that mixed inputs can be rejected.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .convex_body import ConvexBody, radial
from .discretization import (
    IntrinsicMesh,
    RadialField,
    SphereMesh,
    embed,
    icosphere,
    sample_radial,
)
from .geodesics import DistancePanel, panel_prober, random_panel, unfold_polyhedron
from .ricci_flow import FlowState, FlowTrace, adaptive_run, init_flow
from .smoothing import SupportField, smooth_body

PANEL_CANDIDATE_LEVEL = 2


class ConfigError(ValueError):
    pass


class ArtifactMismatch(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    input: str = ""
    level: int = 5
    lmax: int = 24
    epsilons: tuple[float, ...] = (0.2, 0.1, 0.05)
    cfl: float = 0.1
    t_fraction: float = 0.0  # 0 selects the diagonal schedule t = eps * T_ext
    panel_size: int = 20
    panel_seed: int = 1
    n_samples: int = 6
    tol_distance: float = 0.05
    tol_stability: float = 0.25
    tol_closed_form: float = 0.01
    tol_slack: float = 0.10
    output: str = "out"

    def __post_init__(self):
        eps = self.epsilons
        if len(eps) == 0 or any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
            raise ConfigError("epsilon list must be positive and strictly decreasing")
        if not 0 <= self.t_fraction < 1:
            raise ConfigError("t_fraction must lie in [0, 1)")
        if self.panel_size < 2:
            raise ConfigError("panel size must be >= 2")
        if not 0 < self.cfl <= 1:
            raise ConfigError("cfl must lie in (0, 1]")

    def canonical(self) -> str:
        out = []
        for f in fields(self):
            if f.name == "output":
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> RunConfig:
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _coerce(name: str, text: str):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    if "tuple" in str(kind):
        return tuple(float(x) for x in text.replace(",", " ").split())
    if kind in ("int", int):
        return int(text)
    if kind in ("float", float):
        return float(text)
    return text


def parse_config(text: str, **overrides) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"malformed config line: {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in known:
            raise ConfigError(f"unknown config key {k!r}")
        values[k] = _coerce(k, v)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def load_config(path, **overrides) -> RunConfig:
    return parse_config(Path(path).read_text(), **overrides)


def hash_line(cfg: RunConfig) -> str:
    return f"# config {cfg.hash}"


def artifact_hash(path) -> str | None:
    """Config hash recorded in an artifact header, if any."""
    with open(path) as fh:
        for line in fh:
            if line.startswith("# config "):
                return line.split()[2]
            if line.startswith('  "config_hash"'):
                return line.split('"')[3]
    return None


def require_same_hash(paths) -> str:
    hashes = {str(p): artifact_hash(p) for p in paths}
    distinct = set(hashes.values())
    if len(distinct) != 1 or None in distinct:
        raise ArtifactMismatch(f"artifacts carry different config hashes: {hashes}")
    return distinct.pop()


# -- panels -------------------------------------------------------------------

def cube_panel_pairs(body: ConvexBody):
    """Opposite corners and adjacent face centres of an axis-aligned box."""
    v = body.vertices - body.center
    hi = v[np.argmax(v.sum(axis=1))]
    pairs = [
        (hi / np.linalg.norm(hi), -hi / np.linalg.norm(hi)),
        (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])),
    ]
    return pairs, ["opposite_corners", "adjacent_faces"]


def make_panel(cfg: RunConfig, body: ConvexBody | None = None, extra=True) -> DistancePanel:
    cand = icosphere(PANEL_CANDIDATE_LEVEL).directions
    panel = random_panel(cand, cfg.panel_size, cfg.panel_seed)
    if extra and body is not None and _is_box(body):
        pairs, labels = cube_panel_pairs(body)
        panel = DistancePanel(panel.pairs + pairs, labels=panel.labels + labels)
    return panel


def _is_box(body: ConvexBody) -> bool:
    v = body.vertices - body.center
    return len(v) == 8 and np.allclose(np.abs(v), np.abs(v[0]), atol=1e-12)


def rotate_panel(panel: DistancePanel, rotation) -> DistancePanel:
    r = np.asarray(rotation, dtype=float)
    return DistancePanel([(r @ a, r @ b) for a, b in panel.pairs], panel.values, panel.method, panel.labels)


def reference_panel(source, panel: DistancePanel, max_faces: int = 6) -> DistancePanel:
    """Ground-truth distances on the original surface.

    Polyhedra use the unfolding oracle at the radial boundary points; a
    ``("ball", r)`` source uses great-circle arcs.
    """
    vals = []
    if isinstance(source, ConvexBody):
        for a, b in panel.pairs:
            pa = source.center + radial(source, a[None])[0] * a
            pb = source.center + radial(source, b[None])[0] * b
            vals.append(0.0 if np.array_equal(a, b) else unfold_polyhedron(source, pa, pb, max_faces))
        method = "unfolding"
    else:
        _, r = source
        vals = [r * math.acos(max(-1.0, min(1.0, float(a @ b)))) for a, b in panel.pairs]
        method = "closed_form"
    return panel.with_values(vals, method)


# -- runs ---------------------------------------------------------------------

def extinction_time(area: float) -> float:
    return area / (8 * np.pi)


def sample_times(t_target: float, n: int) -> list[float]:
    return [t_target * 2.0 ** (-k) for k in range(n - 1, -1, -1)]


@dataclass
class FlowRun:
    epsilon: float
    field: SupportField | None
    sphere: SphereMesh
    radial: RadialField
    mesh0: IntrinsicMesh
    state: FlowState
    trace: FlowTrace
    panel: DistancePanel
    t_target: float

    @property
    def d0(self) -> np.ndarray:
        return self.trace.panel_table()[0]

    def snapshot_meshes(self):
        return [(t, self.mesh0.with_conformal(u)) for t, u in self.trace.snapshots]


def surface_source(source, lmax: int, epsilon: float, frame=None):
    """Smoothed support field of a body, or the analytic radial of a ball."""
    if isinstance(source, ConvexBody):
        return smooth_body(source, lmax, epsilon, frame=frame)
    return source


def _radial_callable(source) -> Callable:
    kind, r = source
    if kind != "ball":
        raise ConfigError(f"unknown analytic source {kind!r}")
    return lambda d: np.full(len(np.atleast_2d(d)), float(r))


def flow_run(
    source,
    level: int,
    lmax: int,
    epsilon: float,
    cfl: float,
    panel: DistancePanel,
    t_target: float | None = None,
    t_fraction: float | None = None,
    n_samples: int = 6,
    frame=None,
) -> FlowRun:
    """Smooth, mesh and flow ``source`` (a ConvexBody or ("ball", r)).

    Exactly one of ``t_target`` and ``t_fraction`` (of the extinction time
    of the initial mesh) sets the final time; panels are evaluated at t = 0
    and at ``n_samples`` geometrically spaced times ending at the target.
    """
    frame = np.eye(3) if frame is None else np.asarray(frame, dtype=float)
    sph = icosphere(level, frame=frame)
    if isinstance(source, ConvexBody):
        fld = smooth_body(source, lmax, epsilon, frame=frame)
        rf = sample_radial(fld, sph)
        center = fld.center
    else:
        fld = None
        rf = sample_radial(_radial_callable(source), sph)
        center = np.zeros(3)
    mesh0 = embed(rf, sph, center)
    state = init_flow(mesh0)
    if t_target is None:
        t_target = float(t_fraction) * state.extinction_time
    probe = panel_prober(sph, panel)
    times = sample_times(t_target, n_samples) if t_target > 0 else []
    state, trace = adaptive_run(state, t_target, cfl, times, probe)
    return FlowRun(epsilon, fld, sph, rf, mesh0, state, trace, panel, t_target)


def schedule_target(cfg: RunConfig, epsilon: float, area0: float) -> float:
    """Final time: diagonal schedule eps * T_ext, or a fixed fraction."""
    frac = cfg.t_fraction if cfg.t_fraction > 0 else epsilon
    return frac * extinction_time(area0)


def run_config(cfg: RunConfig, source, level: int | None = None, frame=None) -> list[FlowRun]:
    """One flow run per epsilon of the configuration."""
    level = cfg.level if level is None else level
    body = source if isinstance(source, ConvexBody) else None
    panel = make_panel(cfg, body)
    if frame is not None:
        panel = rotate_panel(panel, frame)
    runs = []
    for eps in cfg.epsilons:
        frac = cfg.t_fraction if cfg.t_fraction > 0 else eps
        runs.append(
            flow_run(source, level, cfg.lmax, eps, cfg.cfl, panel,
                     t_fraction=frac, n_samples=cfg.n_samples, frame=frame)
        )
    return runs


def config_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["epsilons"] = list(cfg.epsilons)
    return d

