"""Two-dimensional Ricci flow in conformal gauge on an intrinsic mesh.

With g(t) = exp(2u) g0 the flow reduces to du/dt = -K_{g(t)}; each explicit
step sets u <- u - dt K(u) and recomputes the geometry from edge lengths.
Total area then decreases at the exact rate 8 pi (discrete Gauss-Bonnet),
so the flow becomes extinct at A0 / (8 pi).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .discretization import IntrinsicMesh, read_mesh, write_mesh

logger = logging.getLogger(__name__)

MARGIN_MIN = 1e-6
MAX_HALVINGS = 20

TRACE_COLUMNS = (
    "time", "minK", "maxK", "area", "minU", "maxU", "minMargin",
    "gbResidual", "maxLengthRatio", "maxDu",
)


class StepRejected(RuntimeError):
    def __init__(self, margin: float):
        super().__init__(f"triangle inequality margin {margin:.3e} below {MARGIN_MIN}")
        self.margin = margin


class ExtinctionReached(RuntimeError):
    pass


class StallDetected(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowState:
    time: float
    mesh: IntrinsicMesh
    step_count: int = 0
    last_dt: float = 0.0
    backoff: float = 1.0
    initial_area: float = field(default=np.nan)

    @property
    def extinction_time(self) -> float:
        return self.initial_area / (8 * np.pi)


@dataclass
class FlowTrace:
    """Per-step diagnostics plus panel distances and conformal snapshots.

    ``panel`` holds one row per entry of ``rows`` (NaN when the panel was not
    sampled at that step); ``snapshots`` keeps (time, u) at sample times.
    """

    rows: list[list[float]] = field(default_factory=list)
    panel: list[np.ndarray] = field(default_factory=list)
    n_panel: int = 0
    snapshots: list[tuple[float, np.ndarray]] = field(default_factory=list)
    rejections: int = 0

    def table(self) -> np.ndarray:
        return np.array(self.rows, dtype=float).reshape(-1, len(TRACE_COLUMNS))

    def column(self, name: str) -> np.ndarray:
        return self.table()[:, TRACE_COLUMNS.index(name)]

    def panel_table(self) -> np.ndarray:
        return np.array(self.panel, dtype=float).reshape(len(self.rows), self.n_panel)

    def sampled(self):
        """(times, panel values) restricted to rows where the panel was evaluated."""
        p = self.panel_table()
        keep = np.all(np.isfinite(p), axis=1) if self.n_panel else np.zeros(len(p), bool)
        return self.column("time")[keep], p[keep]

    def to_csv(self, path, header_lines: Sequence[str] = ()) -> None:
        cols = list(TRACE_COLUMNS) + [f"d_{i}" for i in range(self.n_panel)]
        lines = list(header_lines) + [",".join(cols)]
        p = self.panel_table()
        for r, d in zip(self.rows, p):
            lines.append(",".join(f"{x:.17g}" for x in list(r) + list(d)))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> tuple[FlowTrace, list[str]]:
        header, rows, panel = [], [], []
        cols = None
        for line in Path(path).read_text().splitlines():
            if line.startswith("#"):
                header.append(line)
                continue
            if cols is None:
                cols = line.split(",")
                continue
            vals = [float(x) for x in line.split(",")]
            rows.append(vals[: len(TRACE_COLUMNS)])
            panel.append(np.array(vals[len(TRACE_COLUMNS):]))
        n_panel = len(cols) - len(TRACE_COLUMNS) if cols else 0
        return cls(rows=rows, panel=panel, n_panel=n_panel), header


def _row(state: FlowState, prev_u: np.ndarray | None) -> list[float]:
    m = state.mesh
    u = m.conformal
    ratio = m.current_lengths / m.base_lengths
    du = 0.0 if prev_u is None else float((u - prev_u).max())
    return [
        state.time, float(m.curvature.min()), float(m.curvature.max()), m.total_area,
        float(u.min()), float(u.max()), m.min_margin, m.gauss_bonnet_residual(),
        float(ratio.max()), du,
    ]


def init_flow(mesh: IntrinsicMesh) -> FlowState:
    if np.any(mesh.conformal != 0):
        raise ValueError("initial mesh must carry u = 0")
    return FlowState(time=0.0, mesh=mesh, initial_area=mesh.total_area)


def step(state: FlowState, dt: float) -> FlowState:
    """One explicit Euler step u <- u - dt K."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return state
    m = state.mesh
    u = m.conformal - dt * m.curvature
    new = m.with_conformal(u)
    if not np.isfinite(new.total_area) or new.total_area <= 0:
        raise ExtinctionReached(f"area vanished at t = {state.time + dt:.6g}")
    if not np.isfinite(new.min_margin) or new.min_margin < MARGIN_MIN:
        raise StepRejected(float(new.min_margin))
    return replace(
        state, time=state.time + dt, mesh=new, step_count=state.step_count + 1, last_dt=dt
    )


def stable_dt(mesh: IntrinsicMesh, cfl: float) -> float:
    """cfl times the smaller of 1/max|K| and the squared shortest edge.

    The edge term is the explicit-diffusion limit of the linearised flow.
    """
    kmax = float(np.abs(mesh.curvature).max())
    h2 = float(mesh.current_lengths.min()) ** 2
    return cfl * min(1.0 / kmax if kmax > 0 else np.inf, h2)


def adaptive_run(
    state: FlowState,
    t_target: float,
    cfl: float,
    sample_times: Sequence[float] = (),
    probe: Callable[[IntrinsicMesh], np.ndarray] | None = None,
    trace: FlowTrace | None = None,
    max_steps: int | None = None,
) -> tuple[FlowState, FlowTrace]:
    """Advance to ``t_target`` with curvature/edge-scaled explicit steps.

    A rejected step halves the step-size multiplier, which stays reduced for
    the rest of the run.  ``probe`` is evaluated on the mesh at each of the
    ``sample_times`` (and at t = 0 when the trace is fresh); steps are
    clipped so sample times are hit exactly.  ``max_steps`` stops early once
    the state's step count reaches it (for checkpointing).
    """
    if not 0 < cfl <= 1:
        raise ValueError("cfl must lie in (0, 1]")
    if np.isfinite(state.initial_area) and t_target >= state.extinction_time:
        raise ValueError("t_target beyond extinction time")
    samples = sorted(float(s) for s in sample_times if s > state.time + 1e-15 and s <= t_target)
    if trace is None:
        trace = FlowTrace()
        trace.n_panel = 0
        d0 = probe(state.mesh) if probe is not None else None
        if d0 is not None:
            trace.n_panel = len(d0)
        trace.rows.append(_row(state, None))
        trace.panel.append(np.asarray(d0, dtype=float) if d0 is not None else np.zeros(0))
        trace.snapshots.append((state.time, state.mesh.conformal.copy()))

    halvings = 0
    while state.time < t_target * (1 - 1e-14):
        if max_steps is not None and state.step_count >= max_steps:
            break
        dt = state.backoff * stable_dt(state.mesh, cfl)
        stop = samples[0] if samples else t_target
        hit = False
        if state.time + dt >= stop * (1 - 1e-12):
            dt = stop - state.time
            hit = True
        try:
            new = step(state, dt)
        except StepRejected as exc:
            halvings += 1
            trace.rejections += 1
            logger.info("step rejected at t=%.6g (dt=%.3e): %s", state.time, dt, exc)
            if halvings > MAX_HALVINGS:
                raise StallDetected(f"{MAX_HALVINGS} consecutive halvings at t={state.time}")
            state = replace(state, backoff=state.backoff * 0.5)
            continue
        halvings = 0
        prev_u = state.mesh.conformal
        if hit:
            new = replace(new, time=stop)
        state = new
        trace.rows.append(_row(state, prev_u))
        sampled = hit and samples and stop == samples[0]
        if sampled:
            samples.pop(0)
            trace.snapshots.append((state.time, state.mesh.conformal.copy()))
        if sampled and probe is not None:
            trace.panel.append(np.asarray(probe(state.mesh), dtype=float))
        else:
            trace.panel.append(np.full(trace.n_panel, np.nan))
    return state, trace


def area_law_check(trace: FlowTrace) -> float:
    """max |A(t) - (A0 - 8 pi t)| / A0 over the trace."""
    t = trace.column("time")
    a = trace.column("area")
    if len(t) < 2:
        return 0.0
    return float(np.abs(a - (a[0] - 8 * np.pi * (t - t[0]))).max() / a[0])


def curvature_bound_fit(trace: FlowTrace, t_min: float = 0.0) -> float:
    """max over rows with t > t_min of (max K) * t."""
    t = trace.column("time")
    k = trace.column("maxK")
    keep = t > t_min
    return float((k[keep] * t[keep]).max()) if keep.any() else 0.0


# -- checkpoints --------------------------------------------------------------

def write_checkpoint(path, state: FlowState, header_lines: Sequence[str] = ()) -> None:
    head = list(header_lines) + [
        f"t {state.time:.17g} steps {state.step_count} dt {state.last_dt:.17g} "
        f"backoff {state.backoff:.17g} area0 {state.initial_area:.17g}"
    ]
    write_mesh(path, state.mesh, head)


def read_checkpoint(path) -> tuple[FlowState, list[str]]:
    mesh, other = read_mesh(path)
    meta = next(line for line in other if line.startswith("t "))
    parts = meta.split()
    kv = dict(zip(parts[0::2], parts[1::2]))
    state = FlowState(
        time=float(kv["t"]), mesh=mesh, step_count=int(kv["steps"]),
        last_dt=float(kv["dt"]), backoff=float(kv["backoff"]),
        initial_area=float(kv["area0"]),
    )
    return state, [line for line in other if line is not meta]
