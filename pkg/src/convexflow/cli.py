"""Command line: ingest, smooth, flow, verify, distance.

Exit codes: 0 success / all checks pass, 1 a check failed, 2 input error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .convex_body import (
    ConvexBody,
    DegenerateError,
    convex_hull,
    nondegeneracy,
    read_hull,
    read_points,
    write_hull,
)
from .discretization import SphereMesh, _edge_topology, embed, icosphere, sample_radial
from .geodesics import (
    DistancePanel,
    fast_march,
    panel_eval,
    panel_prober,
    unfold_polyhedron,
)
from .pipeline import (
    ArtifactMismatch,
    ConfigError,
    RunConfig,
    hash_line,
    load_config,
    make_panel,
    require_same_hash,
    sample_times,
)
from .ricci_flow import (
    StallDetected,
    adaptive_run,
    init_flow,
    read_checkpoint,
    write_checkpoint,
)
from .smoothing import read_field, smooth_body, write_field

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

log = logging.getLogger("convexflow")


class InputError(ValueError):
    pass


# -- helpers ------------------------------------------------------------------

def _config(args) -> RunConfig:
    over = {
        "level": getattr(args, "level", None),
        "lmax": getattr(args, "lmax", None),
        "cfl": getattr(args, "cfl", None),
        "t_fraction": getattr(args, "t_fraction", None),
    }
    eps = getattr(args, "epsilon", None)
    if eps is not None:
        over["epsilons"] = (float(eps),) if eps > 0 else None
    if getattr(args, "config", None):
        return load_config(args.config, **over)
    return RunConfig().with_overrides(**over)


def _kind(path: str) -> str:
    if path.startswith("ball"):
        return "ball"
    with open(path) as fh:
        for line in fh:
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            tag = s.split()[0]
            if tag == "t":
                return "mesh"
            if tag == "lmax":
                return "field"
            if tag == "v":
                return "mesh" if any(x.startswith("u ") for x in fh) else "hull"
            return "points"
    raise InputError(f"empty input file {path}")


def load_source(path: str):
    """A ConvexBody, SupportField, checkpoint path or ("ball", r) from a path spec."""
    kind = _kind(path)
    if kind == "ball":
        _, _, r = path.partition(":")
        return ("ball", float(r) if r else 1.0)
    if kind == "field":
        return read_field(path)
    if kind == "hull":
        return read_hull(path)
    if kind == "points":
        return convex_hull(read_points(path))
    return Path(path)


def _sphere_from_mesh(mesh) -> SphereMesh:
    edges, tri_edges, edge_tris = _edge_topology(mesh.triangles)
    return SphereMesh(-1, mesh.directions, mesh.triangles, edges, tri_edges, edge_tris)


# -- subcommands ----------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = _config(args)
    body = convex_hull(read_points(args.points))
    r = nondegeneracy(body)
    write_hull(args.output, body, header=f"config {cfg.hash}")
    print(f"vertices {len(body.vertices)} facets {len(body.facets)} inradius {r:.12g}")
    return EXIT_OK


def cmd_smooth(args) -> int:
    cfg = _config(args)
    body = load_source(args.body)
    if not isinstance(body, ConvexBody):
        raise InputError("smooth expects a hull or points file")
    eps = args.epsilon if args.epsilon is not None else cfg.epsilons[0]
    field = smooth_body(body, cfg.lmax, eps, quadrature_level=args.quadrature_level)
    write_field(args.output, field, header=f"config {cfg.hash}")
    print(f"lmax {field.lmax} epsilon {eps:g} margin {field.margin:.6g} shift {field.shift:.6g}")
    return EXIT_OK


def cmd_flow(args) -> int:
    cfg = _config(args)
    out = Path(args.output or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    head = [hash_line(cfg)]
    if args.resume:
        state, other = read_checkpoint(args.resume)
        target = next(float(x.split()[2]) for x in other if x.startswith("# target "))
        sph = _sphere_from_mesh(state.mesh)
    else:
        source = load_source(args.source)
        if isinstance(source, Path):
            raise InputError("flow expects a field, hull, points file or ball spec")
        sph = icosphere(cfg.level)
        if isinstance(source, tuple):
            rf = sample_radial(lambda d: np.full(len(d), source[1]), sph)
            center = np.zeros(3)
        else:
            if isinstance(source, ConvexBody):
                source = smooth_body(source, cfg.lmax, cfg.epsilons[0])
            rf = sample_radial(source, sph)
            center = source.center
        state = init_flow(embed(rf, sph, center))
        frac = cfg.t_fraction or getattr(source, "epsilon", 0.0) or cfg.epsilons[0]
        target = args.t_target if args.t_target is not None else frac * state.extinction_time
    panel = make_panel(cfg)
    probe = panel_prober(sph, panel)
    times = sample_times(target, cfg.n_samples)
    try:
        state, trace = adaptive_run(state, target, cfg.cfl, times, probe, max_steps=args.steps)
    except StallDetected as exc:
        log.error("%s", exc)
        return EXIT_FAIL
    if trace.rejections:
        print(f"rejected steps: {trace.rejections} (backoff {state.backoff:g})")
    write_checkpoint(out / "checkpoint.txt", state, head + [f"# target {target:.17g}"])
    trace.to_csv(out / "trace.csv", head)
    panel.with_values(trace.panel_table()[-1] if trace.n_panel else []).to_csv(
        out / "panel.csv", sph, head)
    print(f"t {state.time:.6g} steps {state.step_count} of target {target:.6g}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verification import emit_report, run_suite, trace_file_checks

    cfg = _config(args)
    out = Path(args.output or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    if args.traces:
        h = require_same_hash(args.traces)
        if args.config and h != cfg.hash:
            raise ArtifactMismatch(f"traces carry config {h}, config file is {cfg.hash}")
        checks = []
        for p in args.traces:
            checks += trace_file_checks(p)
        report = emit_report(checks, {"traces": [Path(p).name for p in args.traces]}, {}, h)
    else:
        if not cfg.input:
            raise InputError("config has no input")
        source = load_source(cfg.input)
        if isinstance(source, Path) or not isinstance(source, (ConvexBody, tuple)):
            raise InputError("verify input must be a points/hull file or ball spec")
        report, runs = run_suite(cfg, source, jobs=args.jobs)
        for r in runs:
            r.trace.to_csv(out / f"trace_eps{r.epsilon:g}.csv", [hash_line(cfg)])
    text = report.to_json()
    (out / "report.json").write_text(text)
    for c in sorted(report.checks, key=lambda c: c.name):
        print(f"{'PASS' if c.verdict else 'FAIL'} {c.name}")
    return EXIT_OK if report.passed else EXIT_FAIL


def _parse_point(text: str):
    if ":" in text:
        return np.array([float(x) for x in text.split(":")])
    return int(text)


def cmd_distance(args) -> int:
    src = load_source(args.input)
    pairs = [(_parse_point(a), _parse_point(b)) for a, b in (p.split(",") for p in args.pair)]
    lines = ["src,dst,value,method"]
    if isinstance(src, ConvexBody):
        for a, b in pairs:
            pa = src.vertices[a] if isinstance(a, int) else a
            pb = src.vertices[b] if isinstance(b, int) else b
            v = 0.0 if np.array_equal(pa, pb) else unfold_polyhedron(src, pa, pb, args.max_faces)
            lines.append(f"{_fmt(a)},{_fmt(b)},{v:.17g},unfolding")
    elif isinstance(src, Path):
        state, _ = read_checkpoint(src)
        mesh = state.mesh
        sph = _sphere_from_mesh(mesh) if mesh.directions is not None else None
        for a, b in pairs:
            if isinstance(a, int) and isinstance(b, int):
                v = 0.0 if a == b else float(fast_march(mesh, a)[b])
            else:
                if sph is None:
                    raise InputError("direction pairs need a mesh with directions")
                da = a if not isinstance(a, int) else mesh.directions[a]
                db = b if not isinstance(b, int) else mesh.directions[b]
                v = float(panel_eval(mesh, sph, DistancePanel([(da, db)])).values[0])
            lines.append(f"{_fmt(a)},{_fmt(b)},{v:.17g},fast_marching")
    else:
        raise InputError("distance expects a hull/points file or a checkpoint")
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _fmt(p) -> str:
    return str(p) if isinstance(p, int) else ":".join(f"{x:.17g}" for x in p)


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="convexflow", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("-o", "--output")
        p.add_argument("--jobs", type=int, default=1, help="maximum worker processes")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("ingest", help="convex hull of a point file")
    common(p)
    p.add_argument("points")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("smooth", help="smoothed support field of a hull")
    common(p)
    p.add_argument("body")
    p.add_argument("--lmax", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--quadrature-level", type=int)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("flow", help="run the flow and write checkpoint and trace")
    common(p)
    p.add_argument("source", nargs="?", help="field, hull or points file, or ball[:r]")
    p.add_argument("--level", type=int)
    p.add_argument("--cfl", type=float)
    p.add_argument("--t-fraction", type=float)
    p.add_argument("--t-target", type=float)
    p.add_argument("--steps", type=int, help="stop after this many steps")
    p.add_argument("--resume", help="continue from a checkpoint")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("verify", help="run the check suite and write report.json")
    common(p)
    p.add_argument("--traces", nargs="*", help="check saved traces only")
    p.add_argument("--level", type=int)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("distance", help="distances on a hull (unfolding) or checkpoint")
    common(p)
    p.add_argument("input")
    p.add_argument("--pair", action="append", required=True,
                   help="i,j vertex indices or x:y:z,x:y:z points")
    p.add_argument("--max-faces", type=int, default=6)
    p.set_defaults(func=cmd_distance)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    os.environ.setdefault("NUMBA_NUM_THREADS", str(args.jobs))
    if args.command == "flow" and not (args.source or args.resume):
        print("error: flow needs a source or --resume", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except DegenerateError as exc:
        msg = str(exc)
        if "degenerate input" not in msg:
            msg = f"degenerate input: {msg}"
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, ConfigError, ArtifactMismatch, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
