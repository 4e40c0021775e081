import logging

import numpy as np
import pytest

from convexflow.discretization import ball_radial, ellipsoid_radial, embed, icosphere, sample_radial
from convexflow.ricci_flow import (
    TRACE_COLUMNS,
    FlowTrace,
    StepRejected,
    adaptive_run,
    area_law_check,
    curvature_bound_fit,
    init_flow,
    read_checkpoint,
    stable_dt,
    step,
    write_checkpoint,
)


def _mesh(radial, level):
    s = icosphere(level)
    return embed(sample_radial(radial, s), s)


@pytest.fixture(scope="module")
def ellipsoid4():
    return _mesh(ellipsoid_radial(1.0, 1.2, 1.5), 4)


def test_round_sphere_shrinks_in_closed_form():
    m = _mesh(ball_radial(1.0), 4)
    state, trace = adaptive_run(init_flow(m), 0.2, 0.1)
    k = 1 / (1 - 2 * 0.2)
    assert state.time == 0.2
    np.testing.assert_allclose(state.mesh.curvature, k, rtol=5e-3)
    assert state.mesh.total_area == pytest.approx(m.total_area * 0.6, rel=1e-3)


def test_step_is_explicit_euler(ellipsoid4):
    s = init_flow(ellipsoid4)
    new = step(s, 1e-3)
    np.testing.assert_array_equal(new.mesh.conformal, -1e-3 * ellipsoid4.curvature)
    assert new.step_count == 1 and new.time == 1e-3
    assert step(s, 0.0) is s
    with pytest.raises(ValueError):
        step(s, -1.0)


def test_init_requires_zero_potential(ellipsoid4):
    with pytest.raises(ValueError):
        init_flow(ellipsoid4.with_conformal(np.full(ellipsoid4.n_vertices, -0.1)))


def test_large_step_is_rejected():
    m = _mesh(ellipsoid_radial(1.0, 1.0, 3.0), 4)
    with pytest.raises(StepRejected):
        step(init_flow(m), 1.0)


def test_stable_dt_rule(ellipsoid4):
    k = np.abs(ellipsoid4.curvature).max()
    h = ellipsoid4.current_lengths.min()
    assert stable_dt(ellipsoid4, 0.1) == pytest.approx(0.1 * min(1 / k, h * h))


def test_trace_invariants_and_area_law(ellipsoid4):
    s = init_flow(ellipsoid4)
    t_end = 0.3 * s.extinction_time
    state, trace = adaptive_run(s, t_end, 0.1, [t_end / 2, t_end])
    tab = trace.table()
    assert tab.shape[1] == len(TRACE_COLUMNS)
    assert np.abs(trace.column("gbResidual")).max() < 1e-9
    assert trace.column("maxLengthRatio").max() <= 1 + 1e-12
    assert trace.column("maxDu").max() <= 0
    assert trace.column("minK").min() > 0
    assert area_law_check(trace) < 1e-3
    assert [t for t, _ in trace.snapshots] == [0.0, t_end / 2, t_end]
    assert curvature_bound_fit(trace) > 0


def test_area_residual_is_first_order(ellipsoid4):
    s = init_flow(ellipsoid4)
    t_end = 0.3 * s.extinction_time
    r = [area_law_check(adaptive_run(s, t_end, cfl)[1]) for cfl in (0.1, 0.05)]
    assert r[1] / r[0] == pytest.approx(0.5, abs=0.1)


def test_extinction_guard(ellipsoid4):
    s = init_flow(ellipsoid4)
    with pytest.raises(ValueError):
        adaptive_run(s, s.extinction_time, 0.1)
    with pytest.raises(ValueError):
        adaptive_run(s, 0.01, 1.5)


def test_rejections_back_off_and_are_logged(caplog):
    m = _mesh(ellipsoid_radial(1.0, 1.0, 3.0), 4)
    s = init_flow(m)
    with caplog.at_level(logging.INFO, logger="convexflow.ricci_flow"):
        state, trace = adaptive_run(s, 0.5 * s.extinction_time, 1.0)
    assert trace.rejections > 0
    assert state.backoff == 0.5**trace.rejections
    assert any("rejected" in r.message for r in caplog.records)
    assert state.mesh.min_margin >= 1e-6


def test_probe_rows_and_csv_roundtrip(tmp_path, ellipsoid4):
    s = init_flow(ellipsoid4)
    probe = lambda m: np.array([m.total_area, m.curvature.max()])
    state, trace = adaptive_run(s, 0.02, 0.1, [0.01, 0.02], probe)
    t, p = trace.sampled()
    np.testing.assert_array_equal(t, [0.0, 0.01, 0.02])
    assert p[-1][0] == state.mesh.total_area
    trace.to_csv(tmp_path / "trace.csv", ["# config abc"])
    back, header = FlowTrace.from_csv(tmp_path / "trace.csv")
    assert header == ["# config abc"]
    np.testing.assert_array_equal(back.table(), trace.table())
    np.testing.assert_array_equal(back.panel_table(), trace.panel_table())


def test_checkpoint_resume_is_bit_identical(tmp_path, ellipsoid4):
    s = init_flow(ellipsoid4)
    full, _ = adaptive_run(s, 0.02, 0.1)
    half, _ = adaptive_run(s, 0.02, 0.1, max_steps=full.step_count // 2)
    assert half.time < 0.02
    write_checkpoint(tmp_path / "ck.txt", half, ["# config abc"])
    back, other = read_checkpoint(tmp_path / "ck.txt")
    assert other == ["# config abc"]
    assert back.time == half.time and back.backoff == half.backoff
    resumed, _ = adaptive_run(back, 0.02, 0.1)
    assert resumed.step_count == full.step_count
    np.testing.assert_array_equal(resumed.mesh.conformal, full.mesh.conformal)
