import csv
import io
import json
import math

import numpy as np
import pytest

from esdroop.feeder import load_feeder
from esdroop.powerflow import build_injections, set_pv_output, solve
from esdroop.scenario import (
    ScenarioConfig, brute_force_dispatch, csv_columns, objective_norm, oscillation_index, penalty_sum,
    perturbation_phase_analysis, profile_matrix, records_to_csv, run_qsts, steadiest_window, summarize,
    violations_between, write_outputs,
)


def short(**kw):
    return ScenarioConfig(hours=1.0, **kw)


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(controller="pid")
    with pytest.raises(ValueError):
        ScenarioConfig(hours=1.0, dt=7.0)
    with pytest.raises(ValueError):
        ScenarioConfig(params={"gainz": 1})
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"feeder": "4bus.json", "colour": "red"})
    assert ScenarioConfig.from_dict({"hours": 2.0}).n_steps == 240


def test_profile_matrix_shapes():
    m = load_feeder("13bus.json")
    lm, kw = profile_matrix(m, ScenarioConfig(feeder="13bus.json"))
    assert lm.shape == (2880, len(m.loads))
    assert kw.shape == (2880, len(m.pvs))
    assert np.all(kw <= np.array([pv.rated_kva for pv in m.pvs]) + 1e-9)


def test_records_and_balance():
    recs, s = run_qsts(short())
    assert len(recs) == 120 == s.steps
    assert all(r.converged for r in recs)
    assert max(r.residual for r in recs) < 1e-8
    assert s.kwh == pytest.approx(sum(r.loss_kw for r in recs) * 30 / 3600)
    assert s.cost == pytest.approx(s.kwh * 0.08)


def test_run_is_deterministic():
    a, _ = run_qsts(short(feeder="13bus.json", solar_profile="solar_highvar"))
    b, _ = run_qsts(short(feeder="13bus.json", solar_profile="solar_highvar"))
    assert np.array_equal(np.stack([r.q_pv for r in a]), np.stack([r.q_pv for r in b]))


def test_none_controller_holds_zero_q():
    recs, _ = run_qsts(short(controller="none"))
    assert all(np.all(r.q_pv == 0) for r in recs)


def test_fixed_droop_keeps_reference():
    recs, _ = run_qsts(short(controller="fixed-droop"))
    assert all(np.all(r.v_ref == 1.0) and np.all(r.q0 == 0) for r in recs)


def test_oracle_dominates_grid_points():
    m = load_feeder("4bus.json")
    kw = np.array([600.0, 900.0])
    inj = build_injections(m, 0.5)
    res = brute_force_dispatch(m, inj, kw, points=11)
    rng = np.random.default_rng(0)
    qmax = np.sqrt(np.array([pv.rated_kva for pv in m.pvs]) ** 2 - kw ** 2)
    trial = rng.uniform(-1, 1, (50, 2)) * qmax
    sol = solve(m, set_pv_output(m, inj, kw, trial))
    obj = np.real(sol.total_loss) + penalty_sum(m, sol.vmag)
    assert res.objective <= obj.min() + 1e-3 * abs(obj.min())
    assert res.mode == "exhaustive" and res.evaluations == 121


def test_oracle_coordinate_agrees_with_exhaustive():
    m = load_feeder("4bus.json")
    inj = build_injections(m, 0.5)
    kw = [600.0, 900.0]
    ex = brute_force_dispatch(m, inj, kw, points=21, mode="exhaustive")
    cd = brute_force_dispatch(m, inj, kw, points=21, mode="coordinate")
    assert cd.objective == pytest.approx(ex.objective, rel=1e-6)
    with pytest.raises(ValueError):
        brute_force_dispatch(m, inj, kw, points=21, budget=10, mode="exhaustive")


def test_objective_norm_modes():
    m = load_feeder("4bus.json")
    i2 = objective_norm(m, 1)
    assert i2 == pytest.approx(3 * (3600.0 / (3 * 2000.0)) ** 2)
    sl = objective_norm(m, 1, "sloss")
    r = np.real(np.diag(m.branch_z_pu("3-4"))).mean()
    assert 0.3 * r * i2 < sl < 1.5 * r * i2


def test_oscillation_index():
    assert oscillation_index(np.zeros(100)) == 0.0
    alt = np.tile([1.0, -1.0], 50)
    assert oscillation_index(alt) == pytest.approx(2.0)
    ramp = np.arange(100.0)
    assert oscillation_index(ramp) == pytest.approx(0.0)


def test_phase_analysis_recovers_known_shift():
    dt, omega = 30.0, 2 * math.pi / 300.0
    t = np.arange(200) * dt
    q = np.stack([3 * np.sin(omega * t) + 0.01 * t, 2 * np.sin(omega * t - math.radians(40)) + 5], axis=1)
    pa = perturbation_phase_analysis(q, 0, 1, omega, dt)
    assert pa.delta_deg == pytest.approx(40.0, abs=0.5)
    assert pa.amp_a == pytest.approx(3.0, rel=0.02)
    assert pa.ratio == pytest.approx(1.5, rel=0.02)
    with pytest.raises(ValueError):
        perturbation_phase_analysis(q[:20], 0, 1, omega, dt)


def test_csv_column_order():
    m = load_feeder("13bus.json")
    cols = csv_columns(m, convexity=True)
    assert cols[:5] == ["step", "time_s", "v_650_a", "v_650_b", "v_650_c"]
    assert "v_646_b" in cols and "v_646_a" not in cols
    i = cols.index("pv671_p_kw")
    assert cols[i:i + 6] == [f"pv671_{k}" for k in ("p_kw", "v_ref", "q0", "q_kvar", "q_max", "y")]
    j = cols.index("tap_650-632_a")
    assert cols[j:j + 7] == ["tap_650-632_a", "tap_650-632_b", "tap_650-632_c",
                             "loss_kw", "penalty", "residual", "converged"]
    assert cols[-4:] == ["pv646_D", "pv646_K", "pv646_d2i2", "pv646_convex"]


def test_outputs_written_and_protected(tmp_path):
    m = load_feeder("4bus.json")
    cfg = ScenarioConfig(hours=0.5, convexity_report=True)
    recs, s = run_qsts(cfg, m)
    c, j = write_outputs(m, recs, s, tmp_path, "run", convexity=True)
    rows = list(csv.reader(io.StringIO(c.read_text())))
    assert rows[0] == csv_columns(m, True)
    assert len(rows) == 61
    assert json.loads(j.read_text())["steps"] == 60
    with pytest.raises(FileExistsError):
        write_outputs(m, recs, s, tmp_path, "run")
    write_outputs(m, recs, s, tmp_path, "run", force=True)
    assert records_to_csv(m, recs).count("\n") == 61


def test_violation_helpers():
    m = load_feeder("4bus.json")
    recs, _ = run_qsts(short(controller="none"), m)
    s = summarize(recs, 30.0, model=m, oracle_kwh=1.0)
    assert s.violations == violations_between(m, recs, 0, 1e9)
    assert s.violations > 0   # node 4 starts below 0.95 without control
    assert s.loss_gap_pct == pytest.approx(100 * (s.kwh - 1.0))


def test_steadiest_window_picks_flat_segment():
    class R:
        def __init__(self, v):
            self.v_ref = np.array([v])
    vals = np.concatenate([np.linspace(1.0, 1.02, 40), np.full(40, 1.02), np.linspace(1.02, 0.99, 40)])
    recs = [R(v) for v in vals]
    assert steadiest_window(recs, 0, 120, 40) == 40
    with pytest.raises(ValueError):
        steadiest_window(recs, 0, 30, 40)


def test_regulators_move_when_enabled():
    recs, _ = run_qsts(ScenarioConfig(feeder="13bus.json", hours=2.0, controller="none", regulators=True,
                                      substation_pu=0.97))
    taps = np.stack([r.taps for r in recs])
    assert np.any(taps != 0)
    # each move needs a run of out-of-band steps, so no two moves are adjacent
    moves = np.flatnonzero(np.any(np.diff(taps, axis=0) != 0, axis=(1, 2)))
    assert np.all(np.diff(moves) >= 4)
