import json

import numpy as np
import pytest

from bratkit import harness as H
from bratkit.dynamics import integrate_rk4
from bratkit.problem import make_toy_problem


@pytest.fixture(scope="module")
def toy():
    return make_toy_problem("double_integrator_2d")


def _const(u):
    u = np.atleast_1d(np.asarray(u, float))
    return lambda x, t=0.0: u


def test_sample_ics_filters_and_determinism(toy):
    X = H.sample_ics(toy, 500, seed=4)
    assert X.shape == (500, 2)
    assert np.all(np.asarray([toy.avoid(x) for x in X]) > 0)
    assert np.all(np.asarray([toy.reach(x) for x in X]) > 0)
    assert np.all(X >= toy.ic_lo - 1e-12) and np.all(X <= toy.ic_hi + 1e-12)
    X2 = H.sample_ics(toy, 500, seed=4)
    assert np.array_equal(X, X2)
    assert not np.array_equal(X, H.sample_ics(toy, 500, seed=5))


def test_sample_ics_custom_region_and_abort(toy):
    X = H.sample_ics(toy, 20, seed=0, region_lo=[-0.9, -0.1],
                     region_hi=[-0.8, 0.1])
    assert np.all(X[:, 0] <= -0.8)
    # a region entirely inside the obstacle can never produce valid ICs
    with pytest.raises(RuntimeError):
        H.sample_ics(toy, 10, seed=0, region_lo=[0.48, -0.01],
                     region_hi=[0.52, 0.01])


def test_rollout_immediate_timeout_and_dock(toy):
    cfg = H.RolloutConfig(dt=0.1, timeout=0.5)
    # stationary far from everything: timeout after 5 steps
    r = H.run_rollout(toy, _const(0.0), np.array([-0.9, 0.0]), cfg)
    assert r.outcome == "timeout" and r.steps == 5
    assert np.isnan(r.dock_time)
    # starting on the goal edge drifting in: docks
    r2 = H.run_rollout(toy, _const(0.0), np.array([-0.12, 0.05]),
                       H.RolloutConfig(dt=0.1, timeout=5.0))
    assert r2.outcome == "docked"
    assert r2.dock_time == pytest.approx(r2.steps * 0.1)


def test_rollout_collision_wins_tie():
    # a problem whose goal and failure sets overlap: entering the overlap
    # must be scored as a collision, not a dock
    toy = make_toy_problem("double_integrator_2d")

    class Overlap:
        model = toy.model
        timeout = toy.timeout
        dim = toy.dim

        def avoid(self, x):
            return 0.25 - np.asarray(x, float)[..., 0]  # fail when x0 >= 0.25

        def reach(self, x):
            return 0.25 - np.asarray(x, float)[..., 0]  # goal when x0 >= 0.25

    r = H.run_rollout(Overlap(), _const(1.0), np.array([0.2, 0.3]),
                      H.RolloutConfig(dt=0.2, timeout=3.0))
    assert r.outcome == "collided"


def test_rollout_abnormal_on_integration_error(toy):
    class Exploder:
        def __call__(self, x, t=0.0):
            return np.array([np.nan])

    r = H.run_rollout(toy, Exploder(), np.array([-0.5, 0.0]),
                      H.RolloutConfig(dt=0.1, timeout=1.0))
    assert r.outcome == "abnormal"


def test_rollout_resets_stateful_controller(toy):
    class Sticky:
        def __init__(self):
            self.resets = 0

        def reset(self):
            self.resets += 1

        def __call__(self, x, t=0.0):
            return np.zeros(1)

    c = Sticky()
    H.run_rollout(toy, c, np.array([-0.9, 0.0]),
                  H.RolloutConfig(dt=0.1, timeout=0.3))
    assert c.resets == 1


def test_effort_matches_trajectory_recount(toy):
    cfg = H.RolloutConfig(dt=0.1, timeout=2.0, record_steps=True)
    ctrl = lambda x, t=0.0: np.array([0.5 * np.sin(3 * t) ])
    r = H.run_rollout(toy, ctrl, np.array([-0.7, 0.1]), cfg)
    recount = sum(float(np.linalg.norm(u)) * 0.1 for u in r.us)
    assert r.effort == pytest.approx(recount, abs=1e-12)
    # recorded states must chain exactly under the recorded controls
    x = r.xs[0]
    for u, x_next in zip(r.us, r.xs[1:]):
        x = integrate_rk4(toy.model, x, u, 0.1)
        assert np.allclose(x, x_next, atol=1e-12)


def test_aggregate_rates_and_empty(toy):
    mk = lambda o, dt=np.nan, e=0.0: H.RolloutRecord(
        x0=np.zeros(2), outcome=o, dock_time=dt, effort=e, steps=3,
        wall_time=0.01, controller_ms=0.5)
    m = H.aggregate([mk("docked", 1.0, 2.0), mk("docked", 3.0, 4.0),
                     mk("collided"), mk("timeout"), mk("abnormal")])
    assert m.n == 5
    assert m.dock_rate + m.collision_rate + m.timeout_rate == pytest.approx(100.0)
    assert m.abnormal == 1
    assert m.mean_dock_time == pytest.approx(2.0)
    assert m.mean_effort == pytest.approx(3.0)
    m0 = H.aggregate([])
    assert m0.n == 0 and np.isnan(m0.dock_rate)
    d = m0.as_dict()
    assert d["dock_rate"] is None
    json.dumps(d)


def test_monte_carlo_shared_ics_fairness(toy):
    ics = H.sample_ics(toy, 10, seed=1)
    cfg = H.RolloutConfig(dt=0.1, timeout=1.0)
    made = []

    def factory():
        made.append(1)
        return _const(0.0)

    m, recs = H.monte_carlo(toy, factory, 10, cfg, ics=ics)
    assert len(made) == 10 and m.n == 10
    assert np.array_equal(np.array([r.x0 for r in recs]), ics)


def test_volumetric_trivial_cases(toy):
    class Neg:
        def value(self, X, t):
            X = np.asarray(X)
            return -1.0 if X.ndim == 1 else -np.ones(X.shape[0])

    class Pos:
        def value(self, X, t):
            X = np.asarray(X)
            return 1.0 if X.ndim == 1 else np.ones(X.shape[0])

    rep = H.volumetric_compare(Neg(), Neg(), toy.bounds_lo, toy.bounds_hi, 200)
    assert rep.tpr == 100.0 and rep.fpr == 0.0 and rep.tp == 200
    rep2 = H.volumetric_compare(Pos(), Neg(), toy.bounds_lo, toy.bounds_hi, 200)
    assert rep2.tpr == 0.0 and rep2.fn == 200
    rep3 = H.volumetric_compare(Neg(), Pos(), toy.bounds_lo, toy.bounds_hi, 200)
    assert rep3.fpr == 100.0 and rep3.fp == 200


def test_export_results_layout_and_timing_split(tmp_path, toy):
    ics = H.sample_ics(toy, 5, seed=2)
    cfg = H.RolloutConfig(dt=0.1, timeout=1.0)
    m, recs = H.monte_carlo(toy, lambda: _const(0.0), 5, cfg, ics=ics)
    out = tmp_path / "res"
    H.export_results(out, metrics=m, records=recs,
                     config={"dt": 0.1}, fingerprint="abc123")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["fingerprint"] == "abc123"
    assert "mean_ms_per_step" not in summary["metrics"]
    assert "mean_wall_time" not in summary["metrics"]
    timing = json.loads((out / "timing.json").read_text())
    assert set(timing) == {"mean_ms_per_step", "mean_wall_time"}
    lines = (out / "rollouts.csv").read_text().strip().splitlines()
    assert len(lines) == 6  # header + 5 rows
    assert lines[0].startswith("index,outcome,dock_time,effort,steps")
    # main outputs byte-identical on rerun despite new wall-clock timings
    m2, recs2 = H.monte_carlo(toy, lambda: _const(0.0), 5, cfg, ics=ics)
    out2 = tmp_path / "res2"
    H.export_results(out2, metrics=m2, records=recs2,
                     config={"dt": 0.1}, fingerprint="abc123")
    assert (out / "summary.json").read_bytes() == (out2 / "summary.json").read_bytes()
    assert (out / "rollouts.csv").read_bytes() == (out2 / "rollouts.csv").read_bytes()
