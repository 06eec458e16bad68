"""Monte Carlo rollout evaluation, metrics, volumetric comparison, and
deterministic result export.

Outcome precedence is fixed: goal and failure margins are checked after
every step, and if both are crossed within the same step the rollout counts
as a collision (conservative accounting); timeout applies only when neither
fires before the clock runs out.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .dynamics import IntegrationError, integrate_rk4
from .problem import ReachAvoidProblem

OUTCOMES = ("docked", "collided", "timeout", "abnormal")


@dataclass
class RolloutConfig:
    dt: float = 0.1
    timeout: float = None       # default: problem.timeout
    ic_lo: np.ndarray = None    # default: problem IC region
    ic_hi: np.ndarray = None
    seed: int = 0
    record_steps: bool = True

    def __post_init__(self):
        if self.timeout is not None and self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass
class RolloutRecord:
    x0: np.ndarray
    outcome: str
    dock_time: float            # nan unless docked
    effort: float               # sum ||u|| dt
    steps: int
    wall_time: float
    controller_ms: float        # mean per-step controller time
    xs: np.ndarray = None       # (K+1, n) when recorded
    us: np.ndarray = None       # (K, m)
    infos: list = None          # per-step controller info dicts


@dataclass
class Metrics:
    n: int
    dock_rate: float            # percent
    collision_rate: float
    timeout_rate: float
    abnormal: int
    mean_dock_time: float       # successes only; nan when none
    mean_effort: float          # successes only; nan when none
    mean_ms_per_step: float
    mean_wall_time: float

    def as_dict(self):
        return {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                for k, v in self.__dict__.items()}


@dataclass
class VolumetricReport:
    n: int
    tpr: float                  # percent
    fpr: float
    tp: int
    fp: int
    tn: int
    fn: int


def sample_ics(problem: ReachAvoidProblem, n: int, seed: int = 0,
               region_lo=None, region_hi=None) -> np.ndarray:
    """Uniform ICs with l(x) > 0 and g(x) > 0, deterministic per seed.

    Aborts with diagnostics if the acceptance rate drops below 1%.
    """
    lo = np.asarray(problem.ic_lo if region_lo is None else region_lo, float)
    hi = np.asarray(problem.ic_hi if region_hi is None else region_hi, float)
    rng = np.random.default_rng(seed)
    out = []
    drawn = 0
    while len(out) < n:
        batch = max(4 * (n - len(out)), 64)
        X = rng.uniform(lo, hi, size=(batch, problem.dim))
        X = _renorm_quats(problem, X)
        keep = (np.asarray(problem.avoid(X), float) > 0) & \
               (np.asarray(problem.reach(X), float) > 0)
        drawn += batch
        out.extend(X[keep])
        if drawn >= 100 * max(n, 100) and len(out) < 0.01 * drawn:
            raise RuntimeError(
                f"IC acceptance rate {len(out)}/{drawn} below 1%; "
                f"region lo={lo} hi={hi} likely mis-specified")
    return np.array(out[:n])


def _renorm_quats(problem, X):
    qs = problem.model.quat_slice
    if qs is None:
        return X
    q = X[:, qs]
    nrm = np.linalg.norm(q, axis=1, keepdims=True)
    bad = nrm[:, 0] < 1e-6
    q[bad] = np.array([1.0, 0.0, 0.0, 0.0])
    nrm[bad] = 1.0
    X[:, qs] = q / nrm
    return X


def run_rollout(problem: ReachAvoidProblem, controller, x0,
                config: RolloutConfig = None) -> RolloutRecord:
    config = config or RolloutConfig()
    dt = config.dt
    timeout = problem.timeout if config.timeout is None else config.timeout
    max_steps = int(round(timeout / dt))
    x = np.array(x0, float)
    xs, us, infos = [x.copy()], [], []
    effort = 0.0
    ctrl_s = 0.0
    outcome, dock_time, k = "timeout", float("nan"), 0
    wall0 = time.perf_counter()
    if hasattr(controller, "reset"):
        controller.reset()
    for k in range(1, max_steps + 1):
        tc0 = time.perf_counter()
        u = np.asarray(controller(x, (k - 1) * dt), float)
        ctrl_s += time.perf_counter() - tc0
        try:
            x = integrate_rk4(problem.model, x, u, dt)
        except IntegrationError:
            outcome = "abnormal"
            break
        effort += float(np.linalg.norm(u)) * dt
        if config.record_steps:
            xs.append(x.copy())
            us.append(u)
            infos.append(dict(getattr(controller, "last_info", {})))
        if problem.avoid(x) <= 0:       # collision wins ties with docking
            outcome = "collided"
            break
        if problem.reach(x) <= 0:
            outcome = "docked"
            dock_time = k * dt
            break
    wall = time.perf_counter() - wall0
    return RolloutRecord(
        x0=np.asarray(x0, float), outcome=outcome, dock_time=dock_time,
        effort=effort, steps=k, wall_time=wall,
        controller_ms=1e3 * ctrl_s / max(k, 1),
        xs=np.array(xs) if config.record_steps else None,
        us=np.array(us) if config.record_steps and us else None,
        infos=infos if config.record_steps else None)


def aggregate(records) -> Metrics:
    n = len(records)
    if n == 0:
        return Metrics(0, float("nan"), float("nan"), float("nan"), 0,
                       float("nan"), float("nan"), float("nan"), float("nan"))
    outs = [r.outcome for r in records]
    docked = [r for r in records if r.outcome == "docked"]
    pct = 100.0 / n
    return Metrics(
        n=n,
        dock_rate=pct * outs.count("docked"),
        collision_rate=pct * outs.count("collided"),
        timeout_rate=pct * (outs.count("timeout") + outs.count("abnormal")),
        abnormal=outs.count("abnormal"),
        mean_dock_time=float(np.mean([r.dock_time for r in docked]))
        if docked else float("nan"),
        mean_effort=float(np.mean([r.effort for r in docked]))
        if docked else float("nan"),
        mean_ms_per_step=float(np.mean([r.controller_ms for r in records])),
        mean_wall_time=float(np.mean([r.wall_time for r in records])))


def monte_carlo(problem: ReachAvoidProblem, controller_factory, n: int,
                config: RolloutConfig = None, ics=None):
    """N rollouts over shared ICs; controller_factory() yields a fresh
    controller per rollout (controllers are stateful phase machines)."""
    config = config or RolloutConfig()
    if ics is None:
        ics = sample_ics(problem, n, seed=config.seed,
                         region_lo=config.ic_lo, region_hi=config.ic_hi)
    records = []
    for x0 in ics:
        ctrl = controller_factory() if callable(controller_factory) else controller_factory
        records.append(run_rollout(problem, ctrl, x0, config))
    return aggregate(records), records


def volumetric_compare(candidate_vf, truth_vf, region_lo, region_hi, n: int,
                       seed: int = 0, t: float = 0.0) -> VolumetricReport:
    """Zero-sublevel-set classifier comparison at time t (positive = safe =
    inside the tube, V <= 0)."""
    rng = np.random.default_rng(seed)
    lo = np.asarray(region_lo, float)
    hi = np.asarray(region_hi, float)
    X = rng.uniform(lo, hi, size=(n, lo.shape[0]))
    vt = np.array([truth_vf.value(x, t) for x in X]) if not hasattr(
        truth_vf, "values") else np.asarray(truth_vf.value(X, t))
    vc = np.asarray(candidate_vf.value(X, t))
    truth_pos = vt <= 0
    cand_pos = vc <= 0
    tp = int(np.sum(truth_pos & cand_pos))
    fn = int(np.sum(truth_pos & ~cand_pos))
    fp = int(np.sum(~truth_pos & cand_pos))
    tn = int(np.sum(~truth_pos & ~cand_pos))
    tpr = 100.0 * tp / max(tp + fn, 1)
    fpr = 100.0 * fp / max(fp + tn, 1)
    return VolumetricReport(n=n, tpr=tpr, fpr=fpr, tp=tp, fp=fp, tn=tn, fn=fn)


# ---------------------------------------------------------------------------
# Export

def export_results(out_dir, metrics: Metrics = None, records=None,
                   report: VolumetricReport = None, config: dict = None,
                   fingerprint: str = "", include_timing: bool = True):
    """Deterministic CSV/JSON outputs. Timing quantities (wall time, ms per
    step) are written to a separate timing.json so the main outputs are
    byte-identical across reruns of the same config + seed."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    summary = {"fingerprint": fingerprint, "config": config or {}}
    if metrics is not None:
        m = metrics.as_dict()
        timing = {k: m.pop(k) for k in ("mean_ms_per_step", "mean_wall_time")}
        summary["metrics"] = m
        if include_timing:
            p = os.path.join(out_dir, "timing.json")
            with open(p, "w") as f:
                json.dump(timing, f, indent=1, sort_keys=True)
            paths["timing"] = p
    if report is not None:
        summary["volumetric"] = dict(report.__dict__)
    p = os.path.join(out_dir, "summary.json")
    with open(p, "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
    paths["summary"] = p

    if records is not None:
        p = os.path.join(out_dir, "rollouts.csv")
        with open(p, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "outcome", "dock_time", "effort", "steps"]
                       + [f"x0_{i}" for i in range(len(records[0].x0))]
                       if records else
                       ["index", "outcome", "dock_time", "effort", "steps"])
            for i, r in enumerate(records):
                w.writerow([i, r.outcome, f"{r.dock_time:.6f}",
                            f"{r.effort:.9f}", r.steps]
                           + [f"{v:.9f}" for v in r.x0])
        paths["rollouts"] = p
        if records and records[0].xs is not None:
            p = os.path.join(out_dir, "trajectories.csv")
            with open(p, "w", newline="") as f:
                w = csv.writer(f)
                nx = records[0].xs.shape[1]
                nu = records[0].us.shape[1] if records[0].us is not None else 0
                w.writerow(["rollout", "step"]
                           + [f"x_{i}" for i in range(nx)]
                           + [f"u_{i}" for i in range(nu)])
                for i, r in enumerate(records):
                    for k in range(r.xs.shape[0]):
                        u = (list(r.us[k]) if r.us is not None
                             and k < r.us.shape[0] else [0.0] * nu)
                        w.writerow([i, k] + [f"{v:.9f}" for v in r.xs[k]]
                                   + [f"{v:.9f}" for v in u])
            paths["trajectories"] = p
    return paths
