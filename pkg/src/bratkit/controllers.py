"""Online control synthesis from a value function.

Bang-bang control from value gradients, the two-phase docking controller
(converge to the tube at t = 0, then track the tightest feasible time
slice), and the least-restrictive safety filter driven by an avoid-only
backward reachable tube.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, solve_vi
from .problem import ReachAvoidProblem

PHASE_CONVERGENCE = "convergence"
PHASE_PRECISION = "precision"


def bang_bang(model, x, grad) -> np.ndarray:
    """Hamiltonian-minimizing control u_i = -ubar_i sign((B^T grad)_i).

    sign(0) := 0 — any control is optimal when the coefficient vanishes,
    and zero minimizes effort.
    """
    btp = np.asarray(model.control_cotangent(np.asarray(x, float),
                                             np.asarray(grad, float)), float)
    return -model.control_bounds * np.sign(btp)


def ascent_bang_bang(model, x, grad) -> np.ndarray:
    """Hamiltonian-maximizing counterpart (drives the value upward)."""
    btp = np.asarray(model.control_cotangent(np.asarray(x, float),
                                             np.asarray(grad, float)), float)
    return model.control_bounds * np.sign(btp)


def min_time_search(vf, x, resolution: float = None):
    """Largest t in [0, T] with V(x, t) <= 0, or None if V(x, 0) > 0.

    Scans at the given resolution (default T/100), then bisects between the
    last non-positive and the first positive sample to within resolution/16.
    """
    T = vf.horizon
    res = T / 100.0 if resolution is None else resolution
    ts = np.arange(0.0, T + res / 2, res)
    ts[-1] = min(ts[-1], T)
    vals = np.array([vf.value(x, float(t)) for t in ts])
    if vals[0] > 0:
        return None
    nonpos = np.nonzero(vals <= 0)[0]
    i = int(nonpos[-1])
    if i == len(ts) - 1:
        return float(ts[-1])
    lo, hi = float(ts[i]), float(ts[i + 1])
    while hi - lo > res / 16.0:
        mid = 0.5 * (lo + hi)
        if vf.value(x, mid) <= 0:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class BratControllerConfig:
    flat_grad_threshold: float = 1e-3  # on the normalized-state gradient
    kp: float = 0.4
    kd: float = 1.2
    k_theta: float = 0.3
    k_omega: float = 0.8
    tstar_resolution: float = None  # default T/100


class BratController:
    """Two-phase value-gradient controller.

    Phase 1 (convergence): while V(x, 0) > 0, bang-bang on the t = 0
    gradient to steer toward the tube; where the gradient is flat, PD
    feedback toward the goal is blended in. Phase 2 (precision): once
    inside, permanently switch to bang-bang at the tightest feasible time
    slice t* from min_time_search.
    """

    def __init__(self, problem: ReachAvoidProblem, vf,
                 config: BratControllerConfig = None):
        self.problem = problem
        self.vf = vf
        self.config = config or BratControllerConfig()
        self.phase = PHASE_CONVERGENCE
        self.last_info = {}

    def reset(self):
        self.phase = PHASE_CONVERGENCE
        self.last_info = {}

    def _pd_control(self, x):
        model = self.problem.model
        if hasattr(model, "pd_control"):
            return model.pd_control(x, self.problem.goal_state,
                                    self.problem.pd_gains or
                                    (self.config.kp, self.config.kd))
        # generic double-integrator-style fallback: first half positions,
        # second half rates
        n = self.problem.dim // 2
        err = np.asarray(x, float) - self.problem.goal_state
        u = -self.config.kp * err[:n] - self.config.kd * err[n:]
        m = model.control_dim
        return np.clip(u[:m], -model.control_bounds, model.control_bounds)

    def __call__(self, x, t_elapsed: float = 0.0):
        x = np.asarray(x, float)
        model = self.problem.model
        v0 = float(self.vf.value(x, 0.0))
        if self.phase == PHASE_CONVERGENCE and v0 <= 0:
            self.phase = PHASE_PRECISION

        if self.phase == PHASE_CONVERGENCE:
            grad = np.asarray(self.vf.gradient(x, 0.0), float)
            u = bang_bang(model, x, grad)
            span = np.asarray(self.problem.bounds_hi, float) - \
                np.asarray(self.problem.bounds_lo, float)
            gnorm = float(np.linalg.norm(grad * span))
            if gnorm < self.config.flat_grad_threshold:
                u = np.clip(u + self._pd_control(x), -model.control_bounds,
                            model.control_bounds)
            self.last_info = {"phase": self.phase, "v0": v0, "t_star": None,
                              "grad_norm": gnorm}
            return u

        t_star = min_time_search(self.vf, x, self.config.tstar_resolution)
        if t_star is None:
            # fell back out of the tube (model error); steer back in
            t_star = 0.0
        grad = np.asarray(self.vf.gradient(x, t_star), float)
        self.last_info = {"phase": self.phase, "v0": v0, "t_star": t_star}
        return bang_bang(model, x, grad)


@dataclass
class SafetyFilterConfig:
    gamma: float = 0.05
    query_time: float = 0.0  # avoid-BRT time slice (most conservative)


def safety_filter(model, x, u_nom, avoid_vf, gamma: float = 0.05,
                  query_time: float = 0.0):
    """Least-restrictive override: pass u_nom while V_avoid >= gamma, else
    apply the bang-bang control maximizing V_avoid. Returns (u, intervened)."""
    x = np.asarray(x, float)
    v = float(avoid_vf.value(x, query_time))
    if v >= gamma:
        return np.asarray(u_nom, float), False
    grad = np.asarray(avoid_vf.gradient(x, query_time), float)
    return ascent_bang_bang(model, x, grad), True


class SafetyFilteredController:
    """Wraps a nominal controller with the avoid-BRT safety filter."""

    def __init__(self, problem: ReachAvoidProblem, nominal, avoid_vf,
                 config: SafetyFilterConfig = None):
        self.problem = problem
        self.nominal = nominal
        self.avoid_vf = avoid_vf
        self.config = config or SafetyFilterConfig()
        self.interventions = 0
        self.last_info = {}

    def reset(self):
        self.interventions = 0
        if hasattr(self.nominal, "reset"):
            self.nominal.reset()

    def __call__(self, x, t_elapsed: float = 0.0):
        u_nom = self.nominal(x, t_elapsed)
        u, hit = safety_filter(self.problem.model, x, u_nom, self.avoid_vf,
                               self.config.gamma, self.config.query_time)
        if hit:
            self.interventions += 1
        self.last_info = dict(getattr(self.nominal, "last_info", {}),
                              intervened=hit)
        return u


def make_avoid_brt(problem: ReachAvoidProblem, method: str = "grid",
                   grid_counts=None, train_config=None, grid_horizon=None):
    """Avoid-only BRT (positive = safe) for the safety filter.

    grid: maximizing-Hamiltonian solve with the running-min clamp;
    neural: the training loop run in avoid-only mode.
    """
    avoid_problem = problem.avoid_only()
    if method == "grid":
        if grid_counts is None:
            grid_counts = (51,) * problem.dim
        if problem.dim > 6:
            raise ValueError("grid avoid-BRT infeasible above 6 dimensions")
        grid = Grid(problem.bounds_lo, problem.bounds_hi, grid_counts,
                    periodic=tuple(i in problem.periodic_dims
                                   for i in range(problem.dim)))
        return solve_vi(avoid_problem, grid, grid_horizon=grid_horizon)
    if method == "neural":
        from .training import TrainingConfig, train
        nvf, _ = train(avoid_problem, train_config or TrainingConfig())
        return nvf
    raise ValueError(f"unknown avoid-BRT method {method!r}")
