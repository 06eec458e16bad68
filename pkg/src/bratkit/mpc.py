"""Sampling-based MPC: reach-avoid rollout costs, perturbation shooting for
value labels, and the optimization-based controllers.

The discrete reach-avoid cost of a trajectory x_0..x_K is

    min_{k <= K} max( g(x_k), max_{j <= k} -l(x_j) )

including k = 0, so a state already in the goal (and clear of the obstacle)
has non-positive cost immediately. Shooting searches control sequences by
iterated Gaussian perturbation around an incumbent; the incumbent is always
retained, so returned costs never exceed the warm start's cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .dynamics import integrate_rk4
from .io import read_container, write_container
from .problem import ReachAvoidProblem

STRATA = ("near_goal", "mid_shell", "broad_uniform", "boundary_band")
DEFAULT_STRATA_WEIGHTS = {"near_goal": 0.35, "mid_shell": 0.25,
                          "broad_uniform": 0.25, "boundary_band": 0.15}
CONTROL_DT = 0.1  # control discretization for labels and controllers (s)


@dataclass
class ControlSequence:
    controls: np.ndarray  # (H, m)
    dt: float = CONTROL_DT
    t0: float = 0.0

    def __post_init__(self):
        self.controls = np.atleast_2d(np.asarray(self.controls, float))
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class ShootingConfig:
    samples: int = 64
    rounds: int = 8
    std_init: float = 0.5   # fraction of the control bound
    std_final: float = 0.1
    dt: float = CONTROL_DT

    def __post_init__(self):
        if self.samples < 1 or self.rounds < 1 or self.std_init <= 0 or self.std_final <= 0:
            raise ValueError("invalid shooting configuration")

    def stds(self):
        if self.rounds == 1:
            return np.array([self.std_init])
        return np.geomspace(self.std_init, self.std_final, self.rounds)


# ---------------------------------------------------------------------------
# Batched rollout cost

def _batch_costs(problem: ReachAvoidProblem, X0, U, dt, n_steps=None):
    """Reach-avoid costs for a batch of trajectories.

    X0: (B, n) initial states; U: (B, H, m) controls; n_steps: (B,) number
    of valid integration steps per trajectory (default: all H).
    Returns costs (B,).
    """
    model = problem.model
    B, H = U.shape[0], U.shape[1]
    if n_steps is None:
        n_steps = np.full(B, H, dtype=int)
    x = np.array(X0, float)
    run_max = -np.asarray(problem.avoid(x), float)
    best = np.maximum(np.asarray(problem.reach(x), float), run_max)
    for k in range(H):
        active = n_steps > k
        if not active.any():
            break
        x = integrate_rk4(model, x, U[:, k, :], dt)
        run_max = np.maximum(run_max, -np.asarray(problem.avoid(x), float))
        cand = np.maximum(np.asarray(problem.reach(x), float), run_max)
        best = np.where(active, np.minimum(best, cand), best)
    return best


def rollout_cost(problem: ReachAvoidProblem, x, t: float,
                 seq: ControlSequence) -> float:
    """Discrete reach-avoid cost of one control sequence from (x, t).

    The sequence is truncated to span [t, T] (partial last step dropped).
    """
    H = _steps_to_horizon(problem, t, seq.dt)
    U = seq.controls[:H][None] if H > 0 else np.zeros((1, 0, problem.model.control_dim))
    if H > seq.controls.shape[0]:
        pad = np.zeros((H - seq.controls.shape[0], problem.model.control_dim))
        U = np.concatenate([seq.controls, pad])[None]
    return float(_batch_costs(problem, np.asarray(x, float)[None], U, seq.dt)[0])


def _steps_to_horizon(problem, t, dt):
    return max(0, int(math.floor((problem.horizon - t) / dt + 1e-9)))


def _boundary_gradient_batch(problem, X):
    Xt = torch.as_tensor(X, dtype=torch.float64).requires_grad_(True)
    b = problem.boundary_value(Xt)
    (g,) = torch.autograd.grad(b.sum(), Xt)
    return g.numpy()


def _bang_bang_boundary_rollout(problem, X0, H, dt):
    """Candidate sequences: bang-bang on the boundary-value gradient."""
    model = problem.model
    B = X0.shape[0]
    U = np.zeros((B, H, model.control_dim))
    x = np.array(X0, float)
    for k in range(H):
        grad = _boundary_gradient_batch(problem, x)
        btp = np.asarray(model.control_cotangent(x, grad), float)
        U[:, k, :] = -model.control_bounds * np.sign(btp)
        x = integrate_rk4(model, x, U[:, k, :], dt)
    return U


def _shooting_batch(problem, X0, t0s, warm, config: ShootingConfig, rng):
    """Vectorized shooting across a batch of (x, t) queries.

    warm: (B, H, m) incumbent sequences or None. Returns (U_best, costs).
    """
    model = problem.model
    B = X0.shape[0]
    n_steps = np.array([_steps_to_horizon(problem, t, config.dt) for t in t0s])
    H = max(1, int(n_steps.max()))
    ubar = model.control_bounds

    candidates = []
    if warm is not None:
        w = np.clip(warm[:, :H, :], -ubar, ubar)
        if w.shape[1] < H:
            w = np.concatenate(
                [w, np.zeros((B, H - w.shape[1], model.control_dim))], axis=1)
        candidates.append(w)
    candidates.append(np.zeros((B, H, model.control_dim)))
    candidates.append(_bang_bang_boundary_rollout(problem, X0, H, config.dt))

    best_u = candidates[0]
    best_c = _batch_costs(problem, X0, best_u, config.dt, n_steps)
    for cand in candidates[1:]:
        c = _batch_costs(problem, X0, cand, config.dt, n_steps)
        better = c < best_c
        best_u = np.where(better[:, None, None], cand, best_u)
        best_c = np.minimum(best_c, c)

    S = config.samples
    for std in config.stds():
        noise = rng.normal(size=(B, S, H, model.control_dim)) * (std * ubar)
        trial = np.clip(best_u[:, None] + noise, -ubar, ubar)
        flat = trial.reshape(B * S, H, model.control_dim)
        X0r = np.repeat(X0, S, axis=0)
        nsr = np.repeat(n_steps, S)
        costs = _batch_costs(problem, X0r, flat, config.dt, nsr).reshape(B, S)
        idx = np.argmin(costs, axis=1)
        round_c = costs[np.arange(B), idx]
        better = round_c < best_c
        best_u = np.where(better[:, None, None],
                          trial[np.arange(B), idx], best_u)
        best_c = np.minimum(best_c, round_c)
    return best_u, best_c, n_steps


def shooting_solve(problem: ReachAvoidProblem, x, t: float,
                   warm_start: ControlSequence = None,
                   config: ShootingConfig = None, seed: int = 0):
    """Perturbation shooting from (x, t); returns (best sequence, V_mpc)."""
    config = config or ShootingConfig()
    rng = np.random.default_rng(seed)
    x = np.asarray(x, float)
    warm = None
    if warm_start is not None:
        warm = warm_start.controls[None]
    U, costs, n_steps = _shooting_batch(problem, x[None], np.array([t]), warm,
                                        config, rng)
    seq = ControlSequence(U[0, :max(1, n_steps[0])], dt=config.dt, t0=t)
    return seq, float(costs[0])


# ---------------------------------------------------------------------------
# Label generation

@dataclass
class MpcLabelSet:
    x: np.ndarray        # (N, n)
    t: np.ndarray        # (N,)
    v: np.ndarray        # (N,)
    stratum: np.ndarray  # (N,) int index into STRATA
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.x.shape[0]

    def subset(self, mask):
        return MpcLabelSet(self.x[mask], self.t[mask], self.v[mask],
                           self.stratum[mask], dict(self.meta))

    def histogram(self):
        return {name: int((self.stratum == i).sum())
                for i, name in enumerate(STRATA)}

    def save(self, path):
        write_container(path, meta={
            "format": "mpc_labels", "version": 1,
            "dim": int(self.x.shape[1]), "count": int(len(self)),
            "strata": list(STRATA), "histogram": self.histogram(),
            **self.meta,
        }, arrays={"x": self.x, "t": self.t, "v": self.v,
                   "stratum": self.stratum.astype(float)})
        with open(str(path) + ".txt", "w") as f:
            f.write(f"mpc labels: {len(self)} samples, dim {self.x.shape[1]}\n")
            for name, cnt in self.histogram().items():
                f.write(f"  {name}: {cnt}\n")
            q = np.percentile(self.v, [0, 25, 50, 75, 100])
            f.write("v quantiles (min/q1/med/q3/max): "
                    + " ".join(f"{v:.4f}" for v in q) + "\n")

    @classmethod
    def load(cls, path):
        meta, arrays = read_container(path)
        if meta.get("format") != "mpc_labels":
            raise ValueError(f"{path}: not an MPC label file")
        extra = {k: v for k, v in meta.items()
                 if k not in ("format", "version", "dim", "count", "strata",
                              "histogram")}
        return cls(arrays["x"], arrays["t"], arrays["v"],
                   arrays["stratum"].astype(int), extra)


def _sample_stratum(problem, name, count, rng, nvf=None, t_range=(None, None)):
    lo, hi = problem.bounds_lo, problem.bounds_hi
    span = hi - lo
    gs = problem.goal_state
    if name == "near_goal":
        X = gs + rng.normal(size=(count, problem.dim)) * (0.03 * span)
    elif name == "mid_shell":
        X = gs + rng.normal(size=(count, problem.dim)) * (0.15 * span)
    elif name == "broad_uniform":
        X = rng.uniform(lo, hi, size=(count, problem.dim))
    elif name == "boundary_band":
        # keep the uniform candidates closest to the learned zero level set
        cand = rng.uniform(lo, hi, size=(count * 8, problem.dim))
        tq = rng.uniform(t_range[0], t_range[1], size=cand.shape[0])
        vals = nvf.value(cand, tq) if hasattr(nvf, "value") else nvf(cand, tq)
        keep = np.argsort(np.abs(np.asarray(vals)))[:count]
        return _normalize_quat_block(problem, cand[keep])
    else:
        raise ValueError(f"unknown stratum {name}")
    X = np.clip(X, lo, hi)
    return _normalize_quat_block(problem, X)


def _normalize_quat_block(problem, X):
    qs = problem.model.quat_slice
    if qs is not None:
        q = X[:, qs]
        n = np.linalg.norm(q, axis=1, keepdims=True)
        deg = (n[:, 0] < 1e-6)
        q[deg] = np.array([1.0, 0.0, 0.0, 0.0])
        n[deg] = 1.0
        X[:, qs] = q / n
    return X


def _policy_warm_starts(problem, nvf, X0, t0s, H, dt):
    """Closed-loop rollouts of the learned bang-bang policy as warm starts."""
    model = problem.model
    B = X0.shape[0]
    U = np.zeros((B, H, model.control_dim))
    x = np.array(X0, float)
    for k in range(H):
        tq = np.clip(t0s + k * dt, 0.0, problem.horizon)
        Xt = torch.as_tensor(x, dtype=torch.float64).requires_grad_(True)
        tt = torch.as_tensor(tq, dtype=torch.float64)
        v = nvf.value_tensor(Xt, tt)
        (gx,) = torch.autograd.grad(v.sum(), Xt)
        btp = np.asarray(model.control_cotangent(x, gx.numpy()), float)
        U[:, k, :] = -model.control_bounds * np.sign(btp)
        x = integrate_rk4(model, x, U[:, k, :], dt)
    return U


def generate_labels(problem: ReachAvoidProblem, count: int,
                    strata_weights: dict = None, policy=None, seed: int = 0,
                    t_range=None, config: ShootingConfig = None) -> MpcLabelSet:
    """Importance-sampled MPC cost labels across four strata.

    When a learned policy (NeuralValueFunction) is given, shooting is
    warm-started from its closed-loop rollouts and the boundary_band
    stratum samples near its zero level set; otherwise that stratum's
    weight folds into broad_uniform.
    """
    config = config or ShootingConfig()
    weights = dict(DEFAULT_STRATA_WEIGHTS if strata_weights is None
                   else strata_weights)
    if abs(sum(weights.values()) - 1.0) > 1e-9:
        raise ValueError("strata weights must sum to 1")
    if policy is None:
        weights["broad_uniform"] = weights.get("broad_uniform", 0.0) + \
            weights.pop("boundary_band", 0.0)

    rng = np.random.default_rng(seed)
    T = problem.horizon
    t_lo, t_hi = (0.0, T) if t_range is None else t_range

    names, xs, ts = [], [], []
    remaining = count
    items = sorted(weights.items())
    for i, (name, w) in enumerate(items):
        c = remaining if i == len(items) - 1 else int(round(count * w))
        c = min(c, remaining)
        remaining -= c
        if c == 0:
            continue
        X = _sample_stratum(problem, name, c, rng, nvf=policy,
                            t_range=(t_lo, t_hi))
        names += [name] * c
        xs.append(X)
        ts.append(rng.uniform(t_lo, t_hi, size=c))
    X0 = np.concatenate(xs)
    t0s = np.concatenate(ts)
    strat = np.array([STRATA.index(n) for n in names])

    order = rng.permutation(len(X0))
    X0, t0s, strat = X0[order], t0s[order], strat[order]

    n_steps = np.array([_steps_to_horizon(problem, t, config.dt) for t in t0s])
    H = max(1, int(n_steps.max()))
    warm = None
    if policy is not None:
        warm = _policy_warm_starts(problem, policy, X0, t0s, H, config.dt)

    # chunk the batch so the (B, S, H, m) perturbation tensors stay bounded
    # regardless of label count and horizon length
    budget = 200_000_000 // (8 * config.samples * H
                             * problem.model.control_dim)
    chunk = max(1, min(len(X0), budget))
    costs = np.empty(len(X0))
    for lo in range(0, len(X0), chunk):
        sl = slice(lo, lo + chunk)
        w = warm[sl] if warm is not None else None
        _, costs[sl], _ = _shooting_batch(problem, X0[sl], t0s[sl], w,
                                          config, rng)
    return MpcLabelSet(X0, t0s, costs, strat, meta={
        "problem": problem.fingerprint(), "seed": seed,
        "t_lo": t_lo, "t_hi": t_hi, "warm_started": policy is not None})


# ---------------------------------------------------------------------------
# Controllers

@dataclass
class RecedingHorizonConfig:
    horizon: float = 2.0
    dt: float = CONTROL_DT
    n_random_starts: int = 4
    shooting: ShootingConfig = field(default_factory=lambda: ShootingConfig(
        samples=32, rounds=4))
    refine_iters: int = 3
    refine_step: float = 0.05  # fraction of bound
    seed: int = 0


class RecedingHorizonController:
    """Baseline MPC: multi-start shooting on the reach-avoid cost over a
    short window, plus local finite-difference refinement of the sequence."""

    def __init__(self, problem: ReachAvoidProblem,
                 config: RecedingHorizonConfig = None):
        self.problem = problem
        self.config = config or RecedingHorizonConfig()
        self.rng = np.random.default_rng(self.config.seed)
        self._prev = None
        self.last_info = {}

    def reset(self):
        self.rng = np.random.default_rng(self.config.seed)
        self._prev = None

    def _window_cost(self, X0, U):
        # reach-avoid cost over the planning window only
        return _batch_costs(self.problem, X0, U, self.config.dt)

    def __call__(self, x, t_elapsed: float = 0.0):
        cfg = self.config
        m = self.problem.model.control_dim
        ubar = self.problem.model.control_bounds
        H = max(1, int(round(cfg.horizon / cfg.dt)))
        x = np.asarray(x, float)

        starts = [np.zeros((H, m))]
        if self._prev is not None:
            shifted = np.concatenate([self._prev[1:], self._prev[-1:]])
            starts.append(shifted)
        starts.append(_bang_bang_boundary_rollout(self.problem, x[None], H,
                                                  cfg.dt)[0])
        for _ in range(cfg.n_random_starts):
            starts.append(self.rng.uniform(-ubar, ubar, size=(H, m)))

        best_u, best_c = None, np.inf
        for s in starts:
            U, c, _ = _shooting_batch(self.problem, x[None],
                                      np.array([self.problem.horizon - cfg.horizon]),
                                      s[None], cfg.shooting, self.rng)
            if c[0] < best_c:
                best_u, best_c = U[0], c[0]

        # local refinement: projected coordinate descent with FD gradient
        step = cfg.refine_step * np.max(ubar)
        for _ in range(cfg.refine_iters):
            grad = np.zeros_like(best_u)
            for k in range(H):
                for j in range(m):
                    up = best_u.copy()
                    up[k, j] = np.clip(up[k, j] + step, -ubar[j], ubar[j])
                    um = best_u.copy()
                    um[k, j] = np.clip(um[k, j] - step, -ubar[j], ubar[j])
                    cs = self._window_cost(np.stack([x, x]),
                                           np.stack([up, um]))
                    grad[k, j] = cs[0] - cs[1]
            gn = np.abs(grad).max()
            if gn < 1e-12:
                break
            trial = np.clip(best_u - step * grad / gn, -ubar, ubar)
            c = self._window_cost(x[None], trial[None])[0]
            if c < best_c:
                best_u, best_c = trial, c
            else:
                step *= 0.5
        self._prev = best_u
        self.last_info = {"cost": float(best_c)}
        return best_u[0]


@dataclass
class TerminalMpcConfig:
    horizon_steps: int = 10
    dt: float = CONTROL_DT
    samples: int = 48
    rounds: int = 5
    std_init: float = 0.5
    std_final: float = 0.1
    avoid_weight: float = 10.0
    seed: int = 0


def terminal_mpc_control(problem: ReachAvoidProblem, vf, x, t_term: float,
                         config: TerminalMpcConfig = None,
                         rng: np.random.Generator = None) -> np.ndarray:
    """Short-horizon shooting with the value function as terminal cost.

    Minimizes sum_k max(0, -l(x_k)) * avoid_weight + V(x_H, t_term). In the
    zero-horizon limit this reduces to bang-bang on the value gradient.
    """
    config = config or TerminalMpcConfig()
    rng = np.random.default_rng(config.seed) if rng is None else rng
    model = problem.model
    ubar = model.control_bounds
    x = np.asarray(x, float)
    t_term = float(np.clip(t_term, 0.0, problem.horizon))
    H = config.horizon_steps
    if H == 0:
        grad = vf.gradient(x, t_term)
        btp = np.asarray(model.control_cotangent(x, np.asarray(grad)), float)
        return -ubar * np.sign(btp)

    def costs(U):
        B = U.shape[0]
        xs = np.repeat(x[None], B, axis=0)
        pen = np.zeros(B)
        for k in range(H):
            xs = integrate_rk4(model, xs, U[:, k, :], config.dt)
            pen += np.maximum(0.0, -np.asarray(problem.avoid(xs), float))
        term = np.asarray(vf.value(xs, t_term), float)
        return config.avoid_weight * config.dt * pen + term

    best = np.zeros((H, model.control_dim))
    best_c = costs(best[None])[0]
    stds = np.geomspace(config.std_init, config.std_final, config.rounds)
    for std in stds:
        noise = rng.normal(size=(config.samples, H, model.control_dim)) * (std * ubar)
        trial = np.clip(best[None] + noise, -ubar, ubar)
        c = costs(trial)
        i = int(np.argmin(c))
        if c[i] < best_c:
            best, best_c = trial[i], c[i]
    return best[0]
