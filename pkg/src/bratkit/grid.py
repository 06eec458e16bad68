"""Grid-based solution of the reach-avoid variational inequality.

Backward time marching with a local Lax-Friedrichs numerical Hamiltonian.
For control-affine dynamics the optimal Hamiltonian is closed-form:

    reach-avoid (minimizing control):  H = p.f0 - sum_j ubar_j |(B^T p)_j|
    avoid-only (maximizing control):   H = p.f0 + sum_j ubar_j |(B^T p)_j|

Each step computes Vt = V + dt * Hhat and applies the VI clamp
V <- max(-l, min(g, Vt)) (reach-avoid) or V <- min(l, Vt) (avoid-only),
the discrete analogue of the variational inequality.

Practical ceiling is 4 joint dimensions; higher dimension emits a warning.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .io import read_container, write_container
from .problem import ReachAvoidProblem


class CflError(RuntimeError):
    def __init__(self, dt, required):
        super().__init__(
            f"dt={dt:.3e} violates the CFL bound; required dt <= {required:.3e}")
        self.required_dt = required


@dataclass(frozen=True)
class Grid:
    lo: np.ndarray
    hi: np.ndarray
    counts: tuple
    periodic: tuple = None

    def __post_init__(self):
        lo = np.asarray(self.lo, float)
        hi = np.asarray(self.hi, float)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if self.periodic is None:
            object.__setattr__(self, "periodic", (False,) * len(self.counts))
        else:
            object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        if any(c < 3 for c in self.counts):
            raise ValueError("grid needs at least 3 points per dimension")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(hi > lo)):
            raise ValueError("grid bounds must be finite and strictly increasing")

    @property
    def ndim(self):
        return len(self.counts)

    def spacing(self):
        span = self.hi - self.lo
        return np.array([
            span[i] / (self.counts[i] if self.periodic[i] else self.counts[i] - 1)
            for i in range(self.ndim)])

    def axes(self):
        dx = self.spacing()
        out = []
        for i in range(self.ndim):
            if self.periodic[i]:
                out.append(self.lo[i] + dx[i] * np.arange(self.counts[i]))
            else:
                out.append(np.linspace(self.lo[i], self.hi[i], self.counts[i]))
        return out

    def points(self):
        """All nodes, shaped counts + (ndim,)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)


def _diffs(V, axis, dx, periodic):
    """One-sided differences D+ and D- along an axis (edge slopes replicated)."""
    if periodic:
        dp = (np.roll(V, -1, axis=axis) - V) / dx
        dm = (V - np.roll(V, 1, axis=axis)) / dx
        return dp, dm
    d = np.diff(V, axis=axis) / dx
    first = np.take(d, [0], axis=axis)
    last = np.take(d, [-1], axis=axis)
    dp = np.concatenate([d, last], axis=axis)
    dm = np.concatenate([first, d], axis=axis)
    return dp, dm


def solve_vi(problem: ReachAvoidProblem, grid: Grid, dt: float = None,
             grid_horizon: float = None, max_stored_floats: float = 2.0e8,
             cfl_safety: float = 0.8, progress: bool = False) -> "GridValueFunction":
    """March the VI backward from the terminal boundary condition.

    `dt=None` auto-selects a CFL-stable step. grid_horizon defaults to the
    problem horizon; comparison runs against neural value functions may set
    it independently.
    """
    if grid.ndim != problem.dim:
        raise ValueError("grid dimension does not match problem dimension")
    if grid.ndim > 4:
        warnings.warn("grid solver above 4 dimensions is likely intractable")

    T = problem.horizon if grid_horizon is None else float(grid_horizon)
    model = problem.model
    P = grid.points()
    dx = grid.spacing()
    n, m = grid.ndim, model.control_dim
    ubar = model.control_bounds

    f0 = np.asarray(model.open_loop(P), float)
    e = np.eye(m)
    bcols = np.stack([np.asarray(model.control_apply(P, e[j]), float)
                      for j in range(m)])  # (m, *counts, n)

    # local dissipation coefficients alpha_i = |dH/dp_i| bound
    alpha = np.abs(f0).copy()
    for j in range(m):
        alpha += ubar[j] * np.abs(bcols[j])

    cfl_sum = sum(alpha[..., i] / dx[i] for i in range(n))
    peak = float(cfl_sum.max())
    dt_req = 1.0 / peak if peak > 0 else math.inf  # f == 0: value frozen
    if dt is None and not math.isfinite(dt_req):
        dt = T
    if dt is None:
        dt = cfl_safety * dt_req
    elif dt > dt_req:
        raise CflError(dt, dt_req)

    n_steps = max(1, math.ceil(T / dt))
    dt = T / n_steps

    if problem.mode == "avoid_only":
        lvals = np.asarray(problem.avoid(P), float)
        gvals = None
        ham_sign = +1.0
    else:
        gvals = np.asarray(problem.reach(P), float)
        lvals = np.asarray(problem.avoid(P), float)
        ham_sign = -1.0

    V = np.asarray(problem.boundary_value(P), float)

    n_nodes = V.size
    stride = max(1, math.ceil((n_steps + 1) * n_nodes / max_stored_floats))

    # Godunov upwinding is available when every control column acts on a
    # single state dimension (true for all the bundled grid-scale problems);
    # otherwise fall back to global-coupling local Lax-Friedrichs.
    col_dims = []
    separable = True
    for j in range(m):
        nz = [i for i in range(n) if np.any(bcols[j][..., i] != 0.0)]
        if len(nz) == 1:
            col_dims.append(nz[0])
        else:
            separable = False
            break
    ctrl_gain = None
    if separable:
        ctrl_gain = np.zeros_like(f0)  # c_i = sum_j ubar_j |B_ij| per dim
        for j, i in enumerate(col_dims):
            ctrl_gain[..., i] += ubar[j] * np.abs(bcols[j][..., i])

    slices = [V.copy()]
    times = [T]
    for k in range(1, n_steps + 1):
        if separable:
            # per-dim Godunov flux for h_i(p) = f0_i p + sign * c_i |p|
            Hhat = np.zeros_like(V)
            for i in range(n):
                dp, dm = _diffs(V, i, dx[i], grid.periodic[i])
                a = f0[..., i]
                c = ctrl_gain[..., i]
                h_dp = a * dp + ham_sign * c * np.abs(dp)
                h_dm = a * dm + ham_sign * c * np.abs(dm)
                zero_inside = (np.minimum(dm, dp) <= 0.0) & (np.maximum(dm, dp) >= 0.0)
                lo_val = np.minimum(h_dm, h_dp)
                lo_val = np.where(zero_inside, np.minimum(lo_val, 0.0), lo_val)
                hi_val = np.maximum(h_dm, h_dp)
                hi_val = np.where(zero_inside, np.maximum(hi_val, 0.0), hi_val)
                Hhat += np.where(dm >= dp, lo_val, hi_val)
        else:
            pbar = []
            diss = np.zeros_like(V)
            for i in range(n):
                dp, dm = _diffs(V, i, dx[i], grid.periodic[i])
                pbar.append(0.5 * (dp + dm))
                diss += 0.5 * alpha[..., i] * (dp - dm)
            Hhat = sum(f0[..., i] * pbar[i] for i in range(n)) + diss
            for j in range(m):
                btp = sum(bcols[j][..., i] * pbar[i] for i in range(n))
                Hhat += ham_sign * ubar[j] * np.abs(btp)
        Vt = V + dt * Hhat
        if problem.mode == "avoid_only":
            V = np.minimum(lvals, Vt)
        else:
            V = np.maximum(-lvals, np.minimum(gvals, Vt))
        if k % stride == 0 or k == n_steps:
            slices.append(V.copy())
            times.append(T - k * dt)
        if progress and k % max(1, n_steps // 10) == 0:
            print(f"solve_vi: step {k}/{n_steps}")

    times = np.array(times[::-1])
    values = np.stack(slices[::-1])
    return GridValueFunction(grid=grid, times=times, values=values,
                             meta={"problem": problem.fingerprint(),
                                   "mode": problem.mode, "dt": dt,
                                   "stride": stride})


class GridValueFunction:
    """Dense value samples over time x grid with interpolated queries."""

    def __init__(self, grid: Grid, times: np.ndarray, values: np.ndarray,
                 meta: dict = None):
        if values.shape[0] != len(times) or values.shape[1:] != grid.counts:
            raise ValueError("values shape inconsistent with grid/times")
        if np.any(np.diff(times) <= 0):
            raise ValueError("time stamps must be strictly increasing")
        self.grid = grid
        self.times = np.asarray(times, float)
        self.values = np.asarray(values, float)
        self.meta = dict(meta or {})
        self.clamp_count = 0

    @property
    def horizon(self):
        return float(self.times[-1])

    def _time_weights(self, t):
        ts = self.times
        if t <= ts[0]:
            return 0, 0, 0.0
        if t >= ts[-1]:
            return len(ts) - 1, len(ts) - 1, 0.0
        k = int(np.searchsorted(ts, t, side="right")) - 1
        k2 = min(k + 1, len(ts) - 1)
        w = (t - ts[k]) / (ts[k2] - ts[k]) if k2 > k else 0.0
        return k, k2, w

    def _interp_slice(self, Vt, x):
        g = self.grid
        x = np.asarray(x, float)
        idx = []
        frac = []
        for i in range(g.ndim):
            dx = (g.hi[i] - g.lo[i]) / (g.counts[i] if g.periodic[i] else g.counts[i] - 1)
            u = (x[..., i] - g.lo[i]) / dx
            if g.periodic[i]:
                u = np.mod(u, g.counts[i])
                i0 = np.floor(u).astype(int)
                frac.append(u - i0)
                idx.append(i0)
            else:
                if np.any(u < -1e-12) or np.any(u > g.counts[i] - 1 + 1e-12):
                    self.clamp_count += 1
                u = np.clip(u, 0.0, g.counts[i] - 1)
                i0 = np.minimum(np.floor(u).astype(int), g.counts[i] - 2)
                frac.append(u - i0)
                idx.append(i0)
        out = np.zeros(np.shape(frac[0]))
        for corner in range(2 ** g.ndim):
            w = 1.0
            sel = []
            for i in range(g.ndim):
                bit = (corner >> i) & 1
                ii = idx[i] + bit
                if g.periodic[i]:
                    ii = np.mod(ii, g.counts[i])
                sel.append(ii)
                w = w * (frac[i] if bit else (1.0 - frac[i]))
            out = out + w * Vt[tuple(sel)]
        return out

    def value(self, x, t):
        """Multilinear in state, linear in time; exact at nodes."""
        k1, k2, w = self._time_weights(float(t))
        v1 = self._interp_slice(self.values[k1], x)
        if k2 == k1 or w == 0.0:
            v = v1
        else:
            v = (1.0 - w) * v1 + w * self._interp_slice(self.values[k2], x)
        return float(v) if np.ndim(v) == 0 else v

    __call__ = value

    def gradient(self, x, t):
        """Central differences of the interpolated field, step = one cell.

        Falls back to one-sided differences near non-periodic boundaries
        (counted in clamp_count via the interpolator).
        """
        g = self.grid
        x = np.asarray(x, float)
        dx = g.spacing()
        out = np.zeros(g.ndim)
        for i in range(g.ndim):
            hi_ok = g.periodic[i] or x[i] + dx[i] <= g.hi[i]
            lo_ok = g.periodic[i] or x[i] - dx[i] >= g.lo[i]
            xp, xm = x.copy(), x.copy()
            if hi_ok and lo_ok:
                xp[i] += dx[i]
                xm[i] -= dx[i]
                out[i] = (self.value(xp, t) - self.value(xm, t)) / (2 * dx[i])
            elif hi_ok:
                xp[i] += dx[i]
                out[i] = (self.value(xp, t) - self.value(x, t)) / dx[i]
            else:
                xm[i] -= dx[i]
                out[i] = (self.value(x, t) - self.value(xm, t)) / dx[i]
        return out

    def save(self, path):
        g = self.grid
        write_container(
            path,
            meta={"format": "grid_value_function", "version": 1,
                  "counts": list(g.counts),
                  "periodic": [int(p) for p in g.periodic], **self.meta},
            arrays={"lo": g.lo, "hi": g.hi, "times": self.times,
                    "values": self.values},
        )

    @classmethod
    def load(cls, path):
        meta, arrays = read_container(path)
        if meta.get("format") != "grid_value_function":
            raise ValueError(f"{path}: not a grid value function file")
        grid = Grid(lo=arrays["lo"], hi=arrays["hi"],
                    counts=tuple(meta["counts"]),
                    periodic=tuple(bool(p) for p in meta["periodic"]))
        extra = {k: v for k, v in meta.items()
                 if k not in ("format", "version", "counts", "periodic")}
        return cls(grid, arrays["times"], arrays["values"], meta=extra)


def interpolate(v: GridValueFunction, x, t):
    return v.value(x, t)


def grid_gradient(v: GridValueFunction, x, t):
    return v.gradient(x, t)


class CompositeValueFunction:
    """max-combination of subsystem value functions over disjoint state blocks."""

    def __init__(self, v_a, idx_a, v_b, idx_b):
        idx_a, idx_b = tuple(idx_a), tuple(idx_b)
        if set(idx_a) & set(idx_b):
            raise ValueError("subsystem index maps overlap")
        self.v_a, self.idx_a = v_a, idx_a
        self.v_b, self.idx_b = v_b, idx_b
        self.horizon = min(v_a.horizon, v_b.horizon)

    def value(self, x, t):
        x = np.asarray(x, float)
        return max(self.v_a.value(x[list(self.idx_a)], t),
                   self.v_b.value(x[list(self.idx_b)], t))

    __call__ = value

    def gradient(self, x, t):
        x = np.asarray(x, float)
        va = self.v_a.value(x[list(self.idx_a)], t)
        vb = self.v_b.value(x[list(self.idx_b)], t)
        out = np.zeros(x.shape[-1])
        if va >= vb:
            out[list(self.idx_a)] = self.v_a.gradient(x[list(self.idx_a)], t)
        else:
            out[list(self.idx_b)] = self.v_b.gradient(x[list(self.idx_b)], t)
        return out


def combine_decomposed(v_a, idx_a, v_b, idx_b) -> CompositeValueFunction:
    """Query object for V(x, t) = max(V_a(x_a, t), V_b(x_b, t))."""
    return CompositeValueFunction(v_a, idx_a, v_b, idx_b)
