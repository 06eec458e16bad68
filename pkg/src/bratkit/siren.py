"""Sinusoidal MLP value-function approximator with exact terminal boundary.

The network phi(x, t) is wrapped as

    V(x, t) = phi(z(x, t)) * (T - t) + max(g(x), -l(x))

(avoid-only mode uses l(x) as the boundary term), which satisfies the
terminal condition identically for any parameters. Inputs are normalized
per-dimension to [-1, 1] (time to [0, 1]) before the network; autograd
through the wrapper therefore yields gradients in physical units, including
the subgradient of the boundary max (larger branch wins; g on exact ties,
following torch.maximum's tie behavior toward the first argument).

All tensors are float64: training at desk scale is cheap and the exact
boundary / gradient acceptance tolerances assume double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .io import read_container, write_container
from .problem import ReachAvoidProblem

DTYPE = torch.float64


class SirenNetwork(torch.nn.Module):
    """MLP with sine activations; scalar output.

    Sine layers compute sin(omega0 * (W a) + b). Hidden weights carry the
    standard 1/omega0-scaled uniform init so pre-activations stay O(1).
    """

    def __init__(self, widths, omega0: float = 30.0):
        super().__init__()
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.widths = tuple(int(w) for w in widths)
        self.omega0 = float(omega0)
        layers = []
        for i in range(len(widths) - 1):
            layers.append(torch.nn.Linear(widths[i], widths[i + 1], dtype=DTYPE))
        self.layers = torch.nn.ModuleList(layers)

    def forward(self, z):
        if z.shape[-1] != self.widths[0]:
            raise ValueError(
                f"input dim {z.shape[-1]} != network input width {self.widths[0]}")
        a = z
        for layer in self.layers[:-1]:
            a = torch.sin(self.omega0 * (a @ layer.weight.T) + layer.bias)
        out = self.layers[-1](a)
        return out[..., 0]


def init_siren(widths, omega0: float = 30.0, seed: int = 0) -> SirenNetwork:
    """Deterministic SIREN init from a numpy RNG.

    First layer weights U(+-1/n_in); later sine layers U(+-sqrt(6/n_in)/omega0);
    output layer U(+-sqrt(6/n_in)/omega0); biases U(+-1/sqrt(n_in)).
    """
    net = SirenNetwork(widths, omega0)
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for i, layer in enumerate(net.layers):
            n_in = layer.weight.shape[1]
            if i == 0:
                w_bound = 1.0 / n_in
            else:
                w_bound = math.sqrt(6.0 / n_in) / omega0
            layer.weight.copy_(torch.from_numpy(
                rng.uniform(-w_bound, w_bound, size=tuple(layer.weight.shape))))
            layer.bias.copy_(torch.from_numpy(
                rng.uniform(-1.0 / math.sqrt(n_in), 1.0 / math.sqrt(n_in),
                            size=tuple(layer.bias.shape))))
    return net


@dataclass
class GradientBundle:
    value: float
    dv_dt: float
    dv_dx: np.ndarray


class NeuralValueFunction:
    """SIREN network bound to a problem, with exact-boundary wrapping."""

    def __init__(self, net: SirenNetwork, problem: ReachAvoidProblem,
                 bounds_lo=None, bounds_hi=None):
        self.net = net
        self.problem = problem
        self.lo = np.asarray(problem.bounds_lo if bounds_lo is None else bounds_lo,
                             float)
        self.hi = np.asarray(problem.bounds_hi if bounds_hi is None else bounds_hi,
                             float)
        if net.widths[0] != problem.dim + 1:
            raise ValueError("network input width must be state dim + 1 (time)")
        self._lo_t = torch.from_numpy(self.lo)
        self._span_t = torch.from_numpy(self.hi - self.lo)

    @property
    def horizon(self) -> float:
        return float(self.problem.horizon)

    def normalize(self, X: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        zx = 2.0 * (X - self._lo_t) / self._span_t - 1.0
        zt = (t / self.horizon)[..., None]
        return torch.cat([zx, zt], dim=-1)

    def denormalize(self, Z: torch.Tensor):
        X = (Z[..., :-1] + 1.0) * 0.5 * self._span_t + self._lo_t
        t = Z[..., -1] * self.horizon
        return X, t

    def value_tensor(self, X: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        """Batched V(x, t); differentiable in inputs and parameters."""
        phi = self.net(self.normalize(X, t))
        return phi * (self.horizon - t) + self.problem.boundary_value(X)

    def value(self, x, t):
        X = torch.as_tensor(np.asarray(x, float), dtype=DTYPE)
        single = X.ndim == 1
        if single:
            X = X[None]
        tt = torch.full((X.shape[0],), float(t), dtype=DTYPE) if np.ndim(t) == 0 \
            else torch.as_tensor(np.asarray(t, float), dtype=DTYPE)
        with torch.no_grad():
            v = self.value_tensor(X, tt)
        return float(v[0]) if single else v.numpy()

    __call__ = value

    def value_and_gradients(self, x, t) -> GradientBundle:
        """V with physical-unit input gradients (autograd, exact to rounding)."""
        X = torch.as_tensor(np.asarray(x, float), dtype=DTYPE).requires_grad_(True)
        tt = torch.as_tensor(float(t), dtype=DTYPE).requires_grad_(True)
        v = self.value_tensor(X[None], tt[None])[0]
        gx, gt = torch.autograd.grad(v, (X, tt))
        return GradientBundle(value=float(v.detach()), dv_dt=float(gt),
                              dv_dx=gx.detach().numpy())

    def gradient(self, x, t) -> np.ndarray:
        return self.value_and_gradients(x, t).dv_dx

    def value_grad_batch(self, X: torch.Tensor, t: torch.Tensor,
                         create_graph: bool = False):
        """(V, dV/dt, dV/dx) on a batch; create_graph=True keeps the nested
        path for parameter gradients of gradient-dependent losses."""
        X = X.requires_grad_(True)
        t = t.requires_grad_(True)
        v = self.value_tensor(X, t)
        gx, gt = torch.autograd.grad(v.sum(), (X, t), create_graph=create_graph)
        return v, gt, gx

    # -- persistence ---------------------------------------------------

    def save(self, path):
        arrays = {"lo": self.lo, "hi": self.hi}
        for i, layer in enumerate(self.net.layers):
            arrays[f"W{i}"] = layer.weight.detach().numpy()
            arrays[f"b{i}"] = layer.bias.detach().numpy()
        write_container(path, meta={
            "format": "nvf_checkpoint", "version": 1,
            "widths": list(self.net.widths), "omega0": self.net.omega0,
            "horizon": self.horizon, "mode": self.problem.mode,
            "problem": self.problem.name,
            "fingerprint": self.problem.fingerprint(),
        }, arrays=arrays)

    @classmethod
    def load(cls, path, problem: ReachAvoidProblem,
             check_fingerprint: bool = True) -> "NeuralValueFunction":
        meta, arrays = read_container(path)
        if meta.get("format") != "nvf_checkpoint":
            raise ValueError(f"{path}: not a value-function checkpoint")
        if check_fingerprint and meta["fingerprint"] != problem.fingerprint():
            raise ValueError(
                f"checkpoint fingerprint {meta['fingerprint']} does not match "
                f"problem {problem.name} ({problem.fingerprint()})")
        net = SirenNetwork(meta["widths"], meta["omega0"])
        with torch.no_grad():
            for i, layer in enumerate(net.layers):
                layer.weight.copy_(torch.from_numpy(arrays[f"W{i}"]))
                layer.bias.copy_(torch.from_numpy(arrays[f"b{i}"]))
        return cls(net, problem, bounds_lo=arrays["lo"], bounds_hi=arrays["hi"])

    @staticmethod
    def peek(path) -> dict:
        """Checkpoint metadata without a problem binding (CLI `info`)."""
        meta, _ = read_container(path)
        if meta.get("format") != "nvf_checkpoint":
            raise ValueError(f"{path}: not a value-function checkpoint")
        return meta


def parameter_gradients(net: SirenNetwork, loss: torch.Tensor):
    """Exact parameter gradients of a scalar loss (which may itself contain
    input gradients of the value function)."""
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    grads = torch.autograd.grad(loss, list(net.parameters()), allow_unused=True)
    out = []
    for p, gr in zip(net.parameters(), grads):
        out.append(np.zeros(tuple(p.shape)) if gr is None else gr.detach().numpy())
    return out
