"""Loss assembly, curriculum scheduling, and the train-verify-refine loop.

The value function is trained on a weighted sum of a variational-inequality
residual (physics term) and MPC cost labels (supervision term), with the
collocation time window expanding from the terminal slice toward t = 0 on a
checkpoint-gated schedule: the window only grows after the network passes
validation against held-out labels, and passing checkpoints trigger label
regeneration warm-started from the current policy.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch

from . import mpc as mpc_mod
from .problem import ReachAvoidProblem
from .siren import DTYPE, NeuralValueFunction, init_siren


@dataclass
class TrainingConfig:
    epochs: int = 2000
    widths: tuple = (None, 64, 64, 64, 1)  # None -> dim + 1
    omega0: float = 30.0
    w_pde: float = 1.0
    w_mpc: float = 10.0
    lambda_fp: float = 5.0
    alpha: float = 1.2          # curriculum overshoot, > 1
    curriculum_epochs: int = None  # N_c; default 0.8 * epochs
    n_collocation: int = 2048   # N_p per step (paper-scale: 60 000)
    n_label_batch: int = 512    # N_m per step (paper-scale: 10 000)
    lr: float = 2e-5
    cosine_decay: bool = True
    grad_clip: float = 1.0
    n_checkpoints: int = 10
    gating: bool = True
    validation_threshold: float = None  # default: 0.1 * IQR of held-out labels
    threshold_iqr_frac: float = 0.10
    holdout_frac: float = 0.05
    gate_patience: int = 3      # consecutive fails before relaxing
    gate_relax: float = 1.5
    n_labels: int = 2000        # initial label count when none supplied
    regen_labels: bool = True
    label_shooting: mpc_mod.ShootingConfig = None
    strata_weights: dict = None
    seed: int = 0

    def __post_init__(self):
        if self.w_pde < 0 or self.w_mpc < 0 or self.lambda_fp < 0:
            raise ValueError("loss weights must be non-negative")
        if self.alpha <= 1:
            raise ValueError("curriculum overshoot alpha must exceed 1")
        if self.curriculum_epochs is None:
            self.curriculum_epochs = max(1, int(0.8 * self.epochs))
        if self.validation_threshold is not None and self.validation_threshold <= 0:
            raise ValueError("validation threshold must be positive")


@dataclass
class CurriculumState:
    epoch: int = 0
    sched_epoch: int = 0   # frozen while the gate is held
    t_min: float = 0.0
    checkpoint_index: int = 0
    gate_status: str = "pending"  # pending | passed | held


@dataclass
class ValidationReport:
    mae: float
    false_positive_rate: float
    count: int
    passed: bool


def curriculum_tmin(epoch: int, T: float, alpha: float, n_c: int) -> float:
    """Collocation window lower edge; reaches 0 before epoch n_c (overshoot)."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return max(0.0, T - T * alpha * min(epoch / n_c, 1.0))


def sample_collocation(bounds_lo, bounds_hi, t_range, n: int,
                       rng: np.random.Generator):
    lo = np.asarray(bounds_lo, float)
    hi = np.asarray(bounds_hi, float)
    X = rng.uniform(lo, hi, size=(n, lo.shape[0]))
    t = rng.uniform(t_range[0], t_range[1], size=n)
    return X, t


def _hamiltonian(problem: ReachAvoidProblem, X, p):
    """Closed-form optimized Hamiltonian on a torch batch.

    Reach-avoid: minimizing control, H = p.f0 - sum_j ubar_j |(B^T p)_j|;
    avoid-only: maximizing, flip the control term's sign.
    """
    model = problem.model
    f0 = model.open_loop(X)
    btp = model.control_cotangent(X, p)
    ubar = torch.as_tensor(model.control_bounds, dtype=X.dtype)
    drift = (p * f0).sum(dim=-1)
    ctrl = (ubar * btp.abs()).sum(dim=-1)
    return drift + ctrl if problem.mode == "avoid_only" else drift - ctrl


def pde_residual(nvf: NeuralValueFunction, X: torch.Tensor, t: torch.Tensor,
                 create_graph: bool = True) -> torch.Tensor:
    problem = nvf.problem
    v, dvdt, dvdx = nvf.value_grad_batch(X, t, create_graph=create_graph)
    ham = _hamiltonian(problem, X, dvdx)
    if problem.mode == "avoid_only":
        return torch.minimum(dvdt + ham, problem.avoid(X) - v)
    g = problem.reach(X)
    ell = problem.avoid(X)
    return torch.minimum(torch.maximum(dvdt + ham, v - g), v + ell)


def pde_loss(nvf: NeuralValueFunction, X, t, create_graph=True) -> torch.Tensor:
    res = pde_residual(nvf, torch.as_tensor(X, dtype=DTYPE),
                       torch.as_tensor(t, dtype=DTYPE), create_graph)
    if not torch.isfinite(res).all():
        raise FloatingPointError("non-finite VI residual")
    return res.abs().mean()


def mpc_loss(nvf: NeuralValueFunction, x, t, v_mpc, lambda_fp: float) -> torch.Tensor:
    X = torch.as_tensor(np.asarray(x, float), dtype=DTYPE)
    tt = torch.as_tensor(np.asarray(t, float), dtype=DTYPE)
    target = torch.as_tensor(np.asarray(v_mpc, float), dtype=DTYPE)
    v = nvf.value_tensor(X, tt)
    loss = (v - target).abs().mean()
    pos = target > 0
    if lambda_fp > 0 and pos.any():
        loss = loss + lambda_fp * torch.clamp(-v[pos], min=0.0).mean()
    return loss


def validate(nvf: NeuralValueFunction, heldout: mpc_mod.MpcLabelSet,
             threshold: float) -> ValidationReport:
    if len(heldout) == 0:
        raise ValueError("empty held-out set")
    with torch.no_grad():
        v = nvf.value(heldout.x, heldout.t)
    v = np.asarray(v, float)
    mae = float(np.mean(np.abs(v - heldout.v)))
    pos = heldout.v > 0
    fpr = float(np.mean(v[pos] <= 0)) if pos.any() else 0.0
    return ValidationReport(mae=mae, false_positive_rate=fpr,
                            count=len(heldout), passed=mae <= threshold)


def _split_labels(labels, holdout_frac, rng):
    n = len(labels)
    n_hold = max(1, int(round(n * holdout_frac)))
    idx = rng.permutation(n)
    hold = np.zeros(n, bool)
    hold[idx[:n_hold]] = True
    return labels.subset(~hold), labels.subset(hold)


def train(problem: ReachAvoidProblem, config: TrainingConfig = None,
          labels: mpc_mod.MpcLabelSet = None, progress: bool = False):
    """Algorithm-1 training loop; returns (NeuralValueFunction, log).

    The log is a list of dicts: per-epoch records plus "gate" and "regen"
    event records, suitable for line-delimited JSON.
    """
    config = config or TrainingConfig()
    rng = np.random.default_rng(config.seed)
    T = problem.horizon

    widths = tuple(problem.dim + 1 if w is None else w for w in config.widths)
    net = init_siren(widths, config.omega0, seed=config.seed)
    nvf = NeuralValueFunction(net, problem)

    use_labels = config.w_mpc > 0
    train_labels = hold_labels = None
    threshold = config.validation_threshold
    if use_labels:
        if labels is None:
            labels = mpc_mod.generate_labels(
                problem, config.n_labels, seed=config.seed,
                strata_weights=config.strata_weights,
                config=config.label_shooting)
        train_labels, hold_labels = _split_labels(labels, config.holdout_frac,
                                                  rng)
        if threshold is None:
            q1, q3 = np.percentile(hold_labels.v, [25, 75])
            threshold = max(config.threshold_iqr_frac * (q3 - q1), 1e-6)

    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    sched = None
    if config.cosine_decay:
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, config.epochs)

    cp_epochs = sorted({max(1, int(round((i + 1) * config.epochs
                                          / config.n_checkpoints)))
                        for i in range(config.n_checkpoints)})
    state = CurriculumState(t_min=T)
    log = []
    last_good = copy.deepcopy(net.state_dict())
    fails = 0
    gating = config.gating and use_labels

    for epoch in range(config.epochs):
        state.epoch = epoch
        state.t_min = curriculum_tmin(state.sched_epoch, T, config.alpha,
                                      config.curriculum_epochs)
        X, t = sample_collocation(problem.bounds_lo, problem.bounds_hi,
                                  (state.t_min, T), config.n_collocation, rng)
        Xc = _normalize_quats(problem, X)

        loss = torch.zeros((), dtype=DTYPE)
        l_pde = l_mpc = 0.0
        if config.w_pde > 0:
            lp = pde_loss(nvf, Xc, t)
            l_pde = float(lp.detach())
            loss = loss + config.w_pde * lp
        if use_labels:
            nb = min(config.n_label_batch, len(train_labels))
            sel = rng.choice(len(train_labels), size=nb, replace=False)
            lm = mpc_loss(nvf, train_labels.x[sel], train_labels.t[sel],
                          train_labels.v[sel], config.lambda_fp)
            l_mpc = float(lm.detach())
            loss = loss + config.w_mpc * lm

        if not torch.isfinite(loss):
            net.load_state_dict(last_good)
            log.append({"epoch": epoch, "event": "diverged"})
            break

        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip)
        opt.step()
        if sched is not None:
            sched.step()

        log.append({"epoch": epoch, "t_min": state.t_min,
                    "loss": float(loss.detach()), "pde_loss": l_pde,
                    "mpc_loss": l_mpc, "lr": opt.param_groups[0]["lr"]})

        if epoch + 1 in cp_epochs:
            state.checkpoint_index += 1
            last_good = copy.deepcopy(net.state_dict())
            if gating:
                held = hold_labels.subset(hold_labels.t >= state.t_min - 1e-9)
                if len(held) == 0:
                    held = hold_labels
                rep = validate(nvf, held, threshold)
                log.append({"epoch": epoch, "event": "gate",
                            "mae": rep.mae, "fpr": rep.false_positive_rate,
                            "threshold": threshold, "passed": bool(rep.passed),
                            "t_min": state.t_min})
                if rep.passed:
                    state.gate_status = "passed"
                    fails = 0
                    if config.regen_labels:
                        labels = mpc_mod.generate_labels(
                            problem, config.n_labels, policy=nvf,
                            seed=config.seed + state.checkpoint_index,
                            t_range=(state.t_min, T),
                            strata_weights=config.strata_weights,
                            config=config.label_shooting)
                        train_labels, hold_labels = _split_labels(
                            labels, config.holdout_frac, rng)
                        log.append({"epoch": epoch, "event": "regen",
                                    "count": len(labels),
                                    "t_lo": state.t_min})
                else:
                    state.gate_status = "held"
                    fails += 1
                    if fails >= config.gate_patience:
                        threshold *= config.gate_relax
                        fails = 0
                        log.append({"epoch": epoch, "event": "relax",
                                    "threshold": threshold,
                                    "warning": "gate failed repeatedly; "
                                               "relaxing validation threshold"})
            if progress:
                print(f"checkpoint {state.checkpoint_index} epoch {epoch} "
                      f"t_min {state.t_min:.3f} loss {float(loss.detach()):.4g} "
                      f"gate {state.gate_status}")

        if state.gate_status != "held":
            state.sched_epoch += 1

    return nvf, log


def _normalize_quats(problem, X):
    qs = problem.model.quat_slice
    if qs is None:
        return X
    X = np.array(X)
    q = X[:, qs]
    n = np.linalg.norm(q, axis=1, keepdims=True)
    bad = n[:, 0] < 1e-6
    q[bad] = np.array([1.0, 0.0, 0.0, 0.0])
    n[bad] = 1.0
    X[:, qs] = q / n
    return X


def vanilla_config(**overrides) -> TrainingConfig:
    """PDE-residual-only baseline: no label term, no gating."""
    base = dict(w_mpc=0.0, gating=False)
    base.update(overrides)
    return TrainingConfig(**base)
