"""Thin numpy/torch dispatch layer.

Geometry and dynamics functions in this package are written once and run on
either numpy arrays (rollouts, grid solver) or torch tensors (training,
autograd through reach/avoid functions). Only the handful of ops whose names
differ between the two libraries are wrapped here; everything else
(indexing, arithmetic, ufunc-style abs) is shared syntax.
"""

from __future__ import annotations

import numpy as np
import torch


def is_tensor(x) -> bool:
    return isinstance(x, torch.Tensor)


def maximum(a, b):
    if is_tensor(a) or is_tensor(b):
        if not is_tensor(a):
            a = torch.as_tensor(a, dtype=b.dtype, device=b.device)
        if not is_tensor(b):
            b = torch.as_tensor(b, dtype=a.dtype, device=a.device)
        return torch.maximum(a, b)
    return np.maximum(a, b)


def minimum(a, b):
    if is_tensor(a) or is_tensor(b):
        if not is_tensor(a):
            a = torch.as_tensor(a, dtype=b.dtype, device=b.device)
        if not is_tensor(b):
            b = torch.as_tensor(b, dtype=a.dtype, device=a.device)
        return torch.minimum(b, a)
    return np.minimum(a, b)


def sqrt(x):
    return torch.sqrt(x) if is_tensor(x) else np.sqrt(x)


def where(c, a, b):
    return torch.where(c, a, b) if is_tensor(c) else np.where(c, a, b)


def clip(x, lo, hi):
    return torch.clamp(x, lo, hi) if is_tensor(x) else np.clip(x, lo, hi)


def sign(x):
    return torch.sign(x) if is_tensor(x) else np.sign(x)


def stack(parts, axis=-1):
    if is_tensor(parts[0]):
        return torch.stack(parts, dim=axis)
    return np.stack(parts, axis=axis)


def concatenate(parts, axis=-1):
    if is_tensor(parts[0]):
        return torch.cat(parts, dim=axis)
    return np.concatenate(parts, axis=axis)


def zeros_like(x):
    return torch.zeros_like(x) if is_tensor(x) else np.zeros_like(x)


def norm(x, axis=-1):
    """Euclidean norm along an axis; safe for autograd away from 0."""
    if is_tensor(x):
        return torch.linalg.vector_norm(x, dim=axis)
    return np.linalg.norm(x, axis=axis)


def arccos(x):
    return torch.arccos(x) if is_tensor(x) else np.arccos(x)


def full_like(x, val):
    return torch.full_like(x, val) if is_tensor(x) else np.full_like(x, val)
