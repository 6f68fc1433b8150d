"""Output normalization and the sign-resolved coefficient loss.

For unit vectors ``c`` and ``p`` the loss is
``min_s (1/4) sum_m (c_m - s p_m)^2 = (1 - |<c, p>|) / 2`` and lies in ``[0, 0.5]``.
"""
from __future__ import annotations

import numpy as np

from ..errors import DegenerateOutputError, InvalidInputError

MIN_NORM = 1e-12


def normalize_output(raw) -> np.ndarray:
    """Scale a vector (or each row of a batch) to unit 2-norm."""
    raw = np.asarray(raw)
    norm = np.linalg.norm(raw, axis=-1, keepdims=True)
    if np.any(norm <= MIN_NORM):
        raise DegenerateOutputError("network output has (near) zero norm")
    return raw / norm


def loss(c_true, c_pre) -> np.ndarray | float:
    """Sign-resolved loss between unit vectors; broadcasts over leading axes."""
    c_true = np.asarray(c_true, dtype=float)
    c_pre = np.asarray(c_pre, dtype=float)
    if c_true.shape[-1] != c_pre.shape[-1]:
        raise InvalidInputError(f"dimension mismatch: {c_true.shape[-1]} vs {c_pre.shape[-1]}")
    a = np.sum((c_true - c_pre) ** 2, axis=-1)
    b = np.sum((c_true + c_pre) ** 2, axis=-1)
    out = 0.25 * np.minimum(a, b)
    return float(out) if np.ndim(out) == 0 else out


def loss_and_grad(raw: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean batch loss of ``normalize_output(raw)`` and its gradient w.r.t. ``raw``.

    The sign branch is taken per sample and held fixed when differentiating.
    """
    if raw.shape != targets.shape:
        raise InvalidInputError(f"outputs {raw.shape} vs targets {targets.shape}")
    norm = np.linalg.norm(raw, axis=1, keepdims=True)
    if np.any(norm <= MIN_NORM):
        raise DegenerateOutputError("network output has (near) zero norm")
    y = raw / norm
    dot = np.sum(targets * y, axis=1, keepdims=True)
    s = np.where(dot >= 0, 1.0, -1.0).astype(raw.dtype)
    per_sample = 0.25 * np.sum((targets - s * y) ** 2, axis=1)
    batch = len(raw)
    dy = -0.5 * s * (targets - s * y) / batch
    draw = (dy - y * np.sum(y * dy, axis=1, keepdims=True)) / norm
    return float(per_sample.mean()), draw
