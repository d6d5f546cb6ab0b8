"""Reverse-Huber (berHu) objective with a per-batch threshold, plus MSE."""

from __future__ import annotations

import numpy as np

C_FRACTION = 0.2


def adaptive_c(predictions, targets) -> float:
    """Threshold set to a fixed fraction of the largest absolute error in the batch."""
    e = np.asarray(predictions, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
    if e.size == 0:
        raise ValueError("adaptive_c needs a non-empty batch")
    return C_FRACTION * float(np.max(np.abs(e)))


def berhu(e, c: float):
    """Linear for |e| <= c, quadratic beyond. ``c == 0`` falls back to |e|."""
    if c < 0:
        raise ValueError(f"berHu threshold must be >= 0, got {c}")
    e = np.asarray(e, dtype=np.float64)
    a = np.abs(e)
    if c == 0:
        return a
    return np.where(a <= c, a, (e * e + c * c) / (2.0 * c))


def berhu_grad(e, c: float):
    e = np.asarray(e, dtype=np.float64)
    if c == 0:
        return np.sign(e)
    return np.where(np.abs(e) <= c, np.sign(e), e / c)


def batch_loss(predictions, targets) -> tuple[float, np.ndarray]:
    """Mean berHu loss and dL/dprediction; the threshold is held constant."""
    pred = np.asarray(predictions, dtype=np.float64).ravel()
    targ = np.asarray(targets, dtype=np.float64).ravel()
    if pred.shape != targ.shape:
        raise ValueError(f"{pred.size} predictions vs {targ.size} targets")
    c = adaptive_c(pred, targ)
    e = pred - targ
    n = e.size
    return float(np.mean(berhu(e, c))), berhu_grad(e, c) / n


def mse_loss(predictions, targets) -> tuple[float, np.ndarray]:
    pred = np.asarray(predictions, dtype=np.float64).ravel()
    targ = np.asarray(targets, dtype=np.float64).ravel()
    if pred.shape != targ.shape:
        raise ValueError(f"{pred.size} predictions vs {targ.size} targets")
    if pred.size == 0:
        raise ValueError("mse_loss needs a non-empty batch")
    e = pred - targ
    return float(np.mean(e * e)), 2.0 * e / e.size


LOSSES = {"berhu": batch_loss, "mse": mse_loss}
