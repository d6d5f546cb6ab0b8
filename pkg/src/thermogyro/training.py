"""Mini-batch Adam training and scoring."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import model as M
from .dataset import NormalizationSpec, Sample, SampleArrays, stack_samples
from .loss import LOSSES
from .tensor import AdamState, NumericError, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch: int = 32
    epochs: int = 40
    seed: int = 0
    shuffle: bool = True
    loss: str = "berhu"

    def __post_init__(self) -> None:
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.batch < 1 or self.epochs < 1:
            raise ValueError("batch and epochs must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {sorted(LOSSES)}")


class TrainingDiverged(NumericError):
    pass


def _arrays(samples) -> SampleArrays:
    if isinstance(samples, SampleArrays):
        return samples
    return stack_samples(list(samples))


def _output_and_grads(model: M.FusionModel, frames, y_gy, y, loss_fn):
    trace = M.forward(model, frames)
    if model.config.fusion:
        pred = M.fuse(trace.y_th, trace.k_g, y_gy)
        value, d_pred = loss_fn(pred, y)
        d_y_th, d_k_g = M.fusion_upstream(trace, y_gy, d_pred)
    else:
        value, d_y_th = loss_fn(trace.y_th, y)
        d_k_g = None
    return value, M.backward(model, trace, d_y_th, d_k_g)


def train(model: M.FusionModel, samples, cfg: TrainConfig = TrainConfig(), steps: int | None = None):
    """Train ``model`` in place; returns ``(model, per-epoch mean loss)``.

    The fusion variant is scored on the fused output, the thermal-only
    variant on its thermal head. ``steps`` caps the total number of Adam
    updates (one "epoch" per pass, the last one possibly partial).
    """
    data = _arrays(samples)
    n = len(data)
    if n == 0:
        raise ValueError("no training samples")
    loss_fn = LOSSES[cfg.loss]
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(size=model.n_params, lr=cfg.lr)
    history = []
    n_batches = math.ceil(n / cfg.batch)
    epochs = cfg.epochs if steps is None else math.ceil(steps / n_batches)
    done = 0
    for epoch in range(epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        seen = 0
        for b in range(n_batches):
            if steps is not None and done >= steps:
                break
            idx = np.sort(order[b * cfg.batch : (b + 1) * cfg.batch])
            value, grad = _output_and_grads(model, data.frames[idx], data.y_gy[idx], data.y[idx], loss_fn)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            adam_step(model.flat, grad, state)
            total += value * len(idx)
            seen += len(idx)
            done += 1
        history.append(total / seen)
        log.debug("epoch %d/%d loss %.6g", epoch + 1, epochs, history[-1])
    return model, history


@dataclass
class Predictions:
    y: np.ndarray  # scored output: fused for fusion models, thermal otherwise
    y_th: np.ndarray
    k_g: np.ndarray | None


def predict(model: M.FusionModel, samples, k_g_override: float | None = None, chunk: int = 256) -> Predictions:
    data = _arrays(samples)
    y_th, k_g = [], []
    for start in range(0, len(data), chunk):
        trace = M.forward(model, data.frames[start : start + chunk])
        y_th.append(trace.y_th)
        if trace.k_g is not None:
            k_g.append(trace.k_g)
    y_th = np.concatenate(y_th)
    if not model.config.fusion:
        return Predictions(y_th, y_th, None)
    kg = np.concatenate(k_g)
    if k_g_override is not None:
        kg = np.full_like(kg, float(k_g_override))
    return Predictions(M.fuse(y_th, kg, data.y_gy), y_th, kg)


@dataclass
class EvalResult:
    mse: float  # normalized speed units
    rmse_deg_s: float


def evaluate(
    model: M.FusionModel, samples, k_g_override: float | None = None,
    norm: NormalizationSpec = NormalizationSpec(),
) -> EvalResult:
    data = _arrays(samples)
    pred = predict(model, data, k_g_override)
    mse = float(np.mean((pred.y - data.y) ** 2))
    return EvalResult(mse, math.sqrt(mse) * norm.speed_scale)


def as_samples(samples: list[Sample] | SampleArrays) -> SampleArrays:
    return _arrays(samples)
