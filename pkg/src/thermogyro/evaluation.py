"""Leave-one-acquisition-out folds, ablation sweeps, drift traces and gain histograms."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import model as M
from .dataset import Acquisition, NormalizationSpec, SampleArrays, make_windows, preprocess_frames, stack_samples
from .training import EvalResult, TrainConfig, evaluate, predict, train

log = logging.getLogger(__name__)


def median_iqr(values) -> tuple[float, float]:
    """Median and Q3 - Q1, quantiles by linear interpolation at p * (n - 1)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("median_iqr needs at least one value")
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
    return float(med), float(q3 - q1)


@dataclass
class FoldReport:
    n_frames: int
    subsample: int
    variant: str
    held_out_env: str
    fold_ids: list[str] = field(default_factory=list)
    mse: list[float] = field(default_factory=list)
    rmse_deg_s: list[float] = field(default_factory=list)
    median: float = float("nan")
    iqr: float = float("nan")

    def add(self, fold_id: str, result: EvalResult) -> None:
        self.fold_ids.append(fold_id)
        self.mse.append(result.mse)
        self.rmse_deg_s.append(result.rmse_deg_s)
        self.median, self.iqr = median_iqr(self.mse)

    def to_dict(self) -> dict:
        return asdict(self)


def windows_for(acqs: list[Acquisition], n_frames: int, subsample: int, norm: NormalizationSpec) -> SampleArrays | None:
    samples = [s for a in acqs for s in make_windows(a, n_frames, subsample, norm)]
    return stack_samples(samples) if samples else None


def fold_splits(
    acqs: list[Acquisition], held_out_env: str, pool: str = "all"
) -> Iterator[tuple[str, list[Acquisition], Acquisition]]:
    """Yield ``(fold_id, train_acqs, test_acq)``, one fold per acquisition of ``held_out_env``.

    ``pool="all"`` trains on every other acquisition in any environment;
    ``pool="env"`` only on the rest of the held-out environment.
    """
    if pool not in ("all", "env"):
        raise ValueError(f"pool must be 'all' or 'env', got {pool!r}")
    test_set = [a for a in acqs if a.environment == held_out_env]
    if len(test_set) < 2:
        raise ValueError(f"environment {held_out_env!r} has {len(test_set)} acquisitions; need >= 2 for k-fold")
    for held in test_set:
        train_acqs = [
            a for a in acqs if a is not held and (pool == "all" or a.environment == held_out_env)
        ]
        yield held.name, train_acqs, held


def kfold(
    acqs: list[Acquisition],
    held_out_env: str,
    cfg: TrainConfig,
    n_frames: int,
    subsample: int,
    variant: str,
    pool: str = "all",
    norm: NormalizationSpec = NormalizationSpec(),
    keep_models: bool = False,
) -> FoldReport | tuple[FoldReport, list[M.FusionModel]]:
    """Fresh model per fold, seeded ``cfg.seed + fold``; test MSE on the held-out acquisition."""
    config = M.ModelConfig(n_frames, subsample, variant)
    report = FoldReport(n_frames, subsample, variant, held_out_env)
    models = []
    for k, (fold_id, train_acqs, test_acq) in enumerate(fold_splits(acqs, held_out_env, pool)):
        train_set = windows_for(train_acqs, n_frames, subsample, norm)
        test_set = windows_for([test_acq], n_frames, subsample, norm)
        if train_set is None or test_set is None:
            raise ValueError(f"fold {fold_id}: no windows of {n_frames} frames")
        leaked = {name for name, _ in train_set.sources} & {test_acq.name}
        if leaked:
            raise AssertionError(f"fold {fold_id}: held-out acquisition in training data")
        model = M.build_model(config, cfg.seed + k)
        fold_cfg = TrainConfig(cfg.lr, cfg.batch, cfg.epochs, cfg.seed + k, cfg.shuffle, cfg.loss)
        train(model, train_set, fold_cfg)
        result = evaluate(model, test_set, norm=norm)
        report.add(fold_id, result)
        log.info("%s N_f=%d N_r=%d fold %s: mse %.6g", variant, n_frames, subsample, fold_id, result.mse)
        if keep_models:
            models.append(model)
    return (report, models) if keep_models else report


def complexity_rows(n_frames_list, subsample_list, variant: str = "fusion") -> list[dict]:
    rows = []
    for nf in n_frames_list:
        for nr in subsample_list:
            cfg = M.ModelConfig(nf, nr, variant)
            rows.append(
                {"n_frames": nf, "subsample": nr, "variant": variant,
                 "params": M.count_params(cfg)["total"], "flops": M.count_flops(cfg)["total"]}
            )
    return rows


def sweep(
    acqs, held_out_env: str, cfg: TrainConfig, n_frames_list, subsample_list,
    variants=M.VARIANTS, pool: str = "all", norm: NormalizationSpec = NormalizationSpec(),
) -> dict:
    reports = []
    for nf in n_frames_list:
        for nr in subsample_list:
            for variant in variants:
                reports.append(kfold(acqs, held_out_env, cfg, nf, nr, variant, pool, norm).to_dict())
    return {
        "held_out_env": held_out_env,
        "pool": pool,
        "train": asdict(cfg),
        "reports": reports,
        "complexity": [r for v in variants for r in complexity_rows(n_frames_list, subsample_list, v)],
    }


def sweep_nf(acqs, held_out_env, cfg, n_frames_list=(2, 3, 4, 5, 6), subsample=1, **kw) -> dict:
    return sweep(acqs, held_out_env, cfg, list(n_frames_list), [subsample], **kw)


def sweep_nr(acqs, held_out_env, cfg, subsample_list=(1, 2, 3), n_frames=3, **kw) -> dict:
    return sweep(acqs, held_out_env, cfg, [n_frames], list(subsample_list), **kw)


# --------------------------------------------------------------------------
# angular position drift
# --------------------------------------------------------------------------


def integrate_angle(speeds, dt: float) -> np.ndarray:
    """Cumulative angle starting at 0: one more entry than ``speeds``."""
    s = np.asarray(speeds, dtype=np.float64)
    return np.concatenate([[0.0], np.cumsum(s * dt)])


@dataclass
class AngleTrace:
    time_s: np.ndarray
    truth: np.ndarray
    gyro: np.ndarray
    fusion: np.ndarray

    def terminal_errors(self) -> tuple[float, float]:
        """(gyro-only, fusion) absolute angle error at the last time stamp."""
        return abs(self.gyro[-1] - self.truth[-1]), abs(self.fusion[-1] - self.truth[-1])

    def rows(self):
        return zip(self.time_s, self.truth, self.gyro, self.fusion)


def fused_speed_track(model: M.FusionModel, acq: Acquisition, norm: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    """Per-frame speed estimate (deg/s) for the whole acquisition.

    The run is tiled into consecutive non-overlapping windows of N_f frames
    and each window's fused estimate is held over its own frames, so the
    integrated gyro contribution equals the integral of the raw readings (no
    lag at speed changes). Tiles ignore segment boundaries, which are unknown
    in deployment. Trailing frames that do not fill a tile use the raw gyro.
    """
    cfg = model.config
    nf = cfg.n_frames
    speeds = acq.gyro.copy()
    n_tiles = len(acq) // nf
    if n_tiles == 0:
        return speeds
    pre = preprocess_frames(acq.frames[: n_tiles * nf], cfg.subsample, norm)
    frames = pre.reshape(n_tiles, nf, *pre.shape[1:])
    y_gy = acq.gyro[: n_tiles * nf].reshape(n_tiles, nf).mean(axis=1) / norm.speed_scale
    data = SampleArrays(frames, y_gy, np.zeros(n_tiles), [(acq.name, i * nf) for i in range(n_tiles)])
    speeds[: n_tiles * nf] = np.repeat(predict(model, data).y * norm.speed_scale, nf)
    return speeds


def drift_trace(model: M.FusionModel, acq: Acquisition, norm: NormalizationSpec = NormalizationSpec()) -> AngleTrace:
    dt = 1.0 / acq.fps
    n = len(acq)
    return AngleTrace(
        time_s=np.arange(n + 1) * dt,
        truth=integrate_angle(acq.labels, dt),
        gyro=integrate_angle(acq.gyro, dt),
        fusion=integrate_angle(fused_speed_track(model, acq, norm), dt),
    )


# --------------------------------------------------------------------------
# fusion gain histogram
# --------------------------------------------------------------------------


def kg_histogram(model: M.FusionModel, samples, n_bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
    if not model.config.fusion:
        raise ValueError("the gain histogram needs a fusion model")
    k_g = predict(model, samples).k_g
    counts, edges = np.histogram(k_g, bins=n_bins, range=(0.0, 1.0))
    return counts, edges


# --------------------------------------------------------------------------
# report files
# --------------------------------------------------------------------------


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def boxplot_rows(reports: list[dict]):
    for r in reports:
        for fold_id, mse in zip(r["fold_ids"], r["mse"]):
            yield r["variant"], r["n_frames"], r["subsample"], fold_id, mse
