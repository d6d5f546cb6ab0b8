"""Acquisition files, frame preprocessing and N_f-frame windowing.

On disk an acquisition is one CSV: a header row, then one record per frame::

    idx,label_deg_s,gyro_deg_s,p000,...,p767

with the 24x32 frame flattened row-major in degrees Celsius. A dataset root
holds a ``manifest.json`` (``{"environment", "fps", "files"}``) next to its
CSVs; a root may instead hold one such directory per environment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NATIVE_H, NATIVE_W = 24, 32
N_PIXELS = NATIVE_H * NATIVE_W
MAX_SPEED = 200.0
MANIFEST = "manifest.json"
HEADER = ["idx", "label_deg_s", "gyro_deg_s"] + [f"p{i:03d}" for i in range(N_PIXELS)]


class DataError(ValueError):
    """Malformed or inconsistent acquisition data."""


@dataclass
class Acquisition:
    name: str
    environment: str
    fps: float
    frames: np.ndarray  # [L, 24, 32] deg C
    gyro: np.ndarray  # [L] deg/s
    labels: np.ndarray  # [L] deg/s

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.gyro = np.asarray(self.gyro, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        n = len(self.labels)
        if self.frames.shape != (n, NATIVE_H, NATIVE_W):
            raise DataError(f"{self.name}: frames must be [{n}, 24, 32], got {self.frames.shape}")
        if self.gyro.shape != (n,):
            raise DataError(f"{self.name}: {self.gyro.shape[0]} gyro readings for {n} frames")
        if np.any(np.abs(self.labels) > MAX_SPEED):
            raise DataError(f"{self.name}: labels outside [-200, 200] deg/s")
        if self.fps <= 0:
            raise DataError(f"{self.name}: fps must be positive")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def segment_starts(self) -> list[int]:
        """Indices where the commanded speed changes (0 included when non-empty)."""
        if len(self) == 0:
            return []
        change = np.flatnonzero(np.diff(self.labels) != 0) + 1
        return [0] + change.tolist()

    @property
    def segments(self) -> list[tuple[int, int]]:
        """Half-open ``(start, stop)`` ranges partitioning the records."""
        starts = self.segment_starts
        return list(zip(starts, starts[1:] + [len(self)]))


@dataclass(frozen=True)
class NormalizationSpec:
    speed_scale: float = MAX_SPEED
    std_floor: float = 1e-6

    def __post_init__(self) -> None:
        if self.speed_scale <= 0:
            raise ValueError("speed_scale must be positive")


@dataclass
class Sample:
    frames: np.ndarray  # [N_f, H, W], normalized
    y_gy: float
    y: float
    source: tuple[str, int] = field(default=("", 0))


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------


def _fmt(x: float) -> str:
    # repr is the shortest string that round-trips exactly
    return repr(float(x))


def write_acquisition(acq: Acquisition, path) -> None:
    lines = [",".join(HEADER)]
    pixels = acq.frames.reshape(len(acq), N_PIXELS).tolist()
    for i in range(len(acq)):
        row = [str(i), _fmt(acq.labels[i]), _fmt(acq.gyro[i])]
        row += [repr(v) for v in pixels[i]]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_acquisition(path, environment: str = "unknown", fps: float = 8.0, name: str | None = None) -> Acquisition:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise DataError(f"{path}: empty file")
    if lines[0].strip().split(",") != HEADER:
        raise DataError(f"{path}:1: header must be idx,label_deg_s,gyro_deg_s,p000..p767")
    body = lines[1:]
    if body and not body[-1].strip():
        body = body[:-1]
    rows = []
    for lineno, line in enumerate(body, start=2):
        cells = line.split(",")
        if len(cells) != len(HEADER):
            raise DataError(
                f"{path}:{lineno}: expected {N_PIXELS} pixels, got {len(cells) - 3}"
            )
        rows.append(cells)
    try:
        data = np.array(rows, dtype=np.float64).reshape(len(rows), len(HEADER))
    except ValueError:
        for lineno, cells in enumerate(rows, start=2):
            try:
                [float(c) for c in cells]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
        raise
    nonfinite = np.flatnonzero(~np.isfinite(data).all(axis=1))
    if nonfinite.size:
        raise DataError(f"{path}:{int(nonfinite[0]) + 2}: non-finite value")
    idx = data[:, 0]
    bad = np.flatnonzero((idx != np.round(idx)) | (np.diff(idx, prepend=-np.inf) <= 0))
    if bad.size:
        raise DataError(f"{path}:{int(bad[0]) + 2}: record indices must be increasing integers")
    labels = data[:, 1]
    out_of_range = np.flatnonzero(np.abs(labels) > MAX_SPEED)
    if out_of_range.size:
        raise DataError(f"{path}:{int(out_of_range[0]) + 2}: label outside [-200, 200] deg/s")
    return Acquisition(
        name=name or path.stem,
        environment=environment,
        fps=fps,
        frames=data[:, 3:].reshape(-1, NATIVE_H, NATIVE_W),
        gyro=data[:, 2],
        labels=labels,
    )


def write_manifest(root, environment: str, fps: float, files: list[str]) -> None:
    manifest = {"environment": environment, "fps": fps, "files": list(files)}
    Path(root, MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(root) -> dict:
    path = Path(root, MANIFEST)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"{path}: no manifest") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    for key, kind in (("environment", str), ("fps", (int, float)), ("files", list)):
        if not isinstance(manifest.get(key), kind):
            raise DataError(f"{path}: field {key!r} missing or of wrong type")
    return manifest


def load_dataset(root) -> list[Acquisition]:
    """Load every acquisition under ``root``.

    ``root`` is either one environment directory (with a manifest) or a parent
    of several, which are visited in sorted order.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: dataset directory not found")
    if (root / MANIFEST).exists():
        dirs = [root]
    else:
        dirs = sorted(d for d in root.iterdir() if (d / MANIFEST).exists())
        if not dirs:
            raise DataError(f"{root}: no {MANIFEST} found")
    acqs = []
    for d in dirs:
        manifest = read_manifest(d)
        env = manifest["environment"]
        for fname in manifest["files"]:
            acqs.append(
                load_acquisition(d / fname, environment=env, fps=float(manifest["fps"]),
                                 name=f"{env}/{Path(fname).stem}")
            )
    return acqs


def load_released_dataset(path) -> list[Acquisition]:
    """Adapter for recordings from the physical rig.

    Their native layout is not documented, so there is nothing to parse yet;
    convert such files to the CSV layout above and use :func:`load_dataset`.
    """
    raise NotImplementedError("the native recording layout is undocumented; convert to the canonical CSV first")


# --------------------------------------------------------------------------
# preprocessing
# --------------------------------------------------------------------------


def subsample_frame(frame, factor: int) -> np.ndarray:
    """Block-average non-overlapping factor x factor cells; ragged edges are dropped.

    Works on ``[..., H, W]`` stacks as well as single frames.
    """
    if factor not in (1, 2, 3):
        raise ValueError(f"subsample factor must be 1, 2 or 3, got {factor}")
    f = np.asarray(frame, dtype=np.float64)
    if factor == 1:
        return f.copy()
    h, w = f.shape[-2] // factor, f.shape[-1] // factor
    f = f[..., : h * factor, : w * factor]
    f = f.reshape(f.shape[:-2] + (h, factor, w, factor))
    return f.mean(axis=(-3, -1))


def normalize_frame(frame, std_floor: float = 1e-6) -> np.ndarray:
    """Per-frame standardization over the last two axes."""
    f = np.asarray(frame, dtype=np.float64)
    mean = f.mean(axis=(-2, -1), keepdims=True)
    std = f.std(axis=(-2, -1), keepdims=True)
    return (f - mean) / np.maximum(std, std_floor)


def gyro_average(readings) -> float:
    r = np.asarray(readings, dtype=np.float64)
    if r.size == 0:
        raise ValueError("gyro_average needs at least one reading")
    return float(r.mean())


def denormalize_speed(y_norm, norm: NormalizationSpec = NormalizationSpec()):
    return np.multiply(y_norm, norm.speed_scale)


def preprocess_frames(frames, subsample: int, norm: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    return normalize_frame(subsample_frame(frames, subsample), norm.std_floor)


def make_windows(
    acq: Acquisition, n_frames: int, subsample: int, norm: NormalizationSpec = NormalizationSpec()
) -> list[Sample]:
    """Stride-1 windows of ``n_frames`` consecutive frames inside each constant-speed segment."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if len(acq) == 0:
        return []
    pre = preprocess_frames(acq.frames, subsample, norm)
    samples = []
    for start, stop in acq.segments:
        for i in range(start, stop - n_frames + 1):
            samples.append(
                Sample(
                    frames=pre[i : i + n_frames],
                    y_gy=gyro_average(acq.gyro[i : i + n_frames]) / norm.speed_scale,
                    y=float(acq.labels[i]) / norm.speed_scale,
                    source=(acq.name, i),
                )
            )
    return samples


@dataclass
class SampleArrays:
    """Column-stacked samples, the form the trainer consumes."""

    frames: np.ndarray  # [n, N_f, H, W]
    y_gy: np.ndarray
    y: np.ndarray
    sources: list[tuple[str, int]]

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> SampleArrays:
        idx = np.asarray(idx)
        return SampleArrays(self.frames[idx], self.y_gy[idx], self.y[idx], [self.sources[i] for i in idx])


def stack_samples(samples: list[Sample]) -> SampleArrays:
    if not samples:
        raise ValueError("no samples to stack")
    return SampleArrays(
        frames=np.stack([s.frames for s in samples]),
        y_gy=np.array([s.y_gy for s in samples]),
        y=np.array([s.y for s in samples]),
        sources=[s.source for s in samples],
    )
