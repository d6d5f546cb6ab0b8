"""Synthetic stand-in for the rotating-camera rig.

A panoramic temperature field (ambient level plus Gaussian warm blobs) is
sampled by a 24x32 camera that rotates in azimuth following a piecewise
constant speed schedule. The gyro reads the true speed plus a constant bias
and white noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import NATIVE_H, NATIVE_W, Acquisition, write_acquisition, write_manifest

MIN_SPEED, MAX_SPEED = 20, 200
DIFFICULTY_BLOBS = {"low": 4, "medium": 10, "high": 20}


@dataclass
class Scene:
    ambient: float
    # one row per blob: center azimuth deg, center elevation deg, width deg, amplitude deg C
    blobs: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    seed: int | None = None

    def __post_init__(self) -> None:
        self.blobs = np.asarray(self.blobs, dtype=np.float64).reshape(-1, 4)
        if np.any(self.blobs[:, 3] < 0):
            raise ValueError("blob amplitudes must be >= 0")
        if np.any(self.blobs[:, 2] <= 0):
            raise ValueError("blob widths must be > 0")

    def temperature(self, azimuth, elevation) -> np.ndarray:
        """Field value at broadcastable azimuth/elevation arrays (degrees)."""
        az = np.asarray(azimuth, dtype=np.float64)[..., None]
        el = np.asarray(elevation, dtype=np.float64)[..., None]
        c_az, c_el, width, amp = self.blobs.T
        d_az = np.mod(az - c_az + 180.0, 360.0) - 180.0
        d_el = el - c_el
        bumps = amp * np.exp(-0.5 * (d_az / width) ** 2) * np.exp(-0.5 * (d_el / width) ** 2)
        return self.ambient + bumps.sum(axis=-1)


@dataclass(frozen=True)
class CameraSpec:
    h_fov: float = 55.0
    v_fov: float = 35.0
    rows: int = NATIVE_H
    cols: int = NATIVE_W
    noise_std: float = 0.3
    fps: float = 8.0

    def __post_init__(self) -> None:
        if self.h_fov <= 0 or self.v_fov <= 0:
            raise ValueError("field of view must be positive")
        if self.noise_std < 0:
            raise ValueError("pixel noise std must be >= 0")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    def pixel_offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """Azimuth offsets per column and elevations per row, degrees."""
        az = ((np.arange(self.cols) + 0.5) / self.cols - 0.5) * self.h_fov
        el = (0.5 - (np.arange(self.rows) + 0.5) / self.rows) * self.v_fov
        return az, el


@dataclass(frozen=True)
class GyroSpec:
    bias: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.bias) and np.isfinite(self.noise_std)) or self.noise_std < 0:
            raise ValueError("gyro bias must be finite and noise std >= 0")


@dataclass(frozen=True)
class SpeedSchedule:
    segments: tuple[tuple[float, float], ...]  # (speed deg/s, duration s)

    def __post_init__(self) -> None:
        for speed, duration in self.segments:
            if duration <= 0:
                raise ValueError(f"segment duration must be > 0, got {duration}")
            if abs(speed) > MAX_SPEED:
                raise ValueError(f"speed {speed} outside +/-{MAX_SPEED} deg/s")


def random_schedule(rng: np.random.Generator, n_segments: int, duration: float) -> SpeedSchedule:
    """Integer speeds with |speed| in [20, 200] and random direction; neighbours differ."""
    segments = []
    prev = None
    while len(segments) < n_segments:
        speed = float(rng.integers(MIN_SPEED, MAX_SPEED + 1) * rng.choice([-1, 1]))
        if speed == prev:
            continue
        segments.append((speed, duration))
        prev = speed
    return SpeedSchedule(tuple(segments))


def build_scene(seed: int, n_blobs: int, ambient: float = 20.0, v_fov: float = 35.0) -> Scene:
    if n_blobs < 0:
        raise ValueError("n_blobs must be >= 0")
    rng = np.random.default_rng(seed)
    blobs = np.column_stack(
        [
            rng.uniform(0.0, 360.0, n_blobs),
            rng.uniform(-v_fov / 2, v_fov / 2, n_blobs),
            rng.uniform(5.0, 40.0, n_blobs),
            rng.uniform(2.0, 15.0, n_blobs),
        ]
    )
    return Scene(ambient=ambient, blobs=blobs, seed=seed)


def render_frame(scene: Scene, camera: CameraSpec, azimuth: float, rng: np.random.Generator | None = None) -> np.ndarray:
    d_az, el = camera.pixel_offsets()
    frame = scene.temperature(azimuth + d_az[None, :], el[:, None])
    if camera.noise_std > 0:
        if rng is None:
            raise ValueError("a random generator is required when pixel noise is enabled")
        frame = frame + rng.normal(0.0, camera.noise_std, size=frame.shape)
    return frame


def simulate_acquisition(
    scene: Scene,
    camera: CameraSpec,
    gyro: GyroSpec,
    schedule: SpeedSchedule,
    seed: int | np.random.SeedSequence,
    name: str = "sim",
    environment: str = "sim",
) -> Acquisition:
    """Render one acquisition; the starting azimuth is random.

    The camera sits at ``theta_k`` for frame k and moves by ``speed / fps``
    before the next frame, so every frame of a segment carries that
    segment's speed as its label.
    """
    if not schedule.segments:
        raise ValueError("speed schedule is empty")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    pose_rng, pix_rng, gyro_rng = (np.random.default_rng(s) for s in ss.spawn(3))

    speeds = np.concatenate(
        [np.full(int(round(dur * camera.fps)), float(speed)) for speed, dur in schedule.segments]
    )
    theta = pose_rng.uniform(0.0, 360.0) + np.concatenate([[0.0], np.cumsum(speeds[:-1] / camera.fps)])
    frames = np.stack([render_frame(scene, camera, th, pix_rng) for th in theta])
    readings = speeds + gyro.bias
    if gyro.noise_std > 0:
        readings = readings + gyro_rng.normal(0.0, gyro.noise_std, size=speeds.shape)
    return Acquisition(name=name, environment=environment, fps=camera.fps, frames=frames, gyro=readings, labels=speeds)


@dataclass(frozen=True)
class SimConfig:
    environment: str = "garden"
    n_acquisitions: int = 6
    n_segments: int = 20
    segment_seconds: float = 4.0
    n_blobs: int = DIFFICULTY_BLOBS["medium"]
    ambient: float = 20.0
    pixel_noise: float = 0.3
    gyro_bias: float = 2.0
    gyro_noise: float = 1.0
    fps: float = 8.0
    h_fov: float = 55.0
    v_fov: float = 35.0
    seed: int = 0

    def camera(self) -> CameraSpec:
        return CameraSpec(h_fov=self.h_fov, v_fov=self.v_fov, noise_std=self.pixel_noise, fps=self.fps)

    def gyro(self) -> GyroSpec:
        return GyroSpec(bias=self.gyro_bias, noise_std=self.gyro_noise)


def simulate_run(cfg: SimConfig, index: int, n_segments: int | None = None) -> Acquisition:
    """Acquisition ``index`` of the environment described by ``cfg``.

    The scene depends only on ``cfg.seed``; schedule, start pose and noise
    streams on ``(cfg.seed, index)``.
    """
    scene = build_scene(cfg.seed, cfg.n_blobs, cfg.ambient, cfg.v_fov)
    ss = np.random.SeedSequence([cfg.seed, index])
    sched_ss, acq_ss = ss.spawn(2)
    n_seg = cfg.n_segments if n_segments is None else n_segments
    schedule = random_schedule(np.random.default_rng(sched_ss), n_seg, cfg.segment_seconds)
    return simulate_acquisition(scene, cfg.camera(), cfg.gyro(), schedule, acq_ss,
                                name=f"{cfg.environment}/acq_{index:02d}", environment=cfg.environment)


def simulate_environment(cfg: SimConfig) -> list[Acquisition]:
    """All acquisitions of one environment: a shared scene, per-acquisition streams."""
    if cfg.n_acquisitions < 1 or cfg.n_segments < 1:
        raise ValueError("need at least one acquisition and one segment")
    return [simulate_run(cfg, k) for k in range(cfg.n_acquisitions)]


def generate_dataset(cfg: SimConfig, out_dir) -> list[Acquisition]:
    """Write one environment directory: ``acq_XX.csv`` files plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    acqs = simulate_environment(cfg)
    files = []
    for acq in acqs:
        fname = acq.name.split("/")[-1] + ".csv"
        write_acquisition(acq, out / fname)
        files.append(fname)
    write_manifest(out, cfg.environment, cfg.fps, files)
    return acqs
