"""Thermal backbone, speed head, fusion-gain head and weight I/O."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T

NATIVE_H, NATIVE_W = 24, 32
CONV1_FILTERS = 6
CONV2_FILTERS = 16
FC1_UNITS = 120
FC2_UNITS = 80
KG_UNITS = 120
VARIANTS = ("thermal_only", "fusion")
SUBSAMPLE_FACTORS = (1, 2, 3)
WEIGHTS_FORMAT = "thermogyro-weights/1"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_frames: int = 3
    subsample: int = 1
    variant: str = "fusion"

    def __post_init__(self) -> None:
        if int(self.n_frames) < 1:
            raise ConfigError(f"n_frames must be >= 1, got {self.n_frames}")
        if self.subsample not in SUBSAMPLE_FACTORS:
            raise ConfigError(f"subsample factor must be one of {SUBSAMPLE_FACTORS}, got {self.subsample}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def input_h(self) -> int:
        return NATIVE_H // self.subsample

    @property
    def input_w(self) -> int:
        return NATIVE_W // self.subsample

    @property
    def pooled_hw(self) -> tuple[int, int]:
        return self.input_h // 2, self.input_w // 2

    @property
    def flat_features(self) -> int:
        ph, pw = self.pooled_hw
        return CONV2_FILTERS * ph * pw

    @property
    def fusion(self) -> bool:
        return self.variant == "fusion"


def layer_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """(name, shape) of every parameter tensor, in storage order."""
    k = T.KERNEL
    flat = config.flat_features
    shapes = [
        ("conv1.w", (CONV1_FILTERS, config.n_frames, k, k)),
        ("conv1.b", (CONV1_FILTERS,)),
        ("conv2.w", (CONV2_FILTERS, CONV1_FILTERS, k, k)),
        ("conv2.b", (CONV2_FILTERS,)),
        ("fc1.w", (FC1_UNITS, flat)),
        ("fc1.b", (FC1_UNITS,)),
        ("fc2.w", (FC2_UNITS, FC1_UNITS)),
        ("fc2.b", (FC2_UNITS,)),
        ("out.w", (1, FC2_UNITS)),
        ("out.b", (1,)),
    ]
    if config.fusion:
        shapes += [
            ("kg_fc.w", (KG_UNITS, flat)),
            ("kg_fc.b", (KG_UNITS,)),
            ("kg_out.w", (1, KG_UNITS)),
            ("kg_out.b", (1,)),
        ]
    return shapes


# layers followed by ReLU get fan-in init; the two scalar outputs get fan-average init
_RELU_LAYERS = {"conv1", "conv2", "fc1", "fc2", "kg_fc"}


class FusionModel:
    """All parameters live in one flat float64 buffer; ``params`` holds named views."""

    def __init__(self, config: ModelConfig, flat: np.ndarray | None = None):
        self.config = config
        self.shapes = layer_shapes(config)
        size = sum(int(np.prod(s)) for _, s in self.shapes)
        if flat is None:
            flat = np.zeros(size)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (size,):
            raise ConfigError(f"expected {size} parameters for {config}, got {flat.shape}")
        self.flat = flat
        self.params = _views(flat, self.shapes)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    @property
    def n_params(self) -> int:
        return self.flat.size

    def copy(self) -> FusionModel:
        return FusionModel(self.config, self.flat.copy())

    def empty_like_params(self) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        buf = np.empty_like(self.flat)
        return buf, _views(buf, self.shapes)


def _views(buf: np.ndarray, shapes) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        out[name] = buf[offset : offset + n].reshape(shape)
        offset += n
    return out


def build_model(config: ModelConfig, seed: int) -> FusionModel:
    """Seeded uniform init; biases start at zero.

    Layers are drawn in storage order from one generator, so a thermal-only
    model and a fusion model built with the same seed share every parameter
    outside the gain head. The gain output layer starts at zero, so an
    untrained fusion model mixes with K_g = 0.5 on every input.
    """
    model = FusionModel(config)
    rng = np.random.default_rng(seed)
    for name, shape in model.shapes:
        layer, kind = name.split(".")
        if kind == "b" or layer == "kg_out":
            continue
        fan_in = int(np.prod(shape[1:]))
        if layer in _RELU_LAYERS:
            bound = np.sqrt(6.0 / fan_in)
        else:
            bound = np.sqrt(6.0 / (fan_in + shape[0]))
        model.params[name][...] = rng.uniform(-bound, bound, size=shape)
    return model


@dataclass
class ForwardTrace:
    x: np.ndarray
    cols1: np.ndarray
    conv1_pre: np.ndarray
    conv1_act: np.ndarray
    pool_idx: T.PoolIndices
    pooled: np.ndarray
    cols2: np.ndarray
    conv2_pre: np.ndarray
    flat: np.ndarray
    fc1_pre: np.ndarray
    fc1_act: np.ndarray
    fc2_pre: np.ndarray
    fc2_act: np.ndarray
    y_th: np.ndarray
    kg_pre: np.ndarray | None
    kg_act: np.ndarray | None
    k_g: np.ndarray | None
    batched: bool
    variant: str


def forward(model: FusionModel, frames: np.ndarray) -> ForwardTrace:
    """Run the network on ``[N_f, H, W]`` (or a batch ``[B, N_f, H, W]``).

    ``y_th`` and ``k_g`` are scalars for a single sample, ``[B]`` arrays for
    a batch. ``k_g`` is ``None`` for the thermal-only variant.
    """
    cfg = model.config
    x = np.asarray(frames, dtype=np.float64)
    batched = x.ndim == 4
    xb = x if batched else x[None]
    expected = (cfg.n_frames, cfg.input_h, cfg.input_w)
    if xb.ndim != 4 or xb.shape[1:] != expected:
        raise T.ShapeError(f"frames must be {expected} (optionally batched), got {x.shape}")
    p = model.params

    cols1 = T.im2col(xb)
    conv1_pre = T.conv2d_forward(xb, p["conv1.w"], p["conv1.b"], cols=cols1)
    conv1_act = T.relu(conv1_pre)
    pooled, pool_idx = T.maxpool2_forward(conv1_act)
    cols2 = T.im2col(pooled)
    conv2_pre = T.conv2d_forward(pooled, p["conv2.w"], p["conv2.b"], cols=cols2)
    flat = T.relu(conv2_pre).reshape(xb.shape[0], -1)

    fc1_pre = T.dense_forward(flat, p["fc1.w"], p["fc1.b"])
    fc1_act = T.relu(fc1_pre)
    fc2_pre = T.dense_forward(fc1_act, p["fc2.w"], p["fc2.b"])
    fc2_act = T.relu(fc2_pre)
    y_th = T.dense_forward(fc2_act, p["out.w"], p["out.b"])[:, 0]

    kg_pre = kg_act = k_g = None
    if cfg.fusion:
        kg_pre = T.dense_forward(flat, p["kg_fc.w"], p["kg_fc.b"])
        kg_act = T.relu(kg_pre)
        k_g = T.sigmoid(T.dense_forward(kg_act, p["kg_out.w"], p["kg_out.b"])[:, 0])

    if not batched:
        y_th = y_th[0]
        k_g = None if k_g is None else k_g[0]
    return ForwardTrace(
        xb, cols1, conv1_pre, conv1_act, pool_idx, pooled, cols2, conv2_pre, flat, fc1_pre, fc1_act,
        fc2_pre, fc2_act, y_th, kg_pre, kg_act, k_g, batched, cfg.variant,
    )


def fuse(y_th, k_g, y_gy):
    """Convex blend of the thermal estimate and the gyro average."""
    return k_g * y_th + (1.0 - k_g) * y_gy


def fusion_upstream(trace: ForwardTrace, y_gy, d_y_fus) -> tuple[np.ndarray, np.ndarray]:
    """Split dL/dy_fus into (dL/dy_th, dL/dk_g); the gyro average is a constant."""
    d_y_th = trace.k_g * d_y_fus
    d_k_g = (trace.y_th - y_gy) * d_y_fus
    return d_y_th, d_k_g


def backward(model: FusionModel, trace: ForwardTrace, d_y_th, d_k_g=None) -> np.ndarray:
    """Gradients of all parameters as one flat vector (views via ``model.shapes``).

    Batch gradients are summed over samples.
    """
    cfg = model.config
    if trace.variant != cfg.variant or trace.x.shape[1:] != (cfg.n_frames, cfg.input_h, cfg.input_w):
        raise T.ShapeError("trace was not produced by a model with this configuration")
    p = model.params
    grad, g = model.empty_like_params()
    b = trace.x.shape[0]
    d_y_th = np.asarray(d_y_th, dtype=np.float64).reshape(b, 1)

    lg = T.dense_backward(trace.fc2_act, p["out.w"], d_y_th)
    g["out.w"][...], g["out.b"][...] = lg.d_weights, lg.d_bias
    d = T.relu_backward(trace.fc2_pre, lg.d_input)
    lg = T.dense_backward(trace.fc1_act, p["fc2.w"], d)
    g["fc2.w"][...], g["fc2.b"][...] = lg.d_weights, lg.d_bias
    d = T.relu_backward(trace.fc1_pre, lg.d_input)
    lg = T.dense_backward(trace.flat, p["fc1.w"], d)
    g["fc1.w"][...], g["fc1.b"][...] = lg.d_weights, lg.d_bias
    d_flat = lg.d_input

    if cfg.fusion:
        if d_k_g is None:
            d_k_g = np.zeros(b)
        d_k_g = np.asarray(d_k_g, dtype=np.float64).reshape(b)
        k_g = np.asarray(trace.k_g).reshape(b)
        d_z = T.sigmoid_backward(k_g, d_k_g).reshape(b, 1)
        lg = T.dense_backward(trace.kg_act, p["kg_out.w"], d_z)
        g["kg_out.w"][...], g["kg_out.b"][...] = lg.d_weights, lg.d_bias
        d = T.relu_backward(trace.kg_pre, lg.d_input)
        lg = T.dense_backward(trace.flat, p["kg_fc.w"], d)
        g["kg_fc.w"][...], g["kg_fc.b"][...] = lg.d_weights, lg.d_bias
        d_flat = d_flat + lg.d_input

    d = T.relu_backward(trace.conv2_pre, d_flat.reshape(trace.conv2_pre.shape))
    lg = T.conv2d_backward(trace.pooled, p["conv2.w"], d, cols=trace.cols2)
    g["conv2.w"][...], g["conv2.b"][...] = lg.d_weights, lg.d_bias
    d = T.maxpool2_backward(trace.pool_idx, lg.d_input)
    d = T.relu_backward(trace.conv1_pre, d)
    lg = T.conv2d_backward(trace.x, p["conv1.w"], d, need_input=False, cols=trace.cols1)
    g["conv1.w"][...], g["conv1.b"][...] = lg.d_weights, lg.d_bias
    return grad


# --------------------------------------------------------------------------
# complexity accounting
# --------------------------------------------------------------------------


def _layer_table(config: ModelConfig) -> list[tuple[str, int, int]]:
    """(layer, params, MACs) for one forward pass, padded windows counted in full."""
    k2 = T.KERNEL * T.KERNEL
    h, w = config.input_h, config.input_w
    ph, pw = config.pooled_hw
    flat = config.flat_features
    rows = [
        ("conv1", CONV1_FILTERS * k2 * config.n_frames + CONV1_FILTERS,
         CONV1_FILTERS * h * w * k2 * config.n_frames),
        ("conv2", CONV2_FILTERS * k2 * CONV1_FILTERS + CONV2_FILTERS,
         CONV2_FILTERS * ph * pw * k2 * CONV1_FILTERS),
        ("fc1", flat * FC1_UNITS + FC1_UNITS, flat * FC1_UNITS),
        ("fc2", FC1_UNITS * FC2_UNITS + FC2_UNITS, FC1_UNITS * FC2_UNITS),
        ("out", FC2_UNITS + 1, FC2_UNITS),
    ]
    if config.fusion:
        rows += [
            ("kg_fc", flat * KG_UNITS + KG_UNITS, flat * KG_UNITS),
            ("kg_out", KG_UNITS + 1, KG_UNITS),
        ]
    return rows


def count_params(config: ModelConfig) -> dict[str, int]:
    counts = {name: n for name, n, _ in _layer_table(config)}
    counts["total"] = sum(counts.values())
    return counts


def count_flops(config: ModelConfig) -> dict[str, int]:
    """Forward FLOPs per layer (one multiply-accumulate = 2 FLOPs)."""
    counts = {name: 2 * macs for name, _, macs in _layer_table(config)}
    counts["total"] = sum(counts.values())
    return counts


# --------------------------------------------------------------------------
# weight files: one JSON header line, then little-endian float64 payload
# --------------------------------------------------------------------------


def save_weights(model: FusionModel, path) -> None:
    header = {
        "format": WEIGHTS_FORMAT,
        "config": asdict(model.config),
        "layers": [{"name": n, "shape": list(s)} for n, s in model.shapes],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(model.flat.astype("<f8").tobytes())


def load_weights(path) -> FusionModel:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ConfigError(f"{path}: missing weight header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: unreadable weight header ({exc})") from None
    if not isinstance(header, dict) or header.get("format") != WEIGHTS_FORMAT:
        fmt = header.get("format") if isinstance(header, dict) else None
        raise ConfigError(f"{path}: unsupported weight format {fmt!r}")
    try:
        config = ModelConfig(**header["config"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: bad model config in header ({exc})") from None
    expected = [{"name": n, "shape": list(s)} for n, s in layer_shapes(config)]
    if header.get("layers") != expected:
        raise ConfigError(f"{path}: layer table does not match config {config}")
    payload = raw[nl + 1 :]
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    model = FusionModel(config, flat)
    if not np.all(np.isfinite(model.flat)):
        raise ConfigError(f"{path}: non-finite parameters")
    return model
