"""Sine-activated MLP velocity field over space and circle-encoded time.

The model maps a batch of positions in the normalized cube plus one time
value to one 3-D velocity per position.  With time encoding enabled the
time enters as a point on the unit circle, which makes the field exactly
periodic; with encoding disabled the raw time is appended instead (the
non-periodic ablation mode).
"""
from __future__ import annotations

import json
import math
import struct
import warnings

import numpy as np

from . import autodiff as ad
from .errors import FormatError

CHECKPOINT_MAGIC = b"NFCKPT01"

# positions may drift past the nominal [-1,1] cube during integration; the
# MLP is defined everywhere, so evaluation proceeds with a logged warning
DOMAIN_SLACK = 1.5


def encode_time(t: float, period: float) -> tuple[float, float]:
    """Map a time value onto the unit circle: (cos, sin) of 2*pi*t/period.

    The time is wrapped by ``fmod`` before the angle is formed, so t and
    t mod period produce bit-identical output and t = period lands exactly
    on (1, 0).
    """
    if period <= 0:
        raise ValueError("period must be positive")
    frac = math.fmod(float(t), period)
    if frac < 0.0:
        frac += period
    angle = 2.0 * math.pi * frac / period
    return math.cos(angle), math.sin(angle)


class VelocityFieldModel:
    """MLP with sine activations on every hidden layer and a linear output.

    Weights and biases are held as autodiff leaf nodes so the optimizer can
    update them in place; a model evaluated outside a recording tape is a
    pure function and safe for concurrent use.
    """

    def __init__(self, weights, biases, omega, period=1.0, time_encoding=True):
        if len(weights) != len(biases) or len(weights) < 2:
            raise ValueError("need at least one hidden layer and one output layer")
        expected_in = 5 if time_encoding else 4
        if weights[0].shape[0] != expected_in:
            raise ValueError(
                f"first layer expects input width {expected_in}, got {weights[0].shape[0]}"
            )
        if weights[-1].shape[1] != 3:
            raise ValueError("output layer must produce 3 velocity components")
        for w, b in zip(weights, biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias width must match layer output width")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("model weights must be finite")
        if omega <= 0:
            raise ValueError("omega must be positive")
        self.weights = [ad.Node(np.asarray(w)) for w in weights]
        self.biases = [ad.Node(np.asarray(b)) for b in biases]
        self.omega = float(omega)
        self.period = float(period)
        self.time_encoding = bool(time_encoding)

    @property
    def layer_sizes(self):
        return [self.weights[0].value.shape[0]] + [w.value.shape[1] for w in self.weights]

    @property
    def dtype(self):
        return self.weights[0].value.dtype

    @property
    def parameters(self):
        """All trainable leaves, in a fixed order."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def __call__(self, points, t: float) -> ad.Node:
        """Velocity at a batch of positions (B,3) at one time value."""
        pts = points if isinstance(points, ad.Node) else ad.constant(points)
        if pts.value.ndim != 2 or pts.value.shape[1] != 3:
            raise ValueError(f"points must have shape (B,3), got {pts.value.shape}")
        if not np.isfinite(pts.value).all():
            raise ValueError("non-finite input positions")
        if np.abs(pts.value).max(initial=0.0) > DOMAIN_SLACK:
            warnings.warn(
                "evaluating velocity field outside the slack domain cube",
                RuntimeWarning,
            )
        n = pts.value.shape[0]
        dt = self.dtype
        if self.time_encoding:
            c, s = encode_time(t, self.period)
            tcols = np.empty((n, 2), dtype=dt)
            tcols[:, 0] = c
            tcols[:, 1] = s
        else:
            tcols = np.full((n, 1), t, dtype=dt)
        h = ad.concat_cols(pts, ad.constant(tcols))
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = ad.sin_activation(ad.affine(h, w, b), self.omega)
        return ad.affine(h, self.weights[-1], self.biases[-1])


def init_weights(seed: int, layer_sizes, omega: float, period: float = 1.0,
                 time_encoding: bool = True, dtype=np.float32) -> VelocityFieldModel:
    """Build a model with the sine-network initialization scheme.

    First layer uniform(-1/fan_in, 1/fan_in); every later layer
    uniform(-sqrt(6/fan_in)/omega, sqrt(6/fan_in)/omega).  Biases start at
    zero.  Deterministic for a given seed.
    """
    sizes = list(layer_sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if i == 0:
            bound = 1.0 / fan_in
        else:
            bound = math.sqrt(6.0 / fan_in) / omega
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        weights.append(w.astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return VelocityFieldModel(weights, biases, omega, period, time_encoding)


def default_layer_sizes(hidden_layers: int = 3, hidden_width: int = 256,
                        time_encoding: bool = True):
    in_dim = 5 if time_encoding else 4
    return [in_dim] + [hidden_width] * hidden_layers + [3]


def velocity(model: VelocityFieldModel, points, t: float) -> np.ndarray:
    """Plain-array forward pass (no gradient bookkeeping needed by caller)."""
    return model(points, t).value


# ---------------------------------------------------------------------------
# checkpoint container: magic, u32-LE header length, UTF-8 JSON header, then
# per layer the weight matrix followed by the bias vector as f32 little-endian


def save_checkpoint(model: VelocityFieldModel, path):
    header = {
        "layer_sizes": model.layer_sizes,
        "omega": model.omega,
        "period": model.period,
        "time_encoding": model.time_encoding,
        "endian": "little",
        "dtype": "f32le",
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w.value, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b.value, dtype="<f4").tobytes())


def load_checkpoint(path) -> VelocityFieldModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic at offset 0")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", data[8:12])
    if len(data) < 12 + hlen:
        raise FormatError(f"{path}: truncated header payload")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from exc
    if header.get("dtype") != "f32le" or header.get("endian") != "little":
        raise FormatError(f"{path}: unsupported weight encoding")
    sizes = header["layer_sizes"]
    offset = 12 + hlen
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        wbytes = fan_in * fan_out * 4
        if offset + wbytes + fan_out * 4 > len(data):
            raise FormatError(f"{path}: truncated weight payload at offset {offset}")
        w = np.frombuffer(data[offset:offset + wbytes], dtype="<f4").reshape(fan_in, fan_out)
        offset += wbytes
        b = np.frombuffer(data[offset:offset + fan_out * 4], dtype="<f4")
        offset += fan_out * 4
        weights.append(w.copy())
        biases.append(b.copy())
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes after weights")
    return VelocityFieldModel(
        weights, biases,
        omega=header["omega"],
        period=header["period"],
        time_encoding=header["time_encoding"],
    )
