"""4D image container, differentiable trilinear sampling, coordinate
normalization, the synthetic breathing-sphere generator, and V4D file I/O.

Conventions: a frame is stored as a (D,H,W) float32 array indexed
``frame[iz, iy, ix]``; ``spacing`` and ``origin`` are in world-axis order
(x, y, z).  The world position of voxel (ix,iy,iz) is
``origin + (ix*sx, iy*sy, iz*sz)``.  Frame times are normalized so a full
cycle spans [0, 1].
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import FormatError, ValidationError
from .mesh import TriangleMesh, icosphere

V4D_MAGIC = b"V4DVOL01"


@dataclass
class Volume4D:
    """A time series of co-registered scalar 3D grids over one cycle."""

    frames: np.ndarray       # (N, D, H, W) float32
    spacing: tuple           # (sx, sy, sz) mm per voxel
    origin: tuple            # (ox, oy, oz) world mm of voxel (0,0,0)
    frame_times: np.ndarray  # (N,) normalized, strictly increasing, 0 .. 1

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        self.frame_times = np.asarray(self.frame_times, dtype=np.float64)
        self.validate()

    def validate(self):
        if self.frames.ndim != 4:
            raise ValidationError(f"frames must be (N,D,H,W), got {self.frames.shape}")
        n, d, h, w = self.frames.shape
        if n < 2:
            raise ValidationError("need at least 2 frames")
        if min(d, h, w) < 2:
            raise ValidationError("each grid axis needs at least 2 voxels")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValidationError(f"spacing must be 3 positive values, got {self.spacing}")
        if len(self.origin) != 3:
            raise ValidationError("origin must have 3 components")
        if self.frame_times.shape != (n,):
            raise ValidationError("frame_times length must match frame count")
        if not np.all(np.diff(self.frame_times) > 0):
            raise ValidationError("frame_times must be strictly increasing")
        if self.frame_times[0] != 0.0 or self.frame_times[-1] != 1.0:
            raise ValidationError("frame_times must start at 0 and end at 1")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def grid_shape(self):
        """(D, H, W) voxel counts."""
        return self.frames.shape[1:]

    @property
    def period(self) -> float:
        return float(self.frame_times[-1])

    def world_bounds(self):
        """(lo, hi) world-mm corners of the voxel-center bounding box."""
        d, h, w = self.grid_shape
        counts = np.array([w, h, d], dtype=np.float64)  # world-axis order
        lo = np.asarray(self.origin, dtype=np.float64)
        hi = lo + (counts - 1) * np.asarray(self.spacing, dtype=np.float64)
        return lo, hi


class DomainNormalizer:
    """Linear map between world mm and the centered cube [-1,1]^3."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if self.lo.shape != (3,) or self.hi.shape != (3,):
            raise ValueError("bounds must be 3-vectors")
        if not np.all(self.hi > self.lo):
            raise ValueError("upper bound must exceed lower bound on every axis")
        self.half = (self.hi - self.lo) / 2.0
        self.center = (self.hi + self.lo) / 2.0

    @classmethod
    def from_volume(cls, volume: Volume4D) -> "DomainNormalizer":
        return cls(*volume.world_bounds())

    def to_normalized(self, world) -> np.ndarray:
        return (np.asarray(world, dtype=np.float64) - self.center) / self.half

    def to_world(self, norm) -> np.ndarray:
        return np.asarray(norm, dtype=np.float64) * self.half + self.center


# ---------------------------------------------------------------------------
# trilinear sampling


def _trilinear_kernel(frame, pts, want_grad):
    """Interpolate one frame at normalized points (B,3) in x,y,z order.

    Returns (values, grads) where grads is d(value)/d(normalized point),
    or None when not requested.  Sampling clamps to the border; the
    gradient is exactly zero for coordinates outside the grid.
    """
    d, h, w = frame.shape
    n = np.array([w, h, d], dtype=np.float64)  # voxel counts in x,y,z order
    u = (np.asarray(pts) + 1.0) * 0.5 * (n - 1.0)
    inside = (u >= 0.0) & (u <= n - 1.0)
    uc = np.clip(u, 0.0, n - 1.0)
    i0 = np.minimum(uc.astype(np.int64), (n - 2.0).astype(np.int64))
    f = uc - i0
    ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]

    c000 = frame[iz, iy, ix]
    c100 = frame[iz, iy, ix + 1]
    c010 = frame[iz, iy + 1, ix]
    c110 = frame[iz, iy + 1, ix + 1]
    c001 = frame[iz + 1, iy, ix]
    c101 = frame[iz + 1, iy, ix + 1]
    c011 = frame[iz + 1, iy + 1, ix]
    c111 = frame[iz + 1, iy + 1, ix + 1]

    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    values = c0 * (1 - fz) + c1 * fz

    if not want_grad:
        return values, None

    dvdx = ((c100 - c000) * (1 - fy) + (c110 - c010) * fy) * (1 - fz) \
        + ((c101 - c001) * (1 - fy) + (c111 - c011) * fy) * fz
    dvdy = (c10 - c00) * (1 - fz) + (c11 - c01) * fz
    dvdz = c1 - c0
    grads = np.stack([dvdx, dvdy, dvdz], axis=1)
    grads *= (n - 1.0) * 0.5
    grads *= inside
    return values, grads


def sample_trilinear(frame, points) -> np.ndarray:
    """Trilinear intensities of one (D,H,W) frame at normalized points (B,3)."""
    pts = np.atleast_2d(np.asarray(points))
    if not np.isfinite(pts).all():
        raise ValueError("non-finite sample point")
    values, _ = _trilinear_kernel(frame, pts, want_grad=False)
    return values


def sample_trilinear_with_grad(frame, points):
    """Like sample_trilinear, also returning d(value)/d(point) as (B,3)."""
    pts = np.atleast_2d(np.asarray(points))
    if not np.isfinite(pts).all():
        raise ValueError("non-finite sample point")
    return _trilinear_kernel(frame, pts, want_grad=True)


def gather_trilinear(frame, points: ad.Node) -> ad.Node:
    """Differentiable gather: intensities as a (B,) node, gradient flows to
    the sample points (the frame itself is data, never differentiated)."""
    if not np.isfinite(points.value).all():
        raise ValueError("non-finite sample point")
    if not ad._tracing():
        values, _ = _trilinear_kernel(frame, points.value, want_grad=False)
        return ad.Node(values)
    values, grads = _trilinear_kernel(frame, points.value, want_grad=True)

    def backward(g):
        points.grad += g[:, None] * grads

    return ad._record(ad.Node(values, (points,), backward))


# ---------------------------------------------------------------------------
# synthetic breathing-sphere series


@dataclass(frozen=True)
class GrowthPattern:
    """Radius schedule for the synthetic sphere: linear, exponential, or
    periodic (sinusoidal about the base radius, starting at the trough)."""

    kind: str
    base_radius_mm: float
    rate: float = 0.0           # linear / exponential growth rate
    amplitude_mm: float = 0.0   # sinusoid amplitude for the periodic kind
    period: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "exponential", "periodic"):
            raise ValueError(f"unknown growth kind {self.kind!r}")
        if self.base_radius_mm <= 0:
            raise ValueError("base radius must be positive")
        if self.period <= 0:
            raise ValueError("period must be positive")
        # radius must stay positive over the whole cycle
        if self.kind == "linear" and 1.0 + min(0.0, self.rate) <= 0:
            raise ValueError("linear rate drives the radius non-positive")
        if self.kind == "periodic" and abs(self.amplitude_mm) >= self.base_radius_mm:
            raise ValueError("periodic amplitude must stay below the base radius")


def radius_at(pattern: GrowthPattern, t: float) -> float:
    """Sphere radius in mm at normalized time t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0,1], got {t}")
    r0 = pattern.base_radius_mm
    if pattern.kind == "linear":
        r = r0 * (1.0 + pattern.rate * t)
    elif pattern.kind == "exponential":
        r = r0 * math.exp(pattern.rate * t)
    else:
        # wrap first so t=period reproduces t=0 bit-identically; the cycle
        # starts at the minimum radius (cyclic acquisitions are conventionally
        # phase-aligned to an extremum), so r0 is the cycle-mean radius
        frac = math.fmod(t, pattern.period)
        r = r0 - pattern.amplitude_mm * math.cos(2.0 * math.pi * frac / pattern.period)
    if r <= 0:
        raise ValueError(f"non-positive radius {r} at t={t}")
    return r


def make_sphere_series(pattern: GrowthPattern, grid_shape, spacing,
                       n_frames: int, smoothing_mm: float | None = None,
                       origin=(0.0, 0.0, 0.0), subdivisions: int = 4):
    """Generate a soft-occupancy sphere sequence plus matching surface meshes.

    Each frame is 1 inside the sphere, 0 outside, with a linear ramp of the
    given width across the boundary (a hard mask would have zero
    interpolation gradient almost everywhere).  Returns (Volume4D, meshes).
    """
    if n_frames < 2:
        raise ValidationError("need at least 2 frames")
    if isinstance(grid_shape, int):
        grid_shape = (grid_shape, grid_shape, grid_shape)
    d, h, w = (int(v) for v in grid_shape)
    spacing = tuple(float(s) for s in (spacing if hasattr(spacing, "__len__")
                                       else (spacing, spacing, spacing)))
    sx, sy, sz = spacing
    if smoothing_mm is None:
        smoothing_mm = 2.0 * min(spacing)
    if smoothing_mm <= 0:
        raise ValueError("smoothing width must be positive")

    ox, oy, oz = (float(v) for v in origin)
    center = np.array([
        ox + (w - 1) * sx / 2.0,
        oy + (h - 1) * sy / 2.0,
        oz + (d - 1) * sz / 2.0,
    ])
    zz = oz + sz * np.arange(d, dtype=np.float64)[:, None, None]
    yy = oy + sy * np.arange(h, dtype=np.float64)[None, :, None]
    xx = ox + sx * np.arange(w, dtype=np.float64)[None, None, :]
    dist = np.sqrt((xx - center[0]) ** 2 + (yy - center[1]) ** 2 + (zz - center[2]) ** 2)

    times = np.linspace(0.0, 1.0, n_frames)
    radii = [radius_at(pattern, float(t)) for t in times]
    half_extent = min((w - 1) * sx, (h - 1) * sy, (d - 1) * sz) / 2.0
    if max(radii) + smoothing_mm / 2.0 > half_extent:
        raise ValidationError(
            f"sphere (max radius {max(radii):.3f} mm + ramp) exceeds grid bounds "
            f"(half extent {half_extent:.3f} mm)"
        )

    frames = np.empty((n_frames, d, h, w), dtype=np.float32)
    meshes = []
    for i, r in enumerate(radii):
        occupancy = np.clip((r + smoothing_mm / 2.0 - dist) / smoothing_mm, 0.0, 1.0)
        frames[i] = occupancy.astype(np.float32)
        meshes.append(icosphere(r, center=center, subdivisions=subdivisions))

    vol = Volume4D(frames, spacing, (ox, oy, oz), times)
    return vol, meshes


# ---------------------------------------------------------------------------
# V4D container: magic, u32-LE header length, UTF-8 JSON header, then the
# frames as little-endian float32 in x-fastest order


def write_v4d(volume: Volume4D, path):
    header = {
        "shape": [int(v) for v in volume.grid_shape],
        "spacing_mm": list(volume.spacing),
        "origin_mm": list(volume.origin),
        "frame_times": [float(t) for t in volume.frame_times],
        "dtype": "f32le",
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(V4D_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(volume.frames, dtype="<f4").tobytes())


def read_v4d(path) -> Volume4D:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != V4D_MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header length at offset 8")
    (hlen,) = struct.unpack("<I", data[8:12])
    if len(data) < 12 + hlen:
        raise FormatError(f"{path}: truncated header at offset 12")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from exc
    for key in ("shape", "spacing_mm", "origin_mm", "frame_times", "dtype"):
        if key not in header:
            raise FormatError(f"{path}: header missing {key!r}")
    if header["dtype"] != "f32le":
        raise FormatError(f"{path}: unsupported dtype {header['dtype']!r}")
    d, h, w = (int(v) for v in header["shape"])
    n = len(header["frame_times"])
    payload = data[12 + hlen:]
    expected = n * d * h * w * 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes at offset {12 + hlen}, "
            f"expected {expected}"
        )
    frames = np.frombuffer(payload, dtype="<f4").reshape(n, d, h, w).copy()
    return Volume4D(frames, header["spacing_mm"], header["origin_mm"],
                    header["frame_times"])
