"""Stroke resampling, two-stage normalization and unsigned-distance-field rendering.

Coordinate conventions
----------------------
* sketch space: the whole sketch fits ``[-1, 1]`` on its longer axis, y grows down.
* unit space: sketch space remapped by ``u = (s + 1) / 2`` into ``[0, 1]``; stroke
  bounding boxes are expressed here.
* stroke space: one stroke scaled isotropically so its longer side spans ``[0, 1]``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

BOX_EPS = 1e-6


@dataclass
class Sketch:
    """A sketch as a list of ``(n_i, 2)`` float arrays plus metadata."""

    strokes: list
    source_id: str = ""
    label: str | None = None

    def __post_init__(self):
        self.strokes = [np.asarray(s, dtype=np.float64).reshape(-1, 2) for s in self.strokes]

    @property
    def n_points(self):
        return sum(len(s) for s in self.strokes)

    def copy(self):
        return Sketch([s.copy() for s in self.strokes], self.source_id, self.label)


@dataclass(frozen=True)
class BBox:
    """Stroke box in unit space: center (x, y) and extent (w, h)."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @property
    def scale(self):
        return max(self.w, self.h)

    def as_array(self):
        return np.array([self.x, self.y, self.w, self.h])

    @classmethod
    def from_array(cls, arr):
        x, y, w, h = (float(v) for v in arr)
        return cls(x, y, w, h)


IDENTITY_BOX = BBox(0.5, 0.5, 1.0, 1.0)


@dataclass
class UdfField:
    values: np.ndarray
    gamma: float
    resolution: int = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.resolution = self.values.shape[0]


def resample_stroke(polyline, n):
    """``n`` points evenly spaced by arc length along ``polyline``, endpoints kept."""
    if n < 1:
        raise ValueError(f"resample count must be positive, got {n}")
    pts = np.asarray(polyline, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("cannot resample an empty polyline")
    seg = np.hypot(*np.diff(pts, axis=0).T)
    total = seg.sum()
    if len(pts) == 1 or total == 0.0:
        return np.repeat(pts[:1], n, axis=0)
    if n == 1:
        return pts[:1].copy()
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, total, n)
    # index of the segment containing each target; zero-length segments are skipped
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    seg_len = seg[idx]
    frac = np.divide(targets - cum[idx], seg_len, out=np.zeros(n), where=seg_len > 0)
    out = pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def normalize_sketch(sketch):
    """Center the sketch bbox at the origin and scale its longer side to [-1, 1]."""
    pts = np.concatenate([s for s in sketch.strokes if len(s)]) if sketch.n_points else None
    if pts is None:
        raise ValueError("sketch has no points")
    if not np.isfinite(pts).all():
        raise ValueError("sketch has non-finite coordinates")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = (lo + hi) / 2.0
    extent = (hi - lo).max()
    scale = 2.0 / extent if extent > 0 else 0.0
    return Sketch([(s - center) * scale for s in sketch.strokes], sketch.source_id, sketch.label)


def to_unit(points):
    return (np.asarray(points, dtype=np.float64) + 1.0) / 2.0


def from_unit(points):
    return np.asarray(points, dtype=np.float64) * 2.0 - 1.0


def stroke_box(unit_points):
    """Tight box of unit-space points with degenerate extents inflated."""
    pts = np.asarray(unit_points, dtype=np.float64).reshape(-1, 2)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    w, h = np.maximum(hi - lo, BOX_EPS)
    # anchor an inflated box at the minimum so the inverse map stays exact
    return BBox(float(lo[0] + w / 2), float(lo[1] + h / 2), float(w), float(h))


def normalize_stroke(stroke):
    """Map a sketch-space stroke into stroke space; returns (points, box)."""
    unit = to_unit(stroke)
    lo = unit.min(axis=0)
    box = stroke_box(unit)
    return (unit - lo) / box.scale, box


def denormalize_stroke(points, box):
    """Inverse of :func:`normalize_stroke`: stroke space -> sketch space."""
    if isinstance(box, BBox):
        x, y, w, h = box.x, box.y, box.w, box.h
    else:
        x, y, w, h = (float(v) for v in box)
    if not (w > 0 and h > 0):
        raise ValueError(f"box extents must be positive, got w={w}, h={h}")
    lo = np.array([x - w / 2.0, y - h / 2.0])
    return from_unit(np.asarray(points, dtype=np.float64) * max(w, h) + lo)


def cell_centers(resolution):
    c = (np.arange(resolution) + 0.5) / resolution
    gx, gy = np.meshgrid(c, c)          # row index = y, column index = x
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def segment_sq_distance(points, a, b):
    """Squared distance from each of ``points`` (P, 2) to each segment a_i b_i (S, 2).

    Returns (P, S).  The projection parameter is clamped to the segment so the
    result is the exact minimum over the closed segment.
    """
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    rel = points[:, None, :] - a[None, :, :]
    t = np.divide(np.einsum("psk,sk->ps", rel, d), dd, out=np.zeros((len(points), len(a))),
                  where=dd > 0)
    t = np.clip(t, 0.0, 1.0)
    diff = rel - t[..., None] * d[None, :, :]
    return np.einsum("psk,psk->ps", diff, diff)


def render_udf(stroke, gamma=50.0, resolution=64, margin_scale=0.8):
    """Unsigned distance field exp(-gamma * dist^2) of a stroke-space polyline.

    The stroke is shrunk by ``margin_scale`` about (0.5, 0.5) before sampling
    at cell centers.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    pts = np.asarray(stroke, dtype=np.float64).reshape(-1, 2)
    pts = 0.5 + (pts - 0.5) * margin_scale
    if len(pts) == 1:
        pts = np.concatenate([pts, pts])
    grid = cell_centers(resolution)
    a, b = pts[:-1], pts[1:]
    d2 = np.empty(len(grid))
    step = max(1, 2 ** 18 // len(a))     # bound the (cells x segments) block
    for start in range(0, len(grid), step):
        d2[start:start + step] = segment_sq_distance(grid[start:start + step], a, b).min(axis=1)
    return UdfField(np.exp(-gamma * d2).reshape(resolution, resolution), gamma)


def render_sketch_udf(sketch, gamma, resolution, margin_scale=0.8):
    """Max-composite of per-stroke fields for a sketch-space sketch drawn on the unit canvas."""
    out = np.zeros((resolution, resolution))
    for s in sketch.strokes:
        if len(s):
            out = np.maximum(out, render_udf(to_unit(s), gamma, resolution, margin_scale).values)
    return UdfField(out, gamma)


# ------------------------------------------------------------ field serialization


def udf_to_bytes(field):
    """Little-endian record: u32 R, f64 gamma, R*R f32 values (row-major)."""
    vals = np.ascontiguousarray(field.values, dtype="<f4")
    return struct.pack("<Id", field.resolution, float(field.gamma)) + vals.tobytes()


def udf_from_bytes(raw):
    if len(raw) < 12:
        raise ValueError("truncated UDF record")
    r, gamma = struct.unpack("<Id", raw[:12])
    body = raw[12:]
    if len(body) != 4 * r * r:
        raise ValueError(f"UDF record body has {len(body)} bytes, expected {4 * r * r}")
    return UdfField(np.frombuffer(body, dtype="<f4").reshape(r, r).astype(np.float64), gamma)


def udf_to_pgm(field):
    """Binary 16-bit PGM (P5, maxval 65535) quantization of the field.

    The top code maps exactly to 1.0; values are rounded to the nearest code.
    """
    r = field.resolution
    codes = np.rint(np.clip(field.values, 0.0, 1.0) * 65535.0).astype(">u2")
    return f"P5\n{r} {r}\n65535\n".encode("ascii") + codes.tobytes()


def udf_to_pgm8(field):
    """8-bit PGM for quick viewing; the stroke itself maps to 255."""
    r = field.resolution
    codes = np.rint(np.clip(field.values, 0.0, 1.0) * 255.0).astype(np.uint8)
    return f"P5\n{r} {r}\n255\n".encode("ascii") + codes.tobytes()


def read_pgm(raw):
    """Parse a binary P5 PGM into (array of codes, maxval)."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    body = raw[pos + 1:]
    dtype = ">u2" if maxval > 255 else np.uint8
    return np.frombuffer(body, dtype=dtype).reshape(h, w).astype(np.int64), maxval
