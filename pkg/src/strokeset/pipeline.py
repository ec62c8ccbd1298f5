"""Latent sampling to finished sketches, dataset encoding, and stroke interpolation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as G
from .diffusion import p_sample_loop, prepare_training_sequence
from .geometry import BBox, Sketch

BOX_MIN = 1e-4


@dataclass
class GeneratedSketch:
    sketch: Sketch
    seed: int | None = None
    cond: int | None = None
    boxes: list = field(default_factory=list)
    rows: np.ndarray | None = None

    @property
    def strokes(self):
        return self.sketch.strokes


def check_compatible(ae, diff):
    if ae.cfg.d_f != diff.cfg.d_latent:
        raise ValueError(f"encoder latent width {ae.cfg.d_f} != diffusion latent width {diff.cfg.d_latent}")


def sanitize_box(box):
    """Clamp extents to [1e-4, 1] and the center to [0, 1]."""
    x, y, w, h = np.asarray(box, dtype=np.float64)
    return BBox(float(np.clip(x, 0.0, 1.0)), float(np.clip(y, 0.0, 1.0)),
                float(np.clip(w, BOX_MIN, 1.0)), float(np.clip(h, BOX_MIN, 1.0)))


def rows_to_sketch(ae, diff, rows, stroke_norm=True):
    """Split rows, keep strictly positive visibility, decode and place each stroke."""
    z, boxes, vis = diff.split_latent(rows)
    keep = np.flatnonzero(vis > 0.0)
    strokes, kept_boxes = [], []
    if len(keep):
        pts = ae.decode_points(z[keep])[..., :2]
        for p, i in zip(pts, keep):
            box = sanitize_box(boxes[i]) if stroke_norm else G.IDENTITY_BOX
            strokes.append(G.denormalize_stroke(p, box))
            kept_boxes.append(box)
    return Sketch(strokes), kept_boxes


def generate(ae, diff, seeds, cond=None, stroke_norm=None):
    """One :class:`GeneratedSketch` per seed."""
    check_compatible(ae, diff)
    if stroke_norm is None:
        stroke_norm = diff.cfg.stroke_norm
    seeds = [int(s) for s in seeds]
    x0, _ = p_sample_loop(diff, seeds, cond)
    out = []
    for s, rows in zip(seeds, x0):
        sketch, boxes = rows_to_sketch(ae, diff, rows, stroke_norm)
        sketch.source_id = f"seed{s}"
        out.append(GeneratedSketch(sketch, s, cond, boxes, rows))
    return out


def snapshot_trajectory(ae, diff, seed, timesteps, cond=None, stroke_norm=None):
    """Decoded intermediate states; entry t is the state right after the update at step t."""
    check_compatible(ae, diff)
    if stroke_norm is None:
        stroke_norm = diff.cfg.stroke_norm
    _, snaps = p_sample_loop(diff, [seed], cond, snapshot_steps=timesteps)
    out = []
    for t in timesteps:
        sketch, boxes = rows_to_sketch(ae, diff, snaps[int(t)][0], stroke_norm)
        sketch.source_id = f"seed{seed}-t{int(t)}"
        out.append(GeneratedSketch(sketch, seed, cond, boxes, snaps[int(t)][0]))
    return out


def interpolate_strokes(ae, z_a, z_b, steps):
    """Decode ``steps`` evenly spaced latents from z_a to z_b, endpoints included."""
    if steps < 2:
        raise ValueError(f"interpolation needs at least 2 steps, got {steps}")
    z_a = np.asarray(z_a, dtype=np.float64).ravel()
    z_b = np.asarray(z_b, dtype=np.float64).ravel()
    w = np.linspace(0.0, 1.0, steps)[:, None]
    zs = (1.0 - w) * z_a + w * z_b
    return list(ae.decode_points(zs)[..., :2])


@dataclass
class StrokeTable:
    """Every stroke of a dataset, flattened, with the index of its owning sketch."""

    points: np.ndarray          # (M, N_p, 2) encoder-space points
    boxes: np.ndarray           # (M, 4) unit-space boxes
    fields: np.ndarray | None   # (M, R, R)
    owner: np.ndarray           # (M,)
    n_sketches: int
    stroke_norm: bool = True


def build_stroke_table(sketches, n_points=64, resolution=64, gamma=50.0, margin_scale=0.8,
                       stroke_norm=True, with_fields=True):
    """Resample, normalize and (optionally) render every stroke of already normalized sketches.

    With ``stroke_norm`` off the strokes stay in unit space and every box is the
    identity box, so the encoder sees raw positions and no box conditioning.
    """
    pts, boxes, fields, owner = [], [], [], []
    for i, sk in enumerate(sketches):
        for s in sk.strokes:
            if not len(s):
                continue
            r = G.resample_stroke(s, n_points)
            if stroke_norm:
                local, box = G.normalize_stroke(r)
            else:
                local, box = G.to_unit(r), G.IDENTITY_BOX
            pts.append(local)
            boxes.append(box.as_array())
            if with_fields:
                fields.append(G.render_udf(local, gamma, resolution, margin_scale).values)
            owner.append(i)
    return StrokeTable(np.asarray(pts, dtype=np.float64).reshape(-1, n_points, 2),
                       np.asarray(boxes, dtype=np.float64).reshape(-1, 4),
                       np.asarray(fields).reshape(-1, resolution, resolution) if with_fields else None,
                       np.asarray(owner, dtype=np.int64), len(sketches), stroke_norm)


def encode_table(ae, table, batch=64):
    """Posterior means for every stroke in the table."""
    if len(table.points) == 0:
        return np.zeros((0, ae.cfg.d_f))
    use_fields = ae.cfg.image_branch
    if use_fields and table.fields is None:
        raise ValueError("encoder has an image branch but the stroke table has no fields")
    out = []
    for k in range(0, len(table.points), batch):
        f = table.fields[k:k + batch] if use_fields else None
        out.append(ae.encode_mean(table.points[k:k + batch], f)[0])
    return np.concatenate(out)


def pack_latents(z, boxes, owner, n_sketches, max_strokes, v_mag=0.1):
    """Composite rows (S, N_s, d+5) and per-sketch stroke counts."""
    z = np.asarray(z, dtype=np.float64)
    d = z.shape[1]
    seqs = np.zeros((n_sketches, max_strokes, d + 5))
    counts = np.bincount(owner, minlength=n_sketches) if len(owner) else np.zeros(n_sketches, dtype=np.int64)
    for i in range(n_sketches):
        idx = np.flatnonzero(owner == i)
        if len(idx) > max_strokes:
            raise ValueError(f"sketch {i} has {len(idx)} strokes > max_strokes={max_strokes}")
        seqs[i] = prepare_training_sequence([(z[j], boxes[j]) for j in idx], max_strokes, v_mag, d)
    return seqs, counts


def encode_sketches(ae, sketches, max_strokes, v_mag=0.1, stroke_norm=True, gamma=50.0, margin_scale=0.8):
    """Normalized sketches -> (composite rows, stroke counts) through a frozen encoder."""
    cfg = ae.cfg
    table = build_stroke_table(sketches, cfg.n_points, cfg.resolution, gamma, margin_scale, stroke_norm,
                               with_fields=cfg.image_branch)
    z = encode_table(ae, table)
    return pack_latents(z, table.boxes, table.owner, len(sketches), max_strokes, v_mag)


def to_sketch_space(points, boxes):
    """Stroke-space (or unit-space, with identity boxes) points back onto the sketch canvas."""
    return np.stack([G.denormalize_stroke(p, b) for p, b in zip(points, boxes)]) if len(points) else \
        np.zeros((0,) + np.shape(points)[1:])


def reconstruct_table(ae, table, batch=64):
    """Posterior-mean round trip of every stroke, placed with its true box, in sketch space."""
    z = encode_table(ae, table, batch)
    pts = np.concatenate([ae.decode_points(z[k:k + batch])[..., :2] for k in range(0, len(z), batch)]) \
        if len(z) else np.zeros((0, ae.cfg.n_points, 2))
    return to_sketch_space(pts, table.boxes)


def reconstruction_error(ae, table):
    """Mean per-point distance between original and reconstructed strokes on the sketch canvas."""
    rec = reconstruct_table(ae, table)
    ref = to_sketch_space(table.points, table.boxes)
    return float(np.linalg.norm(rec - ref, axis=-1).mean())


def group_strokes(strokes, owner, n_sketches):
    out = [Sketch([]) for _ in range(n_sketches)]
    for s, i in zip(strokes, owner):
        out[int(i)].strokes.append(np.asarray(s))
    return out
