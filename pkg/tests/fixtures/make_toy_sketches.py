"""Regenerate toy_sketches.ndjson: 64 small QuickDraw-style drawings in 4 classes.

Coordinates are integer pixels on a 256 canvas like the public QuickDraw
simplified files.  Run from this directory: ``python make_toy_sketches.py``.
"""
import json

import numpy as np

rng = np.random.default_rng(1234)


def arc(cx, cy, rx, ry, a0, a1, n=12):
    t = np.linspace(a0, a1, n)
    return np.column_stack([cx + rx * np.cos(t), cy + ry * np.sin(t)])


def jitter(pts, s=2.0):
    return pts + rng.normal(0.0, s, size=pts.shape)


def face():
    r = rng.uniform(70, 100)
    strokes = [arc(128, 128, r, r * rng.uniform(0.9, 1.1), 0, 2 * np.pi, 20)]
    strokes.append(np.array([[128 - r * 0.4, 108.0], [128 - r * 0.35, 110.0]]))
    strokes.append(np.array([[128 + r * 0.35, 108.0], [128 + r * 0.4, 110.0]]))
    strokes.append(arc(128, 140, r * 0.45, r * 0.3, 0.2, np.pi - 0.2, 8))
    return strokes


def house():
    w, h = rng.uniform(100, 150), rng.uniform(80, 110)
    x0, y0 = 128 - w / 2, 200 - h
    body = np.array([[x0, y0], [x0, 200], [x0 + w, 200], [x0 + w, y0], [x0, y0]])
    roof = np.array([[x0 - 10, y0], [128, y0 - rng.uniform(50, 80)], [x0 + w + 10, y0]])
    strokes = [body, roof]
    if rng.random() < 0.7:
        strokes.append(np.array([[120, 200], [120, 165], [140, 165], [140, 200]]))
    return strokes


def star():
    k = 5
    r1, r2 = rng.uniform(80, 110), rng.uniform(30, 45)
    a = np.arange(2 * k + 1) * np.pi / k - np.pi / 2
    r = np.where(np.arange(2 * k + 1) % 2 == 0, r1, r2)
    return [np.column_stack([128 + r * np.cos(a), 128 + r * np.sin(a)])]


def tree():
    trunk = np.array([[120, 230], [120, 170], [136, 170], [136, 230]])
    crown = arc(128, 120, rng.uniform(50, 70), rng.uniform(45, 60), 0, 2 * np.pi, 16)
    strokes = [trunk, crown]
    for _ in range(rng.integers(0, 4)):
        cx, cy = rng.uniform(100, 156), rng.uniform(95, 140)
        strokes.append(arc(cx, cy, 5, 5, 0, 2 * np.pi, 6))
    return strokes


def record(i, word, strokes):
    drawing = []
    for s in strokes:
        s = np.clip(np.rint(jitter(s)), 0, 255).astype(int)
        drawing.append([s[:, 0].tolist(), s[:, 1].tolist()])
    return {"word": word, "key_id": f"toy{i:03d}", "recognized": True, "drawing": drawing}


def main():
    makers = [("face", face), ("house", house), ("star", star), ("tree", tree)]
    lines = []
    for i in range(64):
        word, fn = makers[i % 4]
        lines.append(json.dumps(record(i, word, fn()), separators=(",", ":")))
    with open("toy_sketches.ndjson", "w") as fh:
        fh.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
