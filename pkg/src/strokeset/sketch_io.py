"""Reading QuickDraw NDJSON and stroke-3, RDP simplification, and SVG export."""
from __future__ import annotations

import json
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .geometry import Sketch

FORMAT_VERSION = 1


class ParseError(ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


@dataclass
class ParseResult:
    sketches: list = field(default_factory=list)
    errors: list = field(default_factory=list)     # ParseError per rejected line

    def __iter__(self):
        return iter(self.sketches)

    def __len__(self):
        return len(self.sketches)


def _record_to_sketch(record, lineno):
    if not isinstance(record, dict) or "drawing" not in record:
        raise ParseError(lineno, "record has no 'drawing' field")
    strokes = []
    for k, stroke in enumerate(record["drawing"]):
        if not isinstance(stroke, list) or len(stroke) < 2:
            raise ParseError(lineno, f"stroke {k} is not an [xs, ys] pair")
        xs, ys = stroke[0], stroke[1]
        if len(xs) != len(ys) or len(xs) == 0:
            raise ParseError(lineno, f"stroke {k} has mismatched or empty coordinate arrays")
        pts = np.column_stack([np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)])
        if not np.isfinite(pts).all():
            raise ParseError(lineno, f"stroke {k} has non-finite coordinates")
        strokes.append(pts)
    source = record.get("key_id", record.get("source_id", f"line{lineno}"))
    label = record.get("word", record.get("label"))
    return Sketch(strokes, str(source), label)


def parse_quickdraw_ndjson(data):
    """Parse QuickDraw NDJSON bytes (or text).  Bad lines are collected, not raised."""
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    result = ParseResult()
    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            result.errors.append(ParseError(lineno, f"invalid JSON ({exc.msg})"))
            continue
        try:
            result.sketches.append(_record_to_sketch(record, lineno))
        except ParseError as exc:
            result.errors.append(exc)
        except (TypeError, ValueError) as exc:
            result.errors.append(ParseError(lineno, str(exc)))
    return result


def parse_stroke3(rows, source_id="", label=None):
    """Absolute strokes from (dx, dy, pen) rows; pen=1 ends the current stroke."""
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, 3) if len(rows) else np.zeros((0, 3))
    pen = rows[:, 2]
    if not np.isin(pen, (0.0, 1.0)).all():
        raise ValueError("pen values must be 0 or 1")
    xy = np.cumsum(rows[:, :2], axis=0)
    strokes, start = [], 0
    for i in np.flatnonzero(pen == 1.0):
        strokes.append(xy[start:i + 1])
        start = i + 1
    if start < len(rows):
        strokes.append(xy[start:])
    return Sketch(strokes, source_id, label)


def to_stroke3(sketch):
    """Inverse of :func:`parse_stroke3` (the first offset is taken from the origin)."""
    rows, prev = [], np.zeros(2)
    for s in sketch.strokes:
        for j, p in enumerate(s):
            d = p - prev
            rows.append((d[0], d[1], 1.0 if j == len(s) - 1 else 0.0))
            prev = p
    return np.asarray(rows).reshape(-1, 3)


def sketch_to_record(sketch):
    return {
        "source_id": sketch.source_id,
        "word": sketch.label,
        "drawing": [[s[:, 0].tolist(), s[:, 1].tolist()] for s in sketch.strokes],
    }


def dump_ndjson(sketches, kind="sketches"):
    """Canonical NDJSON with a format header comment line."""
    lines = [f"# strokeset-{kind} v{FORMAT_VERSION}"]
    lines += [json.dumps(sketch_to_record(s), separators=(",", ":")) for s in sketches]
    return "\n".join(lines) + "\n"


def check_header(text, kind):
    first = text.split("\n", 1)[0]
    m = re.fullmatch(r"# strokeset-(\S+) v(\d+)", first.strip())
    if not m:
        return False
    if m.group(1) != kind or int(m.group(2)) != FORMAT_VERSION:
        raise ValueError(f"expected strokeset-{kind} v{FORMAT_VERSION}, found {first.strip()!r}")
    return True


# ------------------------------------------------------------------ RDP


def _point_segment_distance(p, a, b):
    d = b - a
    dd = float(d @ d)
    t = 0.0 if dd == 0.0 else min(1.0, max(0.0, float((p - a) @ d) / dd))
    return float(np.hypot(*(p - (a + t * d))))


def rdp_simplify(polyline, epsilon):
    """Ramer-Douglas-Peucker with exact point-to-segment distances.

    Keeps both endpoints; an interior point is dropped only when its distance
    to the chord it is replaced by is at most ``epsilon``.
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    pts = np.asarray(polyline, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3:
        return pts.copy()
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        first, last = stack.pop()
        if last - first < 2:
            continue
        dists = [_point_segment_distance(pts[i], pts[first], pts[last]) for i in range(first + 1, last)]
        k = int(np.argmax(dists))
        if dists[k] > epsilon:
            idx = first + 1 + k
            keep[idx] = True
            stack.append((first, idx))
            stack.append((idx, last))
    return pts[keep]


def simplify_sketch(sketch, epsilon):
    return Sketch([rdp_simplify(s, epsilon) if len(s) >= 2 else s.copy() for s in sketch.strokes],
                  sketch.source_id, sketch.label)


# ------------------------------------------------------------------ SVG


def _fmt(v):
    return f"{v:.6f}"


def export_svg(sketch, stroke_width=2.0, canvas=256):
    """SVG 1.1 with one <path> per stroke; [-1, 1] maps onto the pixel canvas."""
    if canvas <= 0:
        raise ValueError("canvas must be positive")
    for s in sketch.strokes:
        if not np.isfinite(s).all():
            raise ValueError("cannot export non-finite coordinates")
    half = canvas / 2.0
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f"<!-- strokeset-svg v{FORMAT_VERSION} -->",
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{canvas}" height="{canvas}" '
        f'viewBox="0 0 {canvas} {canvas}">',
        f'<g fill="none" stroke="black" stroke-width="{stroke_width:g}" stroke-linecap="round" '
        'stroke-linejoin="round">',
    ]
    for s in sketch.strokes:
        if len(s) == 0:
            continue
        px = (s + 1.0) * half
        cmds = [f"M {_fmt(px[0, 0])} {_fmt(px[0, 1])}"]
        tail = px[1:] if len(px) > 1 else px[:1]   # a dot becomes a zero-length line
        cmds += [f"L {_fmt(x)} {_fmt(y)}" for x, y in tail]
        out.append(f'<path d="{" ".join(cmds)}"/>')
    out += ["</g>", "</svg>"]
    return "\n".join(out) + "\n"


_CMD = re.compile(r"([ML])\s*([-+0-9.eE]+)[\s,]+([-+0-9.eE]+)")


def parse_svg_paths(text):
    """Read back the strokes written by :func:`export_svg` into [-1, 1] space."""
    root = ET.fromstring(text.split("\n", 1)[1] if text.startswith("<?xml") else text)
    canvas = float(root.get("width"))
    half = canvas / 2.0
    strokes = []
    for el in root.iter():
        if el.tag.endswith("path"):
            pts = [(float(x), float(y)) for _, x, y in _CMD.findall(el.get("d", ""))]
            strokes.append(np.asarray(pts) / half - 1.0)
    return Sketch(strokes)


def stroke_count_percentile(sketches, q=99.0):
    counts = [len(s.strokes) for s in sketches]
    return int(math.ceil(np.percentile(counts, q))) if counts else 0
