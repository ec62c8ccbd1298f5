import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from strokeset.geometry import Sketch
from strokeset.sketch_io import (check_header, dump_ndjson, export_svg, parse_quickdraw_ndjson, parse_stroke3,
                                 parse_svg_paths, rdp_simplify, simplify_sketch, stroke_count_percentile,
                                 to_stroke3)


def _seg_dist(p, a, b):
    d = b - a
    dd = d @ d
    t = 0.0 if dd == 0 else np.clip((p - a) @ d / dd, 0, 1)
    return np.hypot(*(p - a - t * d))


# ------------------------------------------------------------------ QuickDraw NDJSON


def test_quickdraw_single_line():
    res = parse_quickdraw_ndjson(b'{"word":"cat","drawing":[[[0,10],[0,0]]]}\n')
    assert len(res) == 1 and not res.errors
    np.testing.assert_array_equal(res.sketches[0].strokes[0], [(0, 0), (10, 0)])
    assert res.sketches[0].label == "cat"


def test_quickdraw_empty():
    assert len(parse_quickdraw_ndjson(b"")) == 0


def test_quickdraw_bad_line_reported_rest_parsed():
    good = json.dumps({"drawing": [[[1, 2], [3, 4]]], "key_id": "k"})
    data = ('{"drawing": [[[0,1],' + "\n" + good + "\n" + good + "\n").encode()
    res = parse_quickdraw_ndjson(data)
    assert len(res.sketches) == 2
    assert len(res.errors) == 1 and res.errors[0].line == 1
    assert "line 1" in str(res.errors[0])


def test_quickdraw_structural_errors():
    lines = ['{"nodrawing": 1}', '{"drawing": [[[0, 1], [0]]]}', '{"drawing": [[[0, 1], [0, 1]]]}']
    res = parse_quickdraw_ndjson("\n".join(lines))
    assert [e.line for e in res.errors] == [1, 2]
    assert len(res.sketches) == 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.lists(st.integers(0, 255), min_size=1, max_size=5), min_size=1, max_size=3),
                min_size=0, max_size=6))
def test_quickdraw_order_preserving(drawings):
    recs = [{"drawing": [[xs, xs[::-1]] for xs in d], "key_id": f"id{i}"} for i, d in enumerate(drawings)]
    res = parse_quickdraw_ndjson("\n".join(json.dumps(r) for r in recs))
    assert [s.source_id for s in res.sketches] == [f"id{i}" for i in range(len(recs))]
    for r, s in zip(recs, res.sketches):
        assert len(s.strokes) == len(r["drawing"])
        for (xs, ys), pts in zip(r["drawing"], s.strokes):
            np.testing.assert_array_equal(pts[:, 0], xs)
            np.testing.assert_array_equal(pts[:, 1], ys)


def test_dump_header_round_trip():
    sk = [Sketch([[(0, 0), (1, 2)]], "a", "cat"), Sketch([[(5, 5)]], "b", None)]
    text = dump_ndjson(sk)
    assert text.startswith("# strokeset-sketches v1\n")
    assert check_header(text, "sketches")
    back = parse_quickdraw_ndjson(text)
    assert [s.source_id for s in back.sketches] == ["a", "b"]
    with pytest.raises(ValueError):
        check_header(text.replace("v1", "v9"), "sketches")
    assert not check_header('{"drawing": []}', "sketches")


# ------------------------------------------------------------------ stroke-3


def test_stroke3_example():
    sk = parse_stroke3([(0, 0, 0), (1, 0, 1), (0, 1, 0), (1, 0, 1)])
    assert len(sk.strokes) == 2
    np.testing.assert_array_equal(sk.strokes[0], [(0, 0), (1, 0)])
    np.testing.assert_array_equal(sk.strokes[1], [(1, 1), (2, 1)])


def test_stroke3_single_point_and_empty():
    sk = parse_stroke3([(5, 5, 1)])
    np.testing.assert_array_equal(sk.strokes[0], [(5, 5)])
    assert parse_stroke3([]).strokes == []


def test_stroke3_rejects_bad_pen():
    with pytest.raises(ValueError):
        parse_stroke3([(0, 0, 2)])


@settings(max_examples=50, deadline=None)
@given(st.lists(arrays(np.float64, st.tuples(st.integers(1, 6), st.just(2)), elements=st.integers(-50, 50)),
                min_size=1, max_size=5))
def test_stroke3_round_trip(strokes):
    sk = Sketch(strokes)
    back = parse_stroke3(to_stroke3(sk))
    assert len(back.strokes) == len(sk.strokes)
    for a, b in zip(sk.strokes, back.strokes):
        np.testing.assert_allclose(a, b, atol=1e-9)


# ------------------------------------------------------------------ RDP


def test_rdp_collinear():
    np.testing.assert_array_equal(rdp_simplify([(0, 0), (1, 0), (2, 0)], 0.01), [(0, 0), (2, 0)])


def test_rdp_keeps_peak():
    assert len(rdp_simplify([(0, 0), (1, 1), (2, 0)], 0.5)) == 3


def test_rdp_zero_epsilon_keeps_non_collinear():
    pts = np.array([(0, 0), (1, 0.1), (2, -0.1), (3, 0)])
    np.testing.assert_array_equal(rdp_simplify(pts, 0.0), pts)


def test_rdp_rejects_negative_epsilon():
    with pytest.raises(ValueError):
        rdp_simplify([(0, 0), (1, 1)], -1)


def test_rdp_uses_segment_not_line_distance():
    # the middle point projects beyond the chord; line distance 0 but segment distance 1
    pts = [(0, 0), (3, 0), (2, 0)]
    assert len(rdp_simplify(pts, 0.5)) == 3


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.just(2)), elements=st.floats(-10, 10)),
       st.floats(0.0, 3.0))
def test_rdp_properties(poly, eps):
    out = rdp_simplify(poly, eps)
    np.testing.assert_array_equal(out[0], poly[0])
    np.testing.assert_array_equal(out[-1], poly[-1])
    # subsequence of the input
    j = 0
    for p in out:
        while j < len(poly) and not np.array_equal(poly[j], p):
            j += 1
        assert j < len(poly)
        j += 1
    # every removed point within eps of the simplified polyline (brute force)
    kept = {tuple(p) for p in out}
    for p in poly:
        if tuple(p) in kept:
            continue
        d = min(_seg_dist(p, a, b) for a, b in zip(out[:-1], out[1:]))
        assert d <= eps + 1e-9


def test_simplify_sketch_keeps_dots():
    sk = simplify_sketch(Sketch([[(0, 0)], [(0, 0), (1, 0), (2, 0)]]), 0.1)
    assert len(sk.strokes[0]) == 1 and len(sk.strokes[1]) == 2


# ------------------------------------------------------------------ SVG


def test_svg_empty_sketch_valid():
    text = export_svg(Sketch([]))
    root = ET.fromstring(text.split("\n", 1)[1])
    assert root.tag.endswith("svg")
    assert not [e for e in root.iter() if e.tag.endswith("path")]


def test_svg_one_segment():
    text = export_svg(Sketch([[(-1, -1), (1, 1)]]), canvas=100)
    root = ET.fromstring(text.split("\n", 1)[1])
    paths = [e for e in root.iter() if e.tag.endswith("path")]
    assert len(paths) == 1
    d = paths[0].get("d")
    assert d.count("M") == 1 and d.count("L") == 1
    assert root.get("width") == "100"
    assert 'stroke-linecap="round"' in text


def test_svg_deterministic_and_rejects_nan():
    sk = Sketch([[(-0.3, 0.2), (0.4, 0.1)], [(0, 0)]])
    assert export_svg(sk) == export_svg(sk)
    with pytest.raises(ValueError):
        export_svg(Sketch([[(0, 0), (np.inf, 0)]]))


@settings(max_examples=50, deadline=None)
@given(st.lists(arrays(np.float64, st.tuples(st.integers(2, 8), st.just(2)), elements=st.floats(-1, 1)),
                min_size=1, max_size=4))
def test_svg_parse_back(strokes):
    sk = Sketch(strokes)
    back = parse_svg_paths(export_svg(sk))
    assert len(back.strokes) == len(sk.strokes)
    for a, b in zip(sk.strokes, back.strokes):
        np.testing.assert_allclose(a, b, atol=1e-6)


def test_stroke_count_percentile():
    sks = [Sketch([[(0, 0)]] * k) for k in range(1, 101)]
    assert stroke_count_percentile(sks, 99) == 100
    assert stroke_count_percentile([], 99) == 0
