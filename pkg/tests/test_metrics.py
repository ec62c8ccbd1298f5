import json
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TOY_SKETCHES
from strokeset.geometry import Sketch, normalize_sketch
from strokeset.metrics import (ExtractorConfig, FeatureSet, MetricReport, evaluate, extract_features, fid,
                               frechet_distance, knn_threshold, precision_recall, rasterize)
from strokeset.sketch_io import parse_quickdraw_ndjson


def _fs(x, eid="fx-test"):
    return FeatureSet(np.asarray(x, dtype=np.float64), eid)


def _random_cov(rng, d):
    a = rng.normal(size=(d, d))
    return a @ a.T / d + 0.1 * np.eye(d)


# ------------------------------------------------------------------ Frechet distance


def test_fid_self_is_zero():
    x = np.random.default_rng(0).normal(size=(200, 6))
    assert fid(_fs(x), _fs(x)) < 1e-8


def test_fid_one_dimensional_shift():
    assert frechet_distance([0.0], [[1.0]], [1.0], [[1.0]]) == pytest.approx(1.0, abs=1e-6)
    # analytic 1-D form: (m1 - m2)^2 + (s1 - s2)^2
    assert frechet_distance([2.0], [[4.0]], [-1.0], [[9.0]]) == pytest.approx(9 + 1, abs=1e-9)


def test_fid_against_scipy_sqrtm():
    rng = np.random.default_rng(1)
    for d in (2, 5, 12):
        s1, s2 = _random_cov(rng, d), _random_cov(rng, d)
        m1, m2 = rng.normal(size=d), rng.normal(size=d)
        ref = np.sum((m1 - m2) ** 2) + np.trace(s1 + s2 - 2 * scipy.linalg.sqrtm(s1 @ s2).real)
        assert frechet_distance(m1, s1, m2, s2) == pytest.approx(ref, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_fid_symmetric_nonnegative(seed, d):
    rng = np.random.default_rng(seed)
    s1, s2 = _random_cov(rng, d), _random_cov(rng, d)
    m1, m2 = rng.normal(size=d), rng.normal(size=d)
    a, b = frechet_distance(m1, s1, m2, s2), frechet_distance(m2, s2, m1, s1)
    assert a >= 0 and a == pytest.approx(b, rel=1e-8, abs=1e-10)


def test_fid_singular_covariances():
    # rank-deficient but PSD; must not fail
    s = np.diag([1.0, 0.0, 0.0])
    assert frechet_distance(np.zeros(3), s, np.zeros(3), s) < 1e-12


def test_fid_rejects_indefinite():
    with pytest.raises(ValueError):
        frechet_distance(np.zeros(2), np.diag([1.0, -1.0]), np.zeros(2), np.eye(2))


def test_fid_input_checks():
    x = np.random.default_rng(0).normal(size=(10, 3))
    with pytest.raises(ValueError):
        fid(_fs(x, "fx-a"), _fs(x, "fx-b"))
    with pytest.raises(ValueError):
        fid(_fs(x[:1]), _fs(x))
    with pytest.raises(ValueError):
        FeatureSet(np.array([[np.nan]]), "fx")


# ------------------------------------------------------------------ kNN precision / recall


def _brute_knn(x, k):
    total = 0.0
    for i in range(len(x)):
        ds = sorted(math.dist(x[i], x[j]) for j in range(len(x)) if j != i)
        total += ds[k - 1]
    return total / len(x)


def _brute_pr(real, gen, delta):
    def covered(p, pool):
        return any(math.dist(p, q) <= delta for q in pool)
    prec = sum(covered(g, real) for g in gen) / len(gen)
    rec = sum(covered(r, gen) for r in real) / len(real)
    return prec, rec


def test_knn_small_example():
    x = np.array([[0.0], [1.0], [3.0]])
    # 1st neighbours: 1, 1, 2 -> mean 4/3
    assert knn_threshold(x, 1) == pytest.approx(4 / 3)
    with pytest.raises(ValueError):
        knn_threshold(x, 3)
    with pytest.raises(ValueError):
        knn_threshold(x, 0)


def test_knn_and_pr_match_brute_force():
    rng = np.random.default_rng(5)
    real = rng.normal(size=(200, 4))
    gen = rng.normal(loc=0.4, size=(200, 4))
    delta = knn_threshold(_fs(real), 20)
    assert delta == _brute_knn(real, 20) or delta == pytest.approx(_brute_knn(real, 20), rel=1e-14)
    assert precision_recall(_fs(real), _fs(gen), delta) == _brute_pr(real, gen, delta)


def test_pr_boundary_inclusive():
    assert precision_recall(np.array([[0.0]]), np.array([[1.0]]), 1.0) == (1.0, 1.0)
    assert precision_recall(np.array([[0.0]]), np.array([[1.0]]), 0.999) == (0.0, 0.0)
    with pytest.raises(ValueError):
        precision_recall(np.zeros((1, 1)), np.zeros((0, 1)), 1.0)


# ------------------------------------------------------------------ extractor


def _toy():
    return [normalize_sketch(s) for s in parse_quickdraw_ndjson(open(TOY_SKETCHES).read()).sketches]


def test_raster_line_width():
    cfg = ExtractorConfig()
    img = rasterize(Sketch([[(-1.0, 0.013), (1.0, 0.013)]]), cfg)
    # a horizontal line lights about one pixel per column across its span
    cols = img.sum(axis=0)
    covered = cols[cols > 0]
    assert 45 <= len(covered) <= 55
    assert covered.max() <= 2


def test_extractor_deterministic_and_order_independent():
    sks = _toy()[:12]
    cfg = ExtractorConfig()
    a = extract_features(sks, cfg)
    b = extract_features(sks, cfg)
    np.testing.assert_array_equal(a.vectors, b.vectors)
    assert a.vectors.shape == (12, 56) and a.extractor_id == cfg.extractor_id
    perm = np.random.default_rng(0).permutation(12)
    c = extract_features([sks[i] for i in perm], cfg)
    np.testing.assert_allclose(c.vectors, a.vectors[perm], atol=1e-12)
    assert ExtractorConfig(seed=1).extractor_id != cfg.extractor_id


def test_real_separates_from_noise():
    sks = _toy()
    rng = np.random.default_rng(0)
    noise = [Sketch([rng.uniform(-1, 1, size=(8, 2)) for _ in range(4)]) for _ in range(32)]
    cfg = ExtractorConfig()
    a, b = extract_features(sks[:32], cfg), extract_features(sks[32:], cfg)
    n = extract_features(noise, cfg)
    assert fid(a, b) < fid(a, n)


def test_evaluate_report():
    sks = _toy()
    rep = evaluate(sks[:32], sks[32:], k=5)
    assert isinstance(rep, MetricReport)
    assert 0 <= rep.precision <= 1 and 0 <= rep.recall <= 1
    assert rep.n_real == rep.n_gen == 32 and rep.k == 5
    assert json.loads(rep.to_json())["fid"] == rep.fid
    assert "precision" in rep.to_table()
