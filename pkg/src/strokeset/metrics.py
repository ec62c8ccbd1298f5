"""FID and kNN-threshold precision/recall over features of rasterized sketches."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from . import geometry as G
from .sketch_io import simplify_sketch
from .tensor import engine as E
from .tensor.engine import Tensor, no_grad
from .tensor.nn import Conv2d, Module


@dataclass(frozen=True)
class ExtractorConfig:
    resolution: int = 64
    channels: tuple = (8, 16, 32)
    seed: int = 20240
    rdp_epsilon: float = 0.01     # sketch-space units, [-1, 1] canvas
    line_width_px: float = 1.0
    raster_threshold: float = 0.5
    margin_scale: float = 0.8

    @property
    def gamma(self):
        """Field sharpness whose 0.5 isoline lies half a line width from the stroke."""
        half = 0.5 * self.line_width_px / self.resolution
        return math.log(1.0 / self.raster_threshold) / (half * half)

    @property
    def extractor_id(self):
        text = json.dumps(asdict(self), sort_keys=True)
        return "fx-" + hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass
class FeatureSet:
    vectors: np.ndarray
    extractor_id: str

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if not np.isfinite(self.vectors).all():
            raise ValueError("feature vectors must be finite")

    def __len__(self):
        return len(self.vectors)


@dataclass
class MetricReport:
    fid: float
    precision: float
    recall: float
    delta: float
    k: int
    n_real: int
    n_gen: int
    extractor_id: str

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    def to_table(self):
        rows = [("fid", f"{self.fid:.6f}"), ("precision", f"{self.precision:.4f}"),
                ("recall", f"{self.recall:.4f}"), ("delta", f"{self.delta:.6f}"), ("k", str(self.k)),
                ("n_real", str(self.n_real)), ("n_gen", str(self.n_gen)),
                ("extractor", self.extractor_id)]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


class FeatureNet(Module):
    """Seed-frozen conv stack; features are the per-block channel means, concatenated."""

    def __init__(self, cfg):
        chans = (1,) + tuple(cfg.channels)
        self.convs = [Conv2d(chans[i], chans[i + 1], 4, stride=2, padding=1) for i in range(len(cfg.channels))]
        self.initialize(cfg.seed)

    def __call__(self, images):
        with no_grad():
            x = Tensor(np.asarray(images, dtype=np.float64)[:, None])
            feats = []
            for conv in self.convs:
                x = E.relu(conv(x))
                feats.append(x.data.mean(axis=(2, 3)))
        return np.concatenate(feats, axis=1)


def rasterize(sketch, cfg=ExtractorConfig()):
    """Binary raster of a sketch-space sketch on the unit canvas (RDP simplified first)."""
    sk = simplify_sketch(sketch, cfg.rdp_epsilon) if cfg.rdp_epsilon > 0 else sketch
    field = G.render_sketch_udf(sk, cfg.gamma, cfg.resolution, cfg.margin_scale).values
    return (field >= cfg.raster_threshold).astype(np.float64)


def extract_features(sketches, cfg=ExtractorConfig(), batch=64):
    sketches = list(sketches)
    net = FeatureNet(cfg)
    d = sum(cfg.channels)
    if not sketches:
        return FeatureSet(np.zeros((0, d)), cfg.extractor_id)
    images = np.stack([rasterize(s, cfg) for s in sketches])
    vecs = np.concatenate([net(images[i:i + batch]) for i in range(0, len(images), batch)])
    return FeatureSet(vecs, cfg.extractor_id)


def _check_pair(a, b):
    if a.extractor_id != b.extractor_id:
        raise ValueError(f"feature sets come from different extractors: {a.extractor_id} vs {b.extractor_id}")
    if a.vectors.shape[1] != b.vectors.shape[1]:
        raise ValueError("feature dimensions differ")


def _psd_sqrt(mat, what):
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    tol = 1e-8 * max(1.0, float(np.abs(vals).max()))
    if vals.min() < -tol:
        raise ValueError(f"{what} is not positive semi-definite (min eigenvalue {vals.min():.3e})")
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(mu1, sigma1, mu2, sigma2):
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).

    Tr (S1 S2)^(1/2) equals Tr (A S2 A)^(1/2) with A = S1^(1/2); the latter is a
    symmetric PSD product so a symmetric eigensolver suffices.
    """
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    sigma1, sigma2 = np.atleast_2d(sigma1), np.atleast_2d(sigma2)
    a = _psd_sqrt(sigma1, "covariance 1")
    mid = a @ sigma2 @ a
    vals = np.linalg.eigvalsh((mid + mid.T) / 2.0)
    tol = 1e-8 * max(1.0, float(np.abs(vals).max()))
    if vals.min() < -tol:
        raise ValueError(f"covariance product is not positive semi-definite (min eigenvalue {vals.min():.3e})")
    tr_sqrt = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * tr_sqrt)
    return max(value, 0.0)


def fid(real, gen):
    _check_pair(real, gen)
    if len(real) < 2 or len(gen) < 2:
        raise ValueError("FID needs at least 2 samples per set")
    r, g = real.vectors, gen.vectors
    return frechet_distance(r.mean(axis=0), np.cov(r, rowvar=False), g.mean(axis=0), np.cov(g, rowvar=False))


def knn_threshold(real, k=20):
    """Mean distance from each real sample to its k-th nearest other real sample."""
    x = real.vectors if isinstance(real, FeatureSet) else np.atleast_2d(np.asarray(real, dtype=np.float64))
    if len(x) <= k:
        raise ValueError(f"need more than k={k} real samples, got {len(x)}")
    if k < 1:
        raise ValueError("k must be at least 1")
    d = cdist(x, x)
    np.fill_diagonal(d, np.inf)
    kth = np.partition(d, k - 1, axis=1)[:, k - 1]
    return float(kth.mean())


def precision_recall(real, gen, delta):
    """Boundary-inclusive coverage fractions in both directions."""
    r = real.vectors if isinstance(real, FeatureSet) else np.atleast_2d(np.asarray(real, dtype=np.float64))
    g = gen.vectors if isinstance(gen, FeatureSet) else np.atleast_2d(np.asarray(gen, dtype=np.float64))
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if len(r) == 0 or len(g) == 0:
        raise ValueError("precision/recall need non-empty real and generated sets")
    close = cdist(g, r) <= delta
    return float(close.any(axis=1).mean()), float(close.any(axis=0).mean())


def evaluate(real_sketches, gen_sketches, cfg=ExtractorConfig(), k=20):
    real = extract_features(real_sketches, cfg)
    gen = extract_features(gen_sketches, cfg)
    delta = knn_threshold(real, k)
    p, r = precision_recall(real, gen, delta)
    return MetricReport(fid(real, gen), p, r, delta, k, len(real), len(gen), cfg.extractor_id)
