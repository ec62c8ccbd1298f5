import os

import numpy as np
import pytest

from strokeset import geometry as G
from strokeset.autoencoder import EncoderConfig
from strokeset.diffusion import DenoiserConfig

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
TOY_SKETCHES = os.path.join(FIXTURES, "toy_sketches.ndjson")


def tiny_encoder_config(**kw):
    """Smallest configuration that still exercises every layer type."""
    base = dict(n_points=8, d_h=8, n_layers=1, n_heads=2, d_f=4, d_img=6, resolution=64,
                channels=(2, 2, 2, 2, 2, 3), percep_channels=(2, 2, 2))
    base.update(kw)
    return EncoderConfig(**base)


def toy_encoder_config(**kw):
    """Configuration used by the training smoke tests."""
    base = dict(n_layers=2, d_h=32, n_heads=4)
    base.update(kw)
    return EncoderConfig(**base)


def tiny_denoiser_config(**kw):
    base = dict(d_latent=4, n_layers=1, n_heads=2, d_model=8, max_strokes=5, d_time=8, split_hidden=6, T=20)
    base.update(kw)
    return DenoiserConfig(**base)


def random_strokes(rng, n, n_points=64, resolution=64, with_fields=True):
    strokes, fields = [], []
    for _ in range(n):
        raw = np.cumsum(rng.normal(size=(6, 2)), axis=0)
        s = G.resample_stroke(raw, n_points)
        s = s / np.abs(s).max()
        p, _ = G.normalize_stroke(s)
        strokes.append(p)
        if with_fields:
            fields.append(G.render_udf(p, 50.0, resolution).values)
    return np.array(strokes), (np.array(fields) if with_fields else None)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
