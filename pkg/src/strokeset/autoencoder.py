"""Dual-branch stroke autoencoder: point-sequence transformer + UDF CNN, fused into a VAE latent."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .tensor import engine as E
from .tensor import checkpoint
from .tensor.engine import Tensor, no_grad
from .tensor.nn import (Conv2d, ConvTranspose2d, LayerNorm, Linear, Module, Parameter,
                        TransformerLayer, sinusoidal_embedding)
from .tensor.optim import AdamW, lr_at
from .tensor.rng import stream

CKPT_KIND = "stroke-autoencoder"


@dataclass
class EncoderConfig:
    n_points: int = 64
    d_h: int = 64
    n_layers: int = 6
    n_heads: int = 8
    ff_mult: int = 2
    d_f: int = 32
    d_img: int = 64
    resolution: int = 64
    channels: tuple = (4, 8, 16, 32, 64, 128)
    pooling: str = "attention"
    image_branch: bool = True
    lambda_vec: float = 10.0
    lambda_img: float = 10.0
    lambda_kl: float = 0.001
    lambda_ce: float = 0.1
    percep_channels: tuple = (4, 8, 16)
    percep_seed: int = 7919

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.percep_channels = tuple(int(c) for c in self.percep_channels)
        if self.d_h % self.n_heads:
            raise ValueError(f"d_h={self.d_h} is not divisible by n_heads={self.n_heads}")
        if len(self.channels) != 6:
            raise ValueError("the image branch has exactly 6 conv blocks")
        if self.resolution % 64:
            raise ValueError(f"resolution {self.resolution} must be a multiple of 2**6")
        if self.pooling not in ("attention", "mean"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    @property
    def d_seq(self):
        return self.d_h

    def to_meta(self):
        meta = {}
        for k, v in asdict(self).items():
            meta[k] = ",".join(str(c) for c in v) if isinstance(v, tuple) else v
        return meta

    @classmethod
    def from_meta(cls, meta):
        kwargs = {}
        for f in fields(cls):
            if f.name not in meta:
                continue
            raw = meta[f.name]
            default = f.default
            if isinstance(default, tuple):
                kwargs[f.name] = tuple(int(c) for c in str(raw).split(",") if c)
            elif isinstance(default, bool):
                kwargs[f.name] = str(raw) in ("True", "true", "1")
            elif isinstance(default, int):
                kwargs[f.name] = int(raw)
            elif isinstance(default, float):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)


# ---------------------------------------------------------------- branches


class VectorEncoder(Module):
    def __init__(self, cfg):
        self.proj = Linear(2, cfg.d_h)
        self.layers = [TransformerLayer(cfg.d_h, cfg.n_heads, cfg.ff_mult) for _ in range(cfg.n_layers)]
        self.norm = LayerNorm(cfg.d_h)
        self.query = Parameter((cfg.d_h, 1), fan_in=cfg.d_h) if cfg.pooling == "attention" else None
        self._pe = sinusoidal_embedding(np.arange(cfg.n_points), cfg.d_h)

    def __call__(self, points):
        h = self.proj(points) + self._pe
        for layer in self.layers:
            h = layer(h)
        h = self.norm(h)
        if self.query is None:
            return E.mean(h, axis=1)
        return E.attention_pool(h, self.query)


class ImageEncoder(Module):
    def __init__(self, cfg):
        chans = (1,) + cfg.channels
        self.convs = [Conv2d(chans[i], chans[i + 1], 4, stride=2, padding=1) for i in range(6)]
        self.proj = Linear(chans[-1], cfg.d_img)

    def __call__(self, field):
        x = field
        for conv in self.convs:
            x = E.relu(conv(x))
        return self.proj(E.global_avg_pool(x))


class VectorDecoder(Module):
    def __init__(self, cfg):
        self.expand1 = Linear(cfg.d_f, cfg.d_h)
        self.expand2 = Linear(cfg.d_h, cfg.d_h)
        self.template = Parameter((cfg.n_points, cfg.d_h), init="normal", std=0.5)
        self.layers = [TransformerLayer(cfg.d_h, cfg.n_heads, cfg.ff_mult) for _ in range(cfg.n_layers)]
        self.norm = LayerNorm(cfg.d_h)
        self.head = Linear(cfg.d_h, 3)

    def __call__(self, z):
        b = z.shape[0]
        cond = self.expand2(E.relu(self.expand1(z))).reshape(b, 1, -1)
        h = self.template + cond
        for layer in self.layers:
            h = layer(h)
        return self.head(self.norm(h))                    # (B, N, 3): x, y, m-logit


class ImageDecoder(Module):
    def __init__(self, cfg):
        self.base = cfg.resolution // 64
        chans = cfg.channels[::-1] + (cfg.channels[0],)   # 128 -> ... -> 4 -> 4
        self.c0 = chans[0]
        self.proj = Linear(cfg.d_f, chans[0] * self.base * self.base)
        self.deconvs = [ConvTranspose2d(chans[i], chans[i + 1], 4, stride=2, padding=1) for i in range(6)]
        self.out = Conv2d(chans[-1], 1, 1)

    def __call__(self, z):
        b = z.shape[0]
        x = E.relu(self.proj(z)).reshape(b, self.c0, self.base, self.base)
        for deconv in self.deconvs:
            x = E.relu(deconv(x))
        y = E.sigmoid(self.out(x))
        return y.reshape(b, y.shape[2], y.shape[3])


class PerceptualNet(Module):
    """Fixed random conv feature stack; its weights never train."""

    def __init__(self, channels, seed):
        chans = (1,) + tuple(channels)
        self.convs = [Conv2d(chans[i], chans[i + 1], 4, stride=2, padding=1) for i in range(len(channels))]
        self.initialize(seed)
        for p in self.parameters():
            p.requires_grad = False

    def features(self, field):
        x, out = field, []
        for conv in self.convs:
            x = E.relu(conv(x))
            out.append(x)
        return out


# ---------------------------------------------------------------- model


@dataclass
class AEOutput:
    mean: Tensor
    log_var: Tensor
    z: Tensor
    points: Tensor          # (B, N, 3)
    field: Tensor | None    # (B, R, R)


class StrokeAutoencoder(Module):
    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        self.vec_enc = VectorEncoder(cfg)
        self.img_enc = ImageEncoder(cfg) if cfg.image_branch else None
        d_in = cfg.d_seq + (cfg.d_img if cfg.image_branch else 0)
        self.fuse = Linear(d_in, 2 * cfg.d_f)
        self.vec_dec = VectorDecoder(cfg)
        self.img_dec = ImageDecoder(cfg) if cfg.image_branch else None
        self.initialize(seed)
        self._frozen = {"percep": PerceptualNet(cfg.percep_channels, cfg.percep_seed)}

    # -- pieces exposed individually

    def _check_points(self, points):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 2:
            points = points[None]
        if points.shape[1:] != (self.cfg.n_points, 2):
            raise E.ShapeError(f"expected strokes of shape (B, {self.cfg.n_points}, 2), got {points.shape}")
        return points

    def _check_field(self, field):
        field = np.asarray(field, dtype=np.float64)
        if field.ndim == 2:
            field = field[None]
        r = self.cfg.resolution
        if field.shape[1:] != (r, r):
            raise E.ShapeError(f"expected fields of shape (B, {r}, {r}), got {field.shape}")
        return field

    def encode_vector(self, points):
        return self.vec_enc(Tensor(self._check_points(points)))

    def encode_image(self, field):
        if self.img_enc is None:
            raise RuntimeError("image branch disabled in this configuration")
        f = self._check_field(field)
        return self.img_enc(Tensor(f[:, None]))

    def fuse_and_sample(self, z_seq, z_img, noise):
        h = z_seq if z_img is None else E.concat([z_seq, z_img], axis=-1)
        stats = self.fuse(h)
        d = self.cfg.d_f
        mu, log_var = stats[:, :d], stats[:, d:]
        return E.reparameterize(mu, log_var, noise), mu, log_var

    def decode_vector(self, z):
        return self.vec_dec(E.as_tensor(np.atleast_2d(z) if not isinstance(z, Tensor) else z))

    def decode_image(self, z):
        if self.img_dec is None:
            raise RuntimeError("image branch disabled in this configuration")
        return self.img_dec(E.as_tensor(np.atleast_2d(z) if not isinstance(z, Tensor) else z))

    def __call__(self, points, field, noise):
        z_seq = self.encode_vector(points)
        z_img = self.encode_image(field) if self.img_enc is not None else None
        z, mu, log_var = self.fuse_and_sample(z_seq, z_img, noise)
        pts = self.vec_dec(z)
        img = self.img_dec(z) if self.img_dec is not None else None
        return AEOutput(mu, log_var, z, pts, img)

    # -- loss

    def perceptual(self, target, pred):
        feats_t = self._frozen["percep"].features(Tensor(target[:, None]))
        feats_p = self._frozen["percep"].features(E.reshape(pred, (pred.shape[0], 1) + pred.shape[1:]))
        total = 0.0
        for ft, fp in zip(feats_t, feats_p):
            total = total + E.mean((fp - ft.data) ** 2)
        return total

    def loss(self, points, field, out):
        return loss_total(points, field, out, self.cfg, self.perceptual if self.img_dec is not None else None)

    # -- inference helpers (no graph)

    def encode_mean(self, points, field=None):
        with no_grad():
            z_seq = self.encode_vector(points)
            z_img = self.encode_image(field) if self.img_enc is not None else None
            h = z_seq if z_img is None else E.concat([z_seq, z_img], axis=-1)
            stats = self.fuse(h).data
        return stats[:, :self.cfg.d_f], stats[:, self.cfg.d_f:]

    def decode_points(self, z):
        with no_grad():
            return self.decode_vector(np.atleast_2d(np.asarray(z, dtype=np.float64))).data

    def decode_field(self, z):
        with no_grad():
            return self.decode_image(np.atleast_2d(np.asarray(z, dtype=np.float64))).data

    def reconstruct(self, points, field=None):
        mu, _ = self.encode_mean(self._check_points(points), None if field is None else self._check_field(field))
        return self.decode_points(mu)[..., :2]


def kl_divergence(mu, log_var):
    """Closed-form KL(N(mu, exp(log_var)) || N(0, I)), summed over latent dims, mean over batch."""
    per = 0.5 * E.tsum(E.exp(log_var) + mu ** 2 - 1.0 - log_var, axis=-1)
    return E.mean(per)


def vector_loss(target, pred_xy):
    """Mean per-point Euclidean distance between (x, y) pairs."""
    return E.mean(E.norm(pred_xy - target, axis=-1))


def loss_total(points, field, out, cfg, perceptual=None):
    """Weighted objective; returns (total tensor, dict of float components)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 2:
        points = points[None]
    l_vec = vector_loss(points, out.points[..., :2])
    l_kl = kl_divergence(out.mean, out.log_var)
    l_ce = E.mean(E.bce_with_logits(out.points[..., 2], np.ones(points.shape[:2])))
    total = cfg.lambda_vec * l_vec + cfg.lambda_kl * l_kl + cfg.lambda_ce * l_ce
    parts = {"vec": l_vec.item(), "kl": l_kl.item(), "ce": l_ce.item(), "img": 0.0}
    if out.field is not None and cfg.image_branch:
        target = np.asarray(field, dtype=np.float64)
        if target.ndim == 2:
            target = target[None]
        l_img = E.mean((out.field - target) ** 2)
        if perceptual is not None:
            l_img = l_img + perceptual(target, out.field)
        total = total + cfg.lambda_img * l_img
        parts["img"] = l_img.item()
    parts["total"] = total.item()
    return total, parts


# ---------------------------------------------------------------- training


@dataclass
class TrainSettings:
    steps: int = 1000
    batch_size: int = 16
    lr: float = 1e-4
    warmup_steps: int = 0
    decay: str = "none"
    min_lr: float = 0.0
    weight_decay: float = 0.01
    log_every: int = 1


@dataclass
class TrainResult:
    model: StrokeAutoencoder
    log: list          # (step, total, vec, img, kl, ce)
    seed: int


def batch_order(seed, n, step, batch_size):
    """Indices for ``step``: a fresh seeded permutation per epoch, consumed in order.

    A batch larger than the dataset is filled from several independent
    permutations, so every item appears a near-equal number of times.
    """
    if batch_size > n:
        reps = math.ceil(batch_size / n)
        return np.concatenate([stream(seed, "batches", step, j).permutation(n) for j in range(reps)])[:batch_size]
    per_epoch = max(1, math.ceil(n / batch_size))
    epoch, k = divmod(step, per_epoch)
    perm = stream(seed, "batches", epoch).permutation(n)
    return perm[k * batch_size:(k + 1) * batch_size]


def train_autoencoder(strokes, fields, cfg, settings, seed=0, callback=None):
    """Optimize the autoencoder on (stroke, field) pairs; deterministic given ``seed``."""
    strokes = np.asarray(strokes, dtype=np.float64)
    if len(strokes) == 0:
        raise ValueError("training set is empty")
    fields = None if fields is None else np.asarray(fields, dtype=np.float64)
    if cfg.image_branch and fields is None:
        raise ValueError("image branch enabled but no fields were given")
    model = StrokeAutoencoder(cfg, seed)
    opt = AdamW(model.parameters(), lr=settings.lr, weight_decay=settings.weight_decay)
    log = []
    for step in range(settings.steps):
        idx = batch_order(seed, len(strokes), step, settings.batch_size)
        noise = stream(seed, "noise", step).standard_normal((len(idx), cfg.d_f))
        opt.zero_grad()
        out = model(strokes[idx], None if fields is None else fields[idx], noise)
        total, parts = model.loss(strokes[idx], None if fields is None else fields[idx], out)
        total.backward()
        opt.step(lr_at(step, settings.lr, settings.warmup_steps, settings.steps, settings.decay,
                       settings.min_lr))
        if step % settings.log_every == 0 or step == settings.steps - 1:
            log.append((step, parts["total"], parts["vec"], parts["img"], parts["kl"], parts["ce"]))
        if callback is not None:
            callback(step, parts)
    return TrainResult(model, log, seed)


def save_autoencoder(path, model, extra_meta=None):
    meta = {f"cfg.{k}": v for k, v in model.cfg.to_meta().items()}
    meta.update(extra_meta or {})
    checkpoint.save(path, model.state_dict(), CKPT_KIND, meta)


def load_autoencoder(path):
    arrays, meta, _ = checkpoint.load(path, CKPT_KIND)
    cfg = EncoderConfig.from_meta({k[4:]: v for k, v in meta.items() if k.startswith("cfg.")})
    model = StrokeAutoencoder(cfg)
    model.load_state_dict(arrays)
    return model, meta
