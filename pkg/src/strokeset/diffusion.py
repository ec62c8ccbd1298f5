"""DDPM over unordered sets of composite stroke latents [z, box, visibility]."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .tensor import checkpoint
from .tensor import engine as E
from .tensor.engine import Tensor, no_grad
from .tensor.nn import Embedding, LayerNorm, Linear, Module, Parameter, TransformerLayer, sinusoidal_embedding
from .tensor.optim import AdamW, lr_at
from .tensor.rng import stream

CKPT_KIND = "latent-diffusion"


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sqrt_alpha_bars: np.ndarray
    sqrt_one_minus_alpha_bars: np.ndarray
    posterior_variance: np.ndarray

    @property
    def T(self):
        return len(self.betas)

    def _at(self, arr, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [1, {self.T}]: {t}")
        return arr[t - 1]

    def beta(self, t):
        return self._at(self.betas, t)

    def alpha(self, t):
        return self._at(self.alphas, t)

    def alpha_bar(self, t):
        return self._at(self.alpha_bars, t)


def build_schedule(T=1000, beta_start=1e-4, beta_end=0.02):
    """Linear beta schedule; alpha_bar is the sequential float64 product of alphas."""
    if T < 1 or not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"invalid schedule T={T}, beta_start={beta_start}, beta_end={beta_end}")
    betas = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    alphas = 1.0 - betas
    alpha_bars = np.empty(T)
    acc = 1.0
    for i, a in enumerate(alphas):
        acc *= a
        alpha_bars[i] = acc
    prev = np.concatenate([[1.0], alpha_bars[:-1]])
    posterior = betas * (1.0 - prev) / (1.0 - alpha_bars)
    return DiffusionSchedule(betas, alphas, alpha_bars, np.sqrt(alpha_bars), np.sqrt(1.0 - alpha_bars),
                             posterior)


def q_sample(x0, t, eps, schedule):
    """Closed-form forward marginal x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.

    ``t`` is a 1-based scalar or one timestep per leading batch entry.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"noise shape {eps.shape} != data shape {x0.shape}")
    t = np.asarray(t)
    a = schedule._at(schedule.sqrt_alpha_bars, t)
    s = schedule._at(schedule.sqrt_one_minus_alpha_bars, t)
    if t.ndim:
        shape = (-1,) + (1,) * (x0.ndim - 1)
        a, s = a.reshape(shape), s.reshape(shape)
    return a * x0 + s * eps


def q_step(x_prev, t, eps, schedule):
    """One forward Markov step x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps."""
    b = schedule.beta(t)
    return np.sqrt(1.0 - b) * x_prev + np.sqrt(b) * eps


# ---------------------------------------------------------------- model


@dataclass
class DenoiserConfig:
    d_latent: int = 32
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 64
    ff_mult: int = 2
    max_strokes: int = 32
    d_time: int = 64
    n_classes: int = 0
    split_hidden: int = 64
    v_mag: float = 0.1
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sigma: str = "beta"
    stroke_norm: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.sigma not in ("beta", "posterior"):
            raise ValueError(f"unknown sampler variance {self.sigma!r}")

    @property
    def width(self):
        return self.d_latent + 5

    def schedule(self):
        return build_schedule(self.T, self.beta_start, self.beta_end)

    def to_meta(self):
        return dict(asdict(self))

    @classmethod
    def from_meta(cls, meta):
        kwargs = {}
        for f in fields(cls):
            if f.name in meta:
                raw, default = meta[f.name], f.default
                if isinstance(default, bool):
                    kwargs[f.name] = str(raw) in ("True", "true", "1")
                elif isinstance(default, int):
                    kwargs[f.name] = int(raw)
                elif isinstance(default, float):
                    kwargs[f.name] = float(raw)
                else:
                    kwargs[f.name] = raw
        return cls(**kwargs)


class Denoiser(Module):
    """Transformer noise predictor with no positional information of any kind.

    Timestep and (optional) class embeddings are added identically to every
    token, so permuting the input rows permutes the output rows.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self.inp = Linear(cfg.width, cfg.d_model)
        self.time1 = Linear(cfg.d_time, cfg.d_model)
        self.time2 = Linear(cfg.d_model, cfg.d_model)
        self.cond = Embedding(cfg.n_classes, cfg.d_model) if cfg.n_classes > 0 else None
        self.layers = [TransformerLayer(cfg.d_model, cfg.n_heads, cfg.ff_mult) for _ in range(cfg.n_layers)]
        self.norm = LayerNorm(cfg.d_model)
        self.out = Linear(cfg.d_model, cfg.width)

    def __call__(self, x, t, cond=None):
        x = E.as_tensor(x)
        if x.ndim != 3 or x.shape[2] != self.cfg.width:
            raise E.ShapeError(f"denoiser expects (B, N, {self.cfg.width}), got {x.shape}")
        b = x.shape[0]
        t = np.broadcast_to(np.asarray(t), (b,))
        temb = self.time2(E.relu(self.time1(Tensor(sinusoidal_embedding(t, self.cfg.d_time)))))
        h = self.inp(x) + temb.reshape(b, 1, -1)
        if cond is not None:
            if self.cond is None:
                raise ValueError("model was built without class conditioning")
            ids = np.broadcast_to(np.asarray(cond), (b,))
            h = h + self.cond(ids).reshape(b, 1, -1)
        for layer in self.layers:
            h = layer(h)
        return self.out(self.norm(h))


class SplitHead(Module):
    """Shared two-layer MLP row -> row + residual; the residual starts at exactly zero."""

    def __init__(self, cfg):
        self.d_latent = cfg.d_latent
        self.fc1 = Linear(cfg.width, cfg.split_hidden)
        self.fc2_weight = Parameter((cfg.split_hidden, cfg.width), init="zeros")
        self.fc2_bias = Parameter((cfg.width,), init="zeros")

    def __call__(self, rows):
        rows = E.as_tensor(rows)
        return rows + E.matmul(E.relu(self.fc1(rows)), self.fc2_weight) + self.fc2_bias

    def split(self, rows):
        """(..., d+5) -> (z, box, visibility) as arrays."""
        with no_grad():
            out = self(np.asarray(rows, dtype=np.float64)).data
        d = self.d_latent
        return out[..., :d], out[..., d:d + 4], out[..., d + 4]


class LatentDiffusion(Module):
    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        self.denoiser = Denoiser(cfg)
        self.split_head = SplitHead(cfg)
        self.initialize(seed)
        self._schedule = cfg.schedule()

    @property
    def schedule(self):
        return self._schedule

    def predict_noise(self, x_t, t, cond=None):
        return self.denoiser(x_t, t, cond)

    def split_latent(self, rows):
        return self.split_head.split(rows)


def denoise_step_predict(model, x_t, t, cond=None):
    """Noise prediction as a plain array (no graph kept)."""
    with no_grad():
        return model.predict_noise(np.asarray(x_t, dtype=np.float64), t, cond).data


# ---------------------------------------------------------------- data


def prepare_training_sequence(strokes, max_strokes=32, v_mag=0.1, d_latent=None):
    """Fixed-length composite rows from a list of (z, box) pairs.

    Real rows are [z, box, +v_mag]; padding rows are zero with visibility -v_mag.
    """
    if len(strokes) > max_strokes:
        raise ValueError(f"sketch has {len(strokes)} strokes, more than max_strokes={max_strokes}")
    if d_latent is None:
        if not strokes:
            raise ValueError("d_latent is required for an empty sketch")
        d_latent = len(np.asarray(strokes[0][0]))
    rows = np.zeros((max_strokes, d_latent + 5))
    rows[:, -1] = -v_mag
    for i, (z, box) in enumerate(strokes):
        box = box.as_array() if hasattr(box, "as_array") else np.asarray(box, dtype=np.float64)
        rows[i, :d_latent] = z
        rows[i, d_latent:d_latent + 4] = box
        rows[i, -1] = v_mag
    return rows


# ---------------------------------------------------------------- training


@dataclass
class DiffusionTrainSettings:
    steps: int = 1000
    batch_size: int = 16
    lr: float = 1e-4
    warmup_steps: int = 0
    decay: str = "none"
    min_lr: float = 0.0
    weight_decay: float = 0.01
    split_weight: float = 1.0
    split_max_t: int = 50
    log_every: int = 1


@dataclass
class DiffusionTrainResult:
    model: LatentDiffusion
    log: list         # (step, noise mse, split mse)
    seed: int


def train_diffusion(sequences, cfg, settings, seed=0, labels=None, callback=None):
    """Noise-prediction training on (S, N_s, d+5) latent sets.

    Each step draws a batch of sketches, a uniform timestep per sketch in
    [1, T] and standard normal noise, and minimizes MSE(eps_hat, eps).
    The split head is trained at the same time to map lightly noised rows
    back to clean rows.
    """
    x = np.asarray(sequences, dtype=np.float64)
    if x.ndim != 3 or len(x) == 0:
        raise ValueError("latent dataset is empty")
    if x.shape[1:] != (cfg.max_strokes, cfg.width):
        raise E.ShapeError(f"expected sequences of shape (S, {cfg.max_strokes}, {cfg.width}), got {x.shape}")
    labels = None if labels is None else np.asarray(labels, dtype=np.int64)
    model = LatentDiffusion(cfg, seed)
    sched = model.schedule
    opt = AdamW(model.parameters(), lr=settings.lr, weight_decay=settings.weight_decay)
    log = []
    from .autoencoder import batch_order

    for step in range(settings.steps):
        idx = batch_order(seed, len(x), step, settings.batch_size)
        rng = stream(seed, "diffusion-step", step)
        t = rng.integers(1, sched.T + 1, size=len(idx))
        eps = rng.standard_normal(x[idx].shape)
        x_t = q_sample(x[idx], t, eps, sched)
        opt.zero_grad()
        pred = model.predict_noise(x_t, t, None if labels is None else labels[idx])
        loss = E.mean((pred - eps) ** 2)
        total = loss
        split_mse = 0.0
        if settings.split_weight > 0:
            ts = rng.integers(1, min(settings.split_max_t, sched.T) + 1, size=len(idx))
            noisy = x[idx] + sched.sqrt_one_minus_alpha_bars[ts - 1].reshape(-1, 1, 1) * rng.standard_normal(x[idx].shape)
            split_loss = E.mean((model.split_head(noisy) - x[idx]) ** 2)
            total = total + settings.split_weight * split_loss
            split_mse = split_loss.item()
        total.backward()
        opt.step(lr_at(step, settings.lr, settings.warmup_steps, settings.steps, settings.decay,
                       settings.min_lr))
        if step % settings.log_every == 0 or step == settings.steps - 1:
            log.append((step, loss.item(), split_mse))
        if callback is not None:
            callback(step, loss.item())
    return DiffusionTrainResult(model, log, seed)


def evaluate_noise_loss(model, sequences, seed=0, draws=8, labels=None):
    """Average noise-prediction MSE over fixed random (t, eps) draws."""
    x = np.asarray(sequences, dtype=np.float64)
    sched = model.schedule
    total = 0.0
    for k in range(draws):
        rng = stream(seed, "eval", k)
        t = rng.integers(1, sched.T + 1, size=len(x))
        eps = rng.standard_normal(x.shape)
        pred = denoise_step_predict(model, q_sample(x, t, eps, sched), t, labels)
        total += float(np.mean((pred - eps) ** 2))
    return total / draws


# ---------------------------------------------------------------- sampling


def p_sample_loop(model, seeds, cond=None, snapshot_steps=()):
    """Ancestral sampling for one sample per seed.

    Returns (x0, snapshots) where ``snapshots[t]`` is the state produced by the
    update at step t (so ``snapshots[1]`` equals the returned x0).
    """
    cfg = model.cfg
    sched = model.schedule
    seeds = list(seeds)
    gens = [stream(s, "sample") for s in seeds]
    shape = (cfg.max_strokes, cfg.width)
    x = np.stack([g.standard_normal(shape) for g in gens])
    if cond is not None:
        cond = np.broadcast_to(np.asarray(cond, dtype=np.int64), (len(seeds),))
    wanted = set(int(t) for t in snapshot_steps)
    if any(t < 1 or t > sched.T for t in wanted):
        raise ValueError(f"snapshot steps must lie in [1, {sched.T}]")
    snaps = {}
    for t in range(sched.T, 0, -1):
        eps_hat = denoise_step_predict(model, x, t, cond)
        beta, alpha, ab = sched.betas[t - 1], sched.alphas[t - 1], sched.alpha_bars[t - 1]
        mean = (x - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
        if t > 1:
            var = beta if cfg.sigma == "beta" else sched.posterior_variance[t - 1]
            eta = np.stack([g.standard_normal(shape) for g in gens])
            x = mean + np.sqrt(var) * eta
        else:
            x = mean
        if t in wanted:
            snaps[t] = x.copy()
    return x, snaps


# ---------------------------------------------------------------- persistence


def save_diffusion(path, model, extra_meta=None):
    meta = {f"cfg.{k}": v for k, v in model.cfg.to_meta().items()}
    meta.update(extra_meta or {})
    checkpoint.save(path, model.state_dict(), CKPT_KIND, meta)


def load_diffusion(path):
    arrays, meta, _ = checkpoint.load(path, CKPT_KIND)
    cfg = DenoiserConfig.from_meta({k[4:]: v for k, v in meta.items() if k.startswith("cfg.")})
    model = LatentDiffusion(cfg)
    model.load_state_dict(arrays)
    return model, meta
