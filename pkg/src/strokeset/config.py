"""Flat key=value run configuration shared by every CLI stage."""
from __future__ import annotations

import os

from .autoencoder import EncoderConfig, TrainSettings
from .diffusion import DenoiserConfig, DiffusionTrainSettings
from .metrics import ExtractorConfig

ENV_VAR = "STROKESET_CONFIG"

DEFAULTS = {
    "seed": 0,
    # data
    "n_points": 64,
    "gamma": 50.0,
    "resolution": 64,
    "margin_scale": 0.8,
    "max_strokes": 32,
    "stroke_norm": True,
    # stroke autoencoder
    "d_h": 64,
    "enc_layers": 6,
    "enc_heads": 8,
    "ff_mult": 2,
    "d_f": 32,
    "d_img": 64,
    "channels": "4,8,16,32,64,128",
    "pooling": "attention",
    "image_branch": True,
    "lambda_vec": 10.0,
    "lambda_img": 10.0,
    "lambda_kl": 0.001,
    "lambda_ce": 0.1,
    "enc_steps": 1000,
    "enc_batch": 16,
    "enc_lr": 1e-4,
    "enc_warmup": 0,
    "enc_decay": "none",
    "enc_weight_decay": 0.01,
    # latent diffusion
    "v_mag": 0.1,
    "diff_layers": 4,
    "diff_heads": 4,
    "d_model": 64,
    "d_time": 64,
    "n_classes": 0,
    "split_hidden": 64,
    "T": 1000,
    "beta_start": 1e-4,
    "beta_end": 0.02,
    "sigma": "beta",
    "diff_steps": 1000,
    "diff_batch": 16,
    "diff_lr": 1e-4,
    "diff_warmup": 0,
    "diff_decay": "none",
    "diff_weight_decay": 0.01,
    # evaluation and output
    "metric_k": 20,
    "metric_resolution": 64,
    "metric_seed": 20240,
    "rdp_epsilon": 0.01,
    "svg_canvas": 256,
    "svg_stroke_width": 2.0,
}


class ConfigError(ValueError):
    pass


def _coerce(key, raw):
    default = DEFAULTS[key]
    if isinstance(raw, type(default)) and not (isinstance(default, float) and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {type(default).__name__}") from None
    return text


class RunConfig:
    """Resolved configuration: defaults, then a config file, then explicit overrides."""

    def __init__(self, values=None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _coerce(key, value)

    def __getitem__(self, key):
        return self.values[key]

    def update(self, mapping):
        for k, v in mapping.items():
            if v is not None:
                self.set(k, v)
        return self

    @classmethod
    def parse(cls, text, source="<config>"):
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
        try:
            return cls(values)
        except ConfigError as exc:
            raise ConfigError(f"{source}: {exc}") from None

    @classmethod
    def load(cls, path=None):
        """Read ``path``, else the file named by $STROKESET_CONFIG, else pure defaults."""
        path = path or os.environ.get(ENV_VAR)
        if not path:
            return cls()
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read(), path)

    def dumps(self):
        return "".join(f"{k}={self.values[k]}\n" for k in sorted(self.values))

    def as_meta(self):
        return {f"run.{k}": v for k, v in self.values.items()}

    # -- typed views

    def encoder(self):
        v = self.values
        return EncoderConfig(
            n_points=v["n_points"], d_h=v["d_h"], n_layers=v["enc_layers"], n_heads=v["enc_heads"],
            ff_mult=v["ff_mult"], d_f=v["d_f"], d_img=v["d_img"], resolution=v["resolution"],
            channels=tuple(int(c) for c in v["channels"].split(",")), pooling=v["pooling"],
            image_branch=v["image_branch"] and v["gamma"] > 0, lambda_vec=v["lambda_vec"],
            lambda_img=v["lambda_img"], lambda_kl=v["lambda_kl"], lambda_ce=v["lambda_ce"])

    def encoder_training(self):
        v = self.values
        return TrainSettings(steps=v["enc_steps"], batch_size=v["enc_batch"], lr=v["enc_lr"],
                             warmup_steps=v["enc_warmup"], decay=v["enc_decay"],
                             weight_decay=v["enc_weight_decay"])

    def denoiser(self):
        v = self.values
        return DenoiserConfig(
            d_latent=v["d_f"], n_layers=v["diff_layers"], n_heads=v["diff_heads"], d_model=v["d_model"],
            ff_mult=v["ff_mult"], max_strokes=v["max_strokes"], d_time=v["d_time"],
            n_classes=v["n_classes"], split_hidden=v["split_hidden"], v_mag=v["v_mag"], T=v["T"],
            beta_start=v["beta_start"], beta_end=v["beta_end"], sigma=v["sigma"],
            stroke_norm=v["stroke_norm"])

    def diffusion_training(self):
        v = self.values
        return DiffusionTrainSettings(steps=v["diff_steps"], batch_size=v["diff_batch"], lr=v["diff_lr"],
                                      warmup_steps=v["diff_warmup"], decay=v["diff_decay"],
                                      weight_decay=v["diff_weight_decay"])

    def extractor(self):
        v = self.values
        return ExtractorConfig(resolution=v["metric_resolution"], seed=v["metric_seed"],
                               rdp_epsilon=v["rdp_epsilon"])
