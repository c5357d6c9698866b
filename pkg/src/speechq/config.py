"""Declarative run configuration.

A run is described by an INI-style text file with [model], [quantizer],
[training], [data], [simulate] and [output] sections of key = value
pairs. Validation is exhaustive and happens before any work starts; an
invalid configuration never produces partial output.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .labels import QuantizerConfig
from .model import ModelConfig

__all__ = ["ConfigError", "TrainingConfig", "SimulateConfig", "RunConfig"]


class ConfigError(ValueError):
    """Raised for unusable run configurations."""


@dataclass
class TrainingConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 4
    crop_seconds: float = 1.0
    max_steps: int = 1000
    seed: int = 0
    recon_weight: float = 1.0  # weight on the reconstruction term; 0 trains quality only
    rank_loss: bool = False
    rank_weight: float = 1.0
    label_kind: str = "one-hot"  # "one-hot" | "soft"
    td_mse_reduction: str = "sum"  # "sum" (plain squared norm) | "mean" (length-normalized)
    val_every: int = 0  # 0: validate only at the end


@dataclass
class SimulateConfig:
    count: int = 20
    holdout_count: int = 0
    duration_seconds: float = 1.0
    seed: int = 0
    snr_lo: float = -12.0
    snr_hi: float = 30.0
    perturb_prob: float = 0.0
    rir_paths: list = field(default_factory=list)


@dataclass
class RunConfig:
    model: ModelConfig
    quantizer: QuantizerConfig
    training: TrainingConfig
    simulate: SimulateConfig
    manifest: str | None = None
    val_manifest: str | None = None
    out_dir: str = "runs/out"

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "RunConfig":
        """Parse and validate a config file, applying flag overrides."""
        path = os.fspath(path)
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
        return cls.from_parser(parser, base=os.path.dirname(os.path.abspath(path)), overrides=overrides)

    @classmethod
    def from_parser(cls, parser, base: str = ".", overrides: dict | None = None) -> "RunConfig":
        errors: list[str] = []
        known_sections = {"model", "quantizer", "training", "data", "simulate", "output"}
        for section in parser.sections():
            if section not in known_sections:
                errors.append(f"unknown section [{section}]")

        def read(section, key, kind, default):
            if not parser.has_option(section, key):
                return default
            raw = parser.get(section, key)
            try:
                if kind is bool:
                    return parser.getboolean(section, key)
                return kind(raw)
            except ValueError:
                errors.append(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}")
                return default

        def check_keys(section, allowed):
            if parser.has_section(section):
                for key in parser.options(section):
                    if key not in allowed:
                        errors.append(f"unknown key {key!r} in section [{section}]")

        check_keys(
            "model",
            {
                "sample_rate",
                "bottleneck_channels",
                "conv_channels",
                "kernel_size",
                "blocks_per_repeat",
                "repeats",
                "n_classes",
                "norm",
                "dtype",
            },
        )
        check_keys("quantizer", {"n_classes", "pad"})
        check_keys(
            "training",
            {
                "lr",
                "beta1",
                "beta2",
                "batch_size",
                "crop_seconds",
                "max_steps",
                "seed",
                "recon_weight",
                "rank_loss",
                "rank_weight",
                "label_kind",
                "td_mse_reduction",
                "val_every",
            },
        )
        check_keys("data", {"manifest", "val_manifest"})
        check_keys(
            "simulate",
            {"count", "holdout_count", "duration_seconds", "seed", "snr_lo", "snr_hi", "perturb_prob", "rir_paths"},
        )
        check_keys("output", {"dir"})

        training = TrainingConfig(
            lr=read("training", "lr", float, 1e-3),
            beta1=read("training", "beta1", float, 0.9),
            beta2=read("training", "beta2", float, 0.999),
            batch_size=read("training", "batch_size", int, 4),
            crop_seconds=read("training", "crop_seconds", float, 1.0),
            max_steps=read("training", "max_steps", int, 1000),
            seed=read("training", "seed", int, 0),
            recon_weight=read("training", "recon_weight", float, 1.0),
            rank_loss=read("training", "rank_loss", bool, False),
            rank_weight=read("training", "rank_weight", float, 1.0),
            label_kind=read("training", "label_kind", str, "one-hot"),
            td_mse_reduction=read("training", "td_mse_reduction", str, "sum"),
            val_every=read("training", "val_every", int, 0),
        )
        if overrides and overrides.get("seed") is not None:
            training.seed = int(overrides["seed"])

        n_classes = read("quantizer", "n_classes", int, 100)
        pad_raw = read("quantizer", "pad", int, -1)
        if training.label_kind not in ("one-hot", "soft"):
            errors.append(f"label_kind must be one-hot or soft, got {training.label_kind!r}")
            training.label_kind = "one-hot"
        expected_pad = 2 if training.label_kind == "soft" else 0
        pad = expected_pad if pad_raw < 0 else pad_raw
        if pad != expected_pad:
            errors.append(
                f"quantizer pad = {pad} is inconsistent with label_kind = {training.label_kind}"
                f" (expected {expected_pad})"
            )
        try:
            quantizer = QuantizerConfig(n_classes=n_classes, pad=max(pad, 0))
        except ValueError as exc:
            errors.append(str(exc))
            quantizer = QuantizerConfig(n_classes=100, pad=expected_pad)

        model_classes = read("model", "n_classes", int, quantizer.n_total)
        if model_classes != quantizer.n_total:
            errors.append(
                f"model n_classes = {model_classes} must equal quantizer classes + padding"
                f" = {quantizer.n_total}"
            )
        try:
            model = ModelConfig(
                sample_rate=read("model", "sample_rate", int, 16000),
                bottleneck_channels=read("model", "bottleneck_channels", int, 256),
                conv_channels=read("model", "conv_channels", int, 512),
                kernel_size=read("model", "kernel_size", int, 3),
                blocks_per_repeat=read("model", "blocks_per_repeat", int, 8),
                repeats=read("model", "repeats", int, 4),
                n_classes=quantizer.n_total,
                norm=read("model", "norm", str, "batch"),
                dtype=read("model", "dtype", str, "float32"),
            )
        except ValueError as exc:
            errors.append(str(exc))
            model = ModelConfig(n_classes=quantizer.n_total)

        simulate = SimulateConfig(
            count=read("simulate", "count", int, 20),
            holdout_count=read("simulate", "holdout_count", int, 0),
            duration_seconds=read("simulate", "duration_seconds", float, 1.0),
            seed=read("simulate", "seed", int, 0),
            snr_lo=read("simulate", "snr_lo", float, -12.0),
            snr_hi=read("simulate", "snr_hi", float, 30.0),
            perturb_prob=read("simulate", "perturb_prob", float, 0.0),
            rir_paths=[
                p.strip()
                for p in read("simulate", "rir_paths", str, "").split(",")
                if p.strip()
            ],
        )

        def resolve(p):
            return p if (p is None or os.path.isabs(p)) else os.path.join(base, p)

        manifest = resolve(read("data", "manifest", str, None))
        val_manifest = resolve(read("data", "val_manifest", str, None))
        out_dir = resolve(read("output", "dir", str, "runs/out"))
        if overrides and overrides.get("out") is not None:
            out_dir = overrides["out"]

        for name, value in (
            ("lr", training.lr),
            ("batch_size", training.batch_size),
            ("crop_seconds", training.crop_seconds),
            ("max_steps", training.max_steps),
        ):
            if value <= 0:
                errors.append(f"training {name} must be positive, got {value}")
        if not (0.0 < training.beta1 < 1.0 and 0.0 < training.beta2 < 1.0):
            errors.append("adam betas must lie in (0, 1)")
        if training.recon_weight < 0:
            errors.append("recon_weight must be non-negative")
        if training.td_mse_reduction not in ("sum", "mean"):
            errors.append(f"td_mse_reduction must be sum or mean, got {training.td_mse_reduction!r}")
        if simulate.count < 0 or simulate.holdout_count < 0:
            errors.append("simulate counts must be non-negative")
        if simulate.duration_seconds < 0.2:
            errors.append("simulate duration_seconds must be at least 0.2")
        if not (0.0 <= simulate.perturb_prob <= 1.0):
            errors.append("perturb_prob must lie in [0, 1]")
        if simulate.snr_hi < simulate.snr_lo:
            errors.append("snr_hi must be >= snr_lo")

        if errors:
            raise ConfigError("invalid configuration:\n" + "\n".join(f"  - {e}" for e in errors))
        return cls(
            model=model,
            quantizer=quantizer,
            training=training,
            simulate=simulate,
            manifest=manifest,
            val_manifest=val_manifest,
            out_dir=out_dir,
        )
