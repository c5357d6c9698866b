"""The quality estimation network.

A fixed STFT encoder feeds log-power-spectrum features into a stack of
dilated depthwise-separable convolution blocks with residual
connections. The trunk output drives two branches: a reconstruction
branch that predicts an unbounded complex ratio mask, applies it to the
input spectrogram and resynthesizes a waveform; and a quality branch
that maps every frame to class logits, averages them over time and
applies a softmax to obtain a distribution over score classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import labels as lb
from . import signal as sig

__all__ = ["ModelConfig", "ModelOutput", "init_params", "forward", "forward_graph", "predict_quality"]


@dataclass
class ModelConfig:
    sample_rate: int = 16000
    bottleneck_channels: int = 256
    conv_channels: int = 512
    kernel_size: int = 3
    blocks_per_repeat: int = 8
    repeats: int = 4
    n_classes: int = 100  # total classes, padding included
    norm: str = "batch"  # "batch" | "global_layer"
    dtype: str = "float32"
    stft: sig.StftConfig = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("bottleneck_channels", "conv_channels", "blocks_per_repeat", "repeats", "n_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd for same-length padding")
        if self.norm not in ("batch", "global_layer"):
            raise ValueError(f"unknown norm kind {self.norm!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.stft is None:
            self.stft = sig.StftConfig.for_sample_rate(self.sample_rate)
        elif self.stft.sample_rate != self.sample_rate:
            raise ValueError("stft config sample rate disagrees with model sample rate")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def dilations(self) -> list[int]:
        return [2**b for b in range(self.blocks_per_repeat)]

    @property
    def receptive_field(self) -> int:
        """Trunk receptive field in frames."""
        per_block = self.kernel_size - 1
        return 1 + per_block * self.repeats * (2**self.blocks_per_repeat - 1)

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "bottleneck_channels": self.bottleneck_channels,
            "conv_channels": self.conv_channels,
            "kernel_size": self.kernel_size,
            "blocks_per_repeat": self.blocks_per_repeat,
            "repeats": self.repeats,
            "n_classes": self.n_classes,
            "norm": self.norm,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelOutput:
    """Forward results for a single utterance."""

    reconstruction: sig.Waveform
    logits: np.ndarray  # (n_classes, T)
    pooled: np.ndarray  # (n_classes,)
    distribution: np.ndarray  # (n_classes,)


@dataclass
class GraphOutput:
    """Graph tensors from a batched forward pass, consumed by the losses."""

    reconstruction: dc.Tensor | None  # (B, L_out)
    logits: dc.Tensor  # (B, n_classes, T)
    pooled: dc.Tensor  # (B, n_classes)
    distribution: dc.Tensor  # (B, n_classes)
    n_frames: int


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(cfg: ModelConfig, seed: int = 0) -> dict:
    """Create all trainable tensors plus the normalization running buffers.

    1x1 and depthwise kernels use fan-in-scaled uniform init. The quality
    head starts at zero so an untrained model emits the uniform
    distribution (decoded score 2.0), which keeps early distribution-loss
    gradients well behaved.
    """
    rng = np.random.default_rng(seed)
    dt = cfg.np_dtype
    f_bins = cfg.stft.n_bins
    cb, cc = cfg.bottleneck_channels, cfg.conv_channels
    params: dict[str, dc.Tensor] = {}

    def param(name, values):
        params[name] = dc.parameter(values)

    def buffer(name, values):
        params[name] = dc.Tensor(values, requires_grad=False)

    param("entry.w", _uniform(rng, (cb, f_bins), f_bins, dt))
    param("entry.b", _uniform(rng, (cb,), f_bins, dt))
    for r in range(cfg.repeats):
        for x, _d in enumerate(cfg.dilations):
            p = f"block{r}.{x}."
            param(p + "pw1.w", _uniform(rng, (cc, cb), cb, dt))
            param(p + "pw1.b", _uniform(rng, (cc,), cb, dt))
            param(p + "act1.slope", np.full(cc, 0.25, dtype=dt))
            param(p + "norm1.gamma", np.ones(cc, dtype=dt))
            param(p + "norm1.beta", np.zeros(cc, dtype=dt))
            buffer(p + "norm1.run_mean", np.zeros(cc, dtype=dt))
            buffer(p + "norm1.run_var", np.ones(cc, dtype=dt))
            param(p + "dw.kernel", _uniform(rng, (cc, cfg.kernel_size), cfg.kernel_size, dt))
            param(p + "dw.b", _uniform(rng, (cc,), cfg.kernel_size, dt))
            param(p + "act2.slope", np.full(cc, 0.25, dtype=dt))
            param(p + "norm2.gamma", np.ones(cc, dtype=dt))
            param(p + "norm2.beta", np.zeros(cc, dtype=dt))
            buffer(p + "norm2.run_mean", np.zeros(cc, dtype=dt))
            buffer(p + "norm2.run_var", np.ones(cc, dtype=dt))
            param(p + "pw2.w", _uniform(rng, (cb, cc), cc, dt))
            param(p + "pw2.b", _uniform(rng, (cb,), cc, dt))
    for head in ("mask_real", "mask_imag"):
        param(head + ".w", _uniform(rng, (f_bins, cb), cb, dt))
        param(head + ".b", _uniform(rng, (f_bins,), cb, dt))
    param("quality.w", np.zeros((cfg.n_classes, cb), dtype=dt))
    param("quality.b", np.zeros(cfg.n_classes, dtype=dt))
    return params


def _norm(cfg, params, prefix, x, training):
    if cfg.norm == "batch":
        return dc.batch_norm(
            x,
            params[prefix + "gamma"],
            params[prefix + "beta"],
            params[prefix + "run_mean"],
            params[prefix + "run_var"],
            training=training,
        )
    return dc.global_layer_norm(x, params[prefix + "gamma"], params[prefix + "beta"])


def conv_block(x, cfg: ModelConfig, params: dict, repeat: int, block: int, training: bool) -> dc.Tensor:
    """One residual block: 1x1 expand, PReLU, norm, dilated depthwise, PReLU, norm, 1x1 project."""
    p = f"block{repeat}.{block}."
    dilation = cfg.dilations[block]
    u = dc.conv1d_pointwise(x, params[p + "pw1.w"], params[p + "pw1.b"])
    u = dc.prelu(u, params[p + "act1.slope"])
    u = _norm(cfg, params, p + "norm1.", u, training)
    u = dc.conv1d_depthwise_dilated(u, params[p + "dw.kernel"], params[p + "dw.b"], dilation)
    u = dc.prelu(u, params[p + "act2.slope"])
    u = _norm(cfg, params, p + "norm2.", u, training)
    u = dc.conv1d_pointwise(u, params[p + "pw2.w"], params[p + "pw2.b"])
    return dc.add(x, u)


def forward_graph(
    batch_samples: np.ndarray,
    cfg: ModelConfig,
    params: dict,
    training: bool = False,
    compute_reconstruction: bool = True,
) -> GraphOutput:
    """Run the network over a (B, L) batch of equal-length waveforms.

    Returns graph tensors so losses composed on top backpropagate into
    the parameters. The STFT features and the input spectrogram enter the
    graph as constants.
    """
    batch_samples = np.asarray(batch_samples, dtype=np.float64)
    if batch_samples.ndim != 2:
        raise ValueError(f"expected a (B, L) sample batch, got {batch_samples.shape}")
    dt = cfg.np_dtype
    specs = np.stack(
        [sig.stft(sig.Waveform(row, cfg.sample_rate), cfg.stft) for row in batch_samples]
    )  # (B, F, T) complex
    feats = dc.constant(sig.lps(specs).astype(dt))
    n_frames = specs.shape[2]

    h = dc.conv1d_pointwise(feats, params["entry.w"], params["entry.b"])
    for r in range(cfg.repeats):
        for x in range(cfg.blocks_per_repeat):
            h = conv_block(h, cfg, params, r, x, training)

    recon = None
    if compute_reconstruction:
        mask_r = dc.conv1d_pointwise(h, params["mask_real.w"], params["mask_real.b"])
        mask_i = dc.conv1d_pointwise(h, params["mask_imag.w"], params["mask_imag.b"])
        masked = dc.complex_mask_apply(
            mask_r,
            mask_i,
            dc.constant(specs.real.astype(dt)),
            dc.constant(specs.imag.astype(dt)),
        )
        recon = dc.istft_synthesis(masked, cfg.stft)

    logits = dc.conv1d_pointwise(h, params["quality.w"], params["quality.b"])
    pooled = dc.mean(logits, axis=2)
    # The softmax runs in float64 regardless of the training precision so
    # the output is a valid distribution at tight tolerance.
    distribution = dc.softmax(dc.cast(pooled, np.float64), axis=1)
    return GraphOutput(recon, logits, pooled, distribution, n_frames)


def forward(wave: sig.Waveform, cfg: ModelConfig, params: dict, mode: str = "eval") -> ModelOutput:
    """Single-utterance forward pass."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if wave.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"waveform rate {wave.sample_rate} does not match model rate {cfg.sample_rate}"
        )
    out = forward_graph(wave.samples[None, :], cfg, params, training=(mode == "train"))
    return ModelOutput(
        reconstruction=sig.Waveform(out.reconstruction.values[0].astype(np.float64), cfg.sample_rate),
        logits=out.logits.values[0],
        pooled=out.pooled.values[0],
        distribution=out.distribution.values[0],
    )


def predict_quality(
    wave: sig.Waveform,
    cfg: ModelConfig,
    params: dict,
    quantizer: lb.QuantizerConfig,
    decoder: str = "expect",
) -> float:
    """Decode the predicted class distribution into a score."""
    if quantizer.n_total != cfg.n_classes:
        raise ValueError(
            f"quantizer n_total {quantizer.n_total} does not match model classes {cfg.n_classes}"
        )
    dist = forward(wave, cfg, params, mode="eval").distribution
    if decoder == "expect":
        return lb.decode_expect(dist, quantizer)
    if decoder == "max":
        return lb.decode_max(dist, quantizer)
    raise ValueError(f"unknown decoder {decoder!r}")
