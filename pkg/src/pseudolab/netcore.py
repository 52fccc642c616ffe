"""Scalable temporal-convolution classifiers and their SGD optimizer.

Architecture, for a clip batch ``x`` of shape ``(B, T, spatial_dim)``::

    h = x @ W_embed + b_embed                       # per-frame linear embed
    repeat depth_blocks times:
        h = relu(temporal_conv(h, W_i) + b_i)       # kernel 3, no downsampling
    logits = mean_t(h) @ W_head + b_head

Every block has ``max(1, round(base_channels * width_factor))`` channels.
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .errors import ConfigError, NumericError

KERNEL_SIZE = 3

_CKPT_MAGIC = b"PLCKPT\x00\x00"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ScalableNetConfig:
    depth_blocks: int = 1
    width_factor: float = 1.0
    base_channels: int = 32
    num_classes: int = 10
    input_frames: int = 8
    spatial_dim: int = 64

    def validate(self) -> None:
        if self.depth_blocks < 1:
            raise ConfigError("depth_blocks must be a positive integer")
        if not 0.0 < self.width_factor <= 1.0:
            raise ConfigError("width_factor must lie in (0, 1]")
        for name in ("base_channels", "num_classes", "input_frames", "spatial_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def channels(self) -> int:
        return max(1, round(self.base_channels * self.width_factor))


class Schedule(enum.Enum):
    COSINE = "cosine"
    CONSTANT = "constant"


@dataclass(frozen=True)
class OptimizerConfig:
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    total_steps: int = 1
    schedule: Schedule = Schedule.COSINE

    def validate(self) -> None:
        if not self.base_lr > 0:
            raise ConfigError("base_lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")


@dataclass(eq=False)
class ParamStore:
    """Named parameters of one network with their gradient and momentum buffers."""

    config: ScalableNetConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name].data

    def __iter__(self):
        return iter(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {k: t.grad for k, t in self.tensors.items()}

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ParamStore":
        out = ParamStore(self.config)
        for k, t in self.tensors.items():
            out.tensors[k] = Tensor(t.data.copy(), requires_grad=True)
            out.tensors[k].grad = None if t.grad is None else t.grad.copy()
            out.velocity[k] = self.velocity[k].copy()
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def add(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = Tensor(value, requires_grad=True)
        self.tensors[name].zero_grad()
        self.velocity[name] = np.zeros_like(self.tensors[name].data)


def _layer_shapes(cfg: ScalableNetConfig) -> list[tuple[str, tuple[int, ...], int]]:
    C = cfg.channels
    shapes = [("embed.weight", (cfg.spatial_dim, C), cfg.spatial_dim), ("embed.bias", (C,), 0)]
    for i in range(cfg.depth_blocks):
        shapes.append((f"block{i}.weight", (KERNEL_SIZE, C, C), KERNEL_SIZE * C))
        shapes.append((f"block{i}.bias", (C,), 0))
    shapes.append(("head.weight", (C, cfg.num_classes), C))
    shapes.append(("head.bias", (cfg.num_classes,), 0))
    return shapes


def build_net(config: ScalableNetConfig, seed: int = 0) -> ParamStore:
    """Initialize a network: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = ParamStore(config)
    for name, shape, fan_in in _layer_shapes(config):
        if fan_in:
            bound = 1.0 / math.sqrt(fan_in)
            params.add(name, rng.uniform(-bound, bound, size=shape))
        else:
            params.add(name, np.zeros(shape))
    return params


def forward(params: ParamStore, clips) -> Tensor:
    """Logits ``(B, num_classes)`` for clips of shape ``(B, input_frames, spatial_dim)``."""
    cfg = params.config
    x = clips.data if isinstance(clips, Tensor) else np.asarray(clips, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != cfg.input_frames or x.shape[2] != cfg.spatial_dim:
        raise ValueError(
            f"expected clips of shape (B, {cfg.input_frames}, {cfg.spatial_dim}), got {x.shape}"
        )
    p = params.tensors
    h = ad.add(ad.matmul(x, p["embed.weight"]), p["embed.bias"])
    for i in range(cfg.depth_blocks):
        h = ad.relu(ad.add(ad.temporal_conv(h, p[f"block{i}.weight"]), p[f"block{i}.bias"]))
    h = ad.mean(h, axis=1)
    return ad.add(ad.matmul(h, p["head.weight"]), p["head.bias"])


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax received non-finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(params: ParamStore, clips) -> np.ndarray:
    """Detached class probabilities; no graph is recorded."""
    with no_grad():
        return softmax(forward(params, clips))


def _check_targets(targets, num_classes):
    t = np.atleast_1d(np.asarray(targets))
    if t.size and (t.min() < 0 or t.max() >= num_classes):
        raise ValueError(f"target class out of range [0, {num_classes})")
    return t.astype(np.int64)


def cross_entropy(logits, targets):
    """Mean ``-log softmax(logits)[target]`` over the batch.

    A :class:`Tensor` input returns a differentiable scalar Tensor; a plain
    array returns a float. 1-D logits are treated as a batch of one.
    """
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if z.ndim == 1:
        if isinstance(logits, Tensor):
            raise ValueError("Tensor logits must be 2-D (batch, classes)")
        z = z[None, :]
    t = _check_targets(targets, z.shape[-1])
    if len(t) != len(z):
        raise ValueError("one target per row required")
    if isinstance(logits, Tensor):
        return ad.weighted_cross_entropy(logits, t, np.full(len(t), 1.0 / len(t)))
    return float(-ad.log_softmax(z)[np.arange(len(t)), t].mean())


def cross_entropy_from_probs(probs, target: int) -> float:
    """``-ln p[target]`` for a probability vector."""
    p = np.asarray(probs, dtype=np.float64)
    _check_targets(target, p.shape[-1])
    return float(-np.log(p[target]))


def backward(loss: Tensor) -> None:
    """Backpropagate ``loss`` into the leaf gradients of every network it touches."""
    if not isinstance(loss, Tensor):
        raise RuntimeError("backward() needs the Tensor returned by a forward pass")
    loss.backward()


def lr_at(opt: OptimizerConfig, step: int) -> float:
    if opt.schedule is Schedule.CONSTANT:
        return opt.base_lr
    return cosine_lr(opt, step)


def cosine_lr(opt: OptimizerConfig, step: int) -> float:
    """Half-cosine decay from ``base_lr`` at step 0 to 0 at ``total_steps``."""
    if not 0 <= step <= opt.total_steps:
        raise ValueError(f"step {step} outside [0, {opt.total_steps}]")
    return 0.5 * opt.base_lr * (1.0 + math.cos(math.pi * step / opt.total_steps))


def sgd_step(params: ParamStore, opt: OptimizerConfig, step_index: int) -> float:
    """One SGD update with coupled weight decay; returns the learning rate used."""
    lr = lr_at(opt, step_index)
    for name, t in params.tensors.items():
        g = t.grad if t.grad is not None else 0.0
        v = params.velocity[name]
        v *= opt.momentum
        v += g
        if opt.weight_decay:
            v += opt.weight_decay * t.data
        t.data -= lr * v
    return lr


def save_checkpoint(params: ParamStore, path) -> Path:
    """Binary checkpoint.

    Layout (little-endian): 8 magic bytes, u32 version, u32 header length,
    UTF-8 ``key=value`` network config, u32 parameter count, then per
    parameter: u16 name length, name, u8 ndim, ndim x u32 shape, float64 data.
    """
    path = Path(path)
    cfg = params.config
    header = "".join(f"{k}={getattr(cfg, k)!r}\n" for k in cfg.__dataclass_fields__).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(params.tensors)))
        for name, t in params.tensors.items():
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return path


def load_checkpoint(path) -> ParamStore:
    raw = Path(path).read_bytes()
    if raw[:8] != _CKPT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 16
    fields = {}
    for line in raw[pos:pos + hlen].decode().splitlines():
        k, _, v = line.partition("=")
        fields[k] = float(v) if k == "width_factor" else int(v)
    pos += hlen
    params = ParamStore(replace(ScalableNetConfig(), **fields))
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, pos)
        name = raw[pos + 2:pos + 2 + n].decode()
        pos += 2 + n
        (ndim,) = struct.unpack_from("<B", raw, pos)
        shape = struct.unpack_from(f"<{ndim}I", raw, pos + 1)
        pos += 1 + 4 * ndim
        size = int(np.prod(shape))
        params.add(name, np.frombuffer(raw, "<f8", size, pos).reshape(shape).copy())
        pos += 8 * size
    return params
