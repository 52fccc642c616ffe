"""Clip augmentations and the two-view temporal sampler.

All spatial transforms are drawn once per clip and applied identically to
every frame, so a strong-augmented clip keeps its temporal structure. Functions
accept a single clip ``(T, D)`` (or a :class:`~pseudolab.synthdata.Clip`) or a
batch ``(B, T, D)``; batches get independent draws per clip.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import ConfigError
from .synthdata import Clip, ClipSpec, Video, gather_clips


class AugKind(enum.Enum):
    STANDARD = "standard"
    WEAK = "weak"
    STRONG = "strong"


TRANSFORMS = ("scale", "bias", "permute", "blur")

SCALE_RANGE = (0.6, 1.4)
# In units of the clip's RMS value.
BIAS_RANGE = (-0.5, 0.5)
PERMUTE_BLOCK = 4
BLUR_SIGMA_RANGE = (0.5, 1.5)


@dataclass(frozen=True)
class AugmentationSpec:
    kind: AugKind = AugKind.WEAK
    jitter_sigma: float = 0.01
    cutout_fraction: float = 0.0
    transform_count: int = 0

    def validate(self) -> None:
        if self.jitter_sigma < 0:
            raise ConfigError("jitter_sigma must be non-negative")
        if not 0.0 <= self.cutout_fraction < 1.0:
            raise ConfigError("cutout_fraction must lie in [0, 1)")
        if self.transform_count < 0:
            raise ConfigError("transform_count must be >= 0")
        if self.kind is AugKind.WEAK and (self.transform_count or self.cutout_fraction):
            raise ConfigError("weak augmentation allows jitter only")


WEAK = AugmentationSpec(AugKind.WEAK, 0.01, 0.0, 0)
STANDARD = AugmentationSpec(AugKind.STANDARD, 0.01, 0.0, 1)
STRONG = AugmentationSpec(AugKind.STRONG, 0.01, 0.25, 2)


@dataclass(frozen=True)
class TemporalViewSpec:
    primary_frames: int = 8
    primary_stride: int = 8
    aux_frames: int = 16
    aux_stride: int = 4
    time_offset: int = 0

    @property
    def primary(self) -> ClipSpec:
        return ClipSpec(self.primary_frames, self.primary_stride)

    @property
    def aux(self) -> ClipSpec:
        return ClipSpec(self.aux_frames, self.aux_stride)

    def validate(self, raw_length: int) -> None:
        if min(self.primary_frames, self.primary_stride, self.aux_frames, self.aux_stride) < 1:
            raise ConfigError("frames and strides must be positive")
        if self.time_offset < 0:
            raise ConfigError("time_offset must be non-negative")
        for name, clip in (("primary", self.primary), ("aux", self.aux)):
            if clip.span > raw_length:
                raise ConfigError(
                    f"{name} view {clip.frames}x{clip.stride} does not fit in {raw_length} frames"
                )


def _as_batch(x):
    frames = x.frames if isinstance(x, Clip) else np.asarray(x, dtype=np.float64)
    single = frames.ndim == 2
    return (frames[None] if single else frames).astype(np.float64), single


def _restore(x, out, single):
    out = out[0] if single else out
    return replace(x, frames=out) if isinstance(x, Clip) else out


def _jitter(batch, sigma, rng):
    if sigma == 0:
        return batch
    B, _, D = batch.shape
    return batch + sigma * rng.standard_normal((B, 1, D))


def weak_augment(clip, rng, spec: AugmentationSpec = WEAK):
    """Add one jitter field of scale ``spec.jitter_sigma`` to every frame."""
    batch, single = _as_batch(clip)
    return _restore(clip, _jitter(batch, spec.jitter_sigma, rng), single)


def _apply_transform(x, name, rng):
    # x is one clip (T, D); the same draw applies to all frames.
    if name == "scale":
        return x * rng.uniform(*SCALE_RANGE)
    if name == "bias":
        return x + rng.uniform(*BIAS_RANGE) * np.sqrt(np.mean(x * x))
    if name == "permute":
        D = x.shape[-1]
        perm = np.arange(D)
        for start in range(0, D, PERMUTE_BLOCK):
            block = perm[start:start + PERMUTE_BLOCK]
            perm[start:start + PERMUTE_BLOCK] = block[rng.permutation(len(block))]
        return x[:, perm]
    if name == "blur":
        return gaussian_filter1d(x, rng.uniform(*BLUR_SIGMA_RANGE), axis=-1, mode="nearest")
    raise ValueError(f"unknown transform {name!r}")


def cutout_length(fraction: float, spatial_dim: int) -> int:
    return int(round(fraction * spatial_dim))


def augment(clip, rng, spec: AugmentationSpec):
    """Apply ``spec``: random transforms, then jitter, then one spatial cutout."""
    batch, single = _as_batch(clip)
    B, _, D = batch.shape
    out = np.empty_like(batch)
    for b in range(B):
        x = batch[b]
        for name in rng.choice(TRANSFORMS, size=spec.transform_count):
            x = _apply_transform(x, name, rng)
        out[b] = x
    out = _jitter(out, spec.jitter_sigma, rng)
    n_cut = cutout_length(spec.cutout_fraction, D)
    if n_cut:
        starts = rng.integers(0, D - n_cut + 1, size=B)
        for b in range(B):
            out[b, :, starts[b]:starts[b] + n_cut] = 0.0
    return _restore(clip, out, single)


def strong_augment(clip, rng, spec: AugmentationSpec = STRONG):
    return augment(clip, rng, spec)


def standard_augment(clip, rng, spec: AugmentationSpec = STANDARD):
    return augment(clip, rng, spec)


def view_offsets(n: int, spec: TemporalViewSpec, raw_length: int, rng):
    """Random clip offsets for the primary and auxiliary views of ``n`` videos.

    The primary offset is drawn uniformly from the range legal for both views;
    the auxiliary offset is shifted by ``time_offset`` and clamped.
    """
    spec.validate(raw_length)
    max_f = spec.primary.max_offset(raw_length)
    max_a = spec.aux.max_offset(raw_length)
    base = rng.integers(0, min(max_f, max_a) + 1, size=n)
    return base, np.minimum(base + spec.time_offset, max_a)


def temporal_views(video: Video, spec: TemporalViewSpec, rng) -> tuple[Clip, Clip]:
    """Two clips of the same video: one per network, ``time_offset`` frames apart."""
    frames = np.asarray(video.frames)
    off_f, off_a = view_offsets(1, spec, len(frames), rng)
    clip_f = gather_clips(frames[None], spec.primary, off_f)[0]
    clip_a = gather_clips(frames[None], spec.aux, off_a)[0]
    return (Clip(clip_f, video.index, spec.primary_stride, int(off_f[0])),
            Clip(clip_a, video.index, spec.aux_stride, int(off_a[0])))
