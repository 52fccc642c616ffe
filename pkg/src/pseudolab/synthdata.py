"""Synthetic spatiotemporal classification benchmark.

Each video is a ``(raw_length, spatial_dim)`` array of frames. Classes come in
two kinds:

* spatial classes have a class-specific static template and no motion, so a
  frame-averaged classifier separates them easily;
* temporal classes all share one template whose amplitude is modulated by a
  sinusoid at a class-specific frequency with a random per-video phase, so the
  class is only visible through how frames change over time.

Randomness for video ``i`` of stream ``s`` derives from ``(seed, s, i)``, which
keeps generation order-independent and reproducible.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

TRAIN_STREAM = 0
VAL_STREAM = 1

_MAGIC = b"PLSYNDS\x00"
_VERSION = 1


class Kind(enum.Enum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"


class SplitScheme(enum.Enum):
    UNIFORM = "uniform"
    CATEGORY_WISE = "category_wise"


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 10
    spatial_class_count: int = 5
    temporal_class_count: int = 5
    videos_per_class: int = 200
    noise_sigma: float = 0.1
    seed: int = 0
    raw_length: int = 64
    spatial_dim: int = 64
    # Relative amplitude of the temporal modulation.
    modulation_depth: float = 0.5
    # Lowest temporal-class frequency and spacing, in cycles per raw_length.
    base_frequency: float = 1.0
    frequency_step: float = 0.5
    # Share of each spatial template that is class-specific; below 1 the
    # spatial classes also share a common component and are harder to tell apart.
    spatial_contrast: float = 1.0
    # Optional per-class video counts; overrides videos_per_class.
    class_counts: tuple[int, ...] | None = None

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if self.spatial_class_count < 0 or self.temporal_class_count < 0:
            raise ConfigError("class counts must be non-negative")
        if self.spatial_class_count + self.temporal_class_count != self.num_classes:
            raise ConfigError(
                f"spatial ({self.spatial_class_count}) + temporal "
                f"({self.temporal_class_count}) classes != num_classes ({self.num_classes})"
            )
        if self.videos_per_class < 1:
            raise ConfigError("videos_per_class must be >= 1")
        if self.class_counts is not None:
            if len(self.class_counts) != self.num_classes:
                raise ConfigError("class_counts must have one entry per class")
            if min(self.class_counts) < 1:
                raise ConfigError("every class needs at least one video")
        if not (self.noise_sigma >= 0 and np.isfinite(self.noise_sigma)):
            raise ConfigError("noise_sigma must be a finite value >= 0")
        if self.raw_length < 1 or self.spatial_dim < 1:
            raise ConfigError("raw_length and spatial_dim must be positive")
        if not 0.0 < self.spatial_contrast <= 1.0:
            raise ConfigError("spatial_contrast must be in (0, 1]")

    def counts(self) -> tuple[int, ...]:
        if self.class_counts is not None:
            return tuple(self.class_counts)
        return (self.videos_per_class,) * self.num_classes

    def kind_of(self, class_id: int) -> Kind:
        return Kind.SPATIAL if class_id < self.spatial_class_count else Kind.TEMPORAL

    @property
    def kinds(self) -> tuple[Kind, ...]:
        return tuple(self.kind_of(c) for c in range(self.num_classes))

    def frequency_of(self, class_id: int) -> float:
        k = class_id - self.spatial_class_count
        return self.base_frequency + k * self.frequency_step


@dataclass(frozen=True)
class ClipSpec:
    """Sparse sampling pattern: ``frames`` frames every ``stride`` raw frames."""

    frames: int
    stride: int

    @property
    def span(self) -> int:
        return self.frames * self.stride

    def max_offset(self, raw_length: int) -> int:
        return raw_length - self.span


@dataclass(frozen=True, eq=False)
class Video:
    frames: np.ndarray
    class_id: int
    kind: Kind
    index: int = -1


@dataclass(frozen=True, eq=False)
class Clip:
    frames: np.ndarray
    source_video_id: int
    stride: int
    offset: int


@dataclass(eq=False)
class Dataset:
    """Array-backed collection of videos.

    ``frames`` has shape ``(N, raw_length, spatial_dim)`` and is stored as
    float32, which is also the on-disk precision.
    """

    frames: np.ndarray
    labels: np.ndarray
    spec: DatasetSpec
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.ids is None:
            self.ids = np.arange(len(self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Video:
        c = int(self.labels[i])
        return Video(self.frames[i], c, self.spec.kind_of(c), int(self.ids[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def raw_length(self) -> int:
        return self.frames.shape[1]

    @property
    def kinds(self) -> np.ndarray:
        """Kind of every video, as an array of :class:`Kind`."""
        return np.array([self.spec.kind_of(int(c)) for c in self.labels], dtype=object)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.frames[indices], self.labels[indices], self.spec, self.ids[indices])

    def of_kind(self, kind: Kind) -> "Dataset":
        mask = np.array([self.spec.kind_of(int(c)) is kind for c in self.labels], dtype=bool)
        return self.subset(np.flatnonzero(mask))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.spec.num_classes)


def class_templates(spec: DatasetSpec) -> np.ndarray:
    """Static templates: one per spatial class, then the shared temporal one.

    Entries are N(0, 1/spatial_dim), so templates have unit expected norm.
    Returns an array of shape ``(spatial_class_count + 1, spatial_dim)``.
    """
    rng = np.random.default_rng([spec.seed, 0xC1A55])
    shape = (spec.spatial_class_count + 1, spec.spatial_dim)
    out = rng.standard_normal(shape) / np.sqrt(spec.spatial_dim)
    c = spec.spatial_contrast
    if c < 1.0:
        common = rng.standard_normal(spec.spatial_dim) / np.sqrt(spec.spatial_dim)
        S = spec.spatial_class_count
        out[:S] = c * out[:S] + np.sqrt(1.0 - c * c) * common
    return out


def _render(spec, templates, class_id, rng) -> np.ndarray:
    L, D = spec.raw_length, spec.spatial_dim
    phase = rng.uniform(0.0, 2 * np.pi)
    if spec.kind_of(class_id) is Kind.SPATIAL:
        clean = np.broadcast_to(templates[class_id], (L, D))
    else:
        t = np.arange(L)
        freq = spec.frequency_of(class_id)
        profile = 1.0 + spec.modulation_depth * np.sin(2 * np.pi * freq * t / L + phase)
        clean = profile[:, None] * templates[-1][None, :]
    if spec.noise_sigma > 0:
        return clean + spec.noise_sigma * rng.standard_normal((L, D))
    return np.array(clean)


def generate_dataset(spec: DatasetSpec, stream: int = TRAIN_STREAM, counts=None) -> Dataset:
    """Generate the videos of ``spec``, class by class.

    ``stream`` selects an independent set of videos sharing the same class
    templates; stream 0 is the training pool and stream 1 the held-out pool.
    ``counts`` overrides the per-class video counts.
    """
    spec.validate()
    counts = spec.counts() if counts is None else tuple(counts)
    templates = class_templates(spec)
    n = sum(counts)
    frames = np.empty((n, spec.raw_length, spec.spatial_dim), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    i = 0
    for c, count in enumerate(counts):
        for _ in range(count):
            rng = np.random.default_rng([spec.seed, 1 + stream, i])
            frames[i] = _render(spec, templates, c, rng)
            labels[i] = c
            i += 1
    return Dataset(frames, labels, spec)


@dataclass(eq=False)
class SplitResult:
    dataset: Dataset
    labeled_idx: np.ndarray
    unlabeled_idx: np.ndarray
    scheme: SplitScheme

    @property
    def labeled(self) -> list[tuple[Video, int]]:
        return [(self.dataset[i], int(self.dataset.labels[i])) for i in self.labeled_idx]

    @property
    def unlabeled(self) -> list[Video]:
        return [self.dataset[i] for i in self.unlabeled_idx]

    def labeled_set(self) -> Dataset:
        return self.dataset.subset(self.labeled_idx)

    def unlabeled_set(self) -> Dataset:
        return self.dataset.subset(self.unlabeled_idx)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _apportion(total: int, sizes: np.ndarray) -> np.ndarray:
    # Largest-remainder apportionment of `total` proportional to `sizes`.
    quotas = total * sizes / sizes.sum()
    base = np.floor(quotas + 1e-9).astype(np.int64)
    short = total - base.sum()
    if short > 0:
        order = np.argsort(-(quotas - base), kind="stable")
        base[order[:short]] += 1
    return base


def split_labeled(videos: Dataset, labeled_fraction: float,
                  scheme: SplitScheme = SplitScheme.UNIFORM, seed: int = 0) -> SplitResult:
    """Partition ``videos`` into labeled and unlabeled pools.

    ``UNIFORM`` takes ``round(labeled_fraction * videos_per_class)`` videos
    from every class; ``CATEGORY_WISE`` takes ``labeled_fraction`` of the whole
    set, distributed over classes in proportion to class sizes.
    """
    if not 0.0 < labeled_fraction < 1.0:
        raise ConfigError("labeled_fraction must lie in (0, 1)")
    scheme = SplitScheme(scheme)
    sizes = videos.class_counts()
    present = sizes > 0
    if scheme is SplitScheme.UNIFORM:
        per_class = _round_half_up(labeled_fraction * len(videos) / present.sum())
        if per_class < 1:
            raise ConfigError(f"labeled_fraction={labeled_fraction} yields 0 labeled videos per class")
        if np.any(sizes[present] < per_class):
            raise ConfigError("some class is too small for a uniform split")
        take = np.where(present, per_class, 0)
    else:
        total = _round_half_up(labeled_fraction * len(videos))
        take = _apportion(total, sizes.astype(np.float64))
        if np.any(take[present] < 1):
            raise ConfigError(f"labeled_fraction={labeled_fraction} yields 0 labeled videos in some class")

    rng = np.random.default_rng(seed)
    labeled = []
    for c in range(len(sizes)):
        members = np.flatnonzero(videos.labels == c)
        labeled.append(members[rng.permutation(len(members))[: take[c]]])
    labeled_idx = np.sort(np.concatenate(labeled))
    mask = np.ones(len(videos), dtype=bool)
    mask[labeled_idx] = False
    return SplitResult(videos, labeled_idx, np.flatnonzero(mask), scheme)


def clip_indices(num_frames: int, stride: int, offset: int, raw_length: int) -> np.ndarray:
    if num_frames < 1 or stride < 1 or offset < 0:
        raise ValueError("num_frames and stride must be positive, offset non-negative")
    if num_frames * stride + offset > raw_length:
        raise ValueError(
            f"clip {num_frames}x{stride} at offset {offset} exceeds raw length {raw_length}"
        )
    return offset + stride * np.arange(num_frames)


def sample_clip(video: Video, num_frames: int, stride: int, offset: int = 0) -> Clip:
    """Frames ``offset, offset + stride, ...`` of ``video``, ``num_frames`` of them."""
    idx = clip_indices(num_frames, stride, offset, len(video.frames))
    return Clip(video.frames[idx], video.index, stride, offset)


def gather_clips(frames: np.ndarray, clip: ClipSpec, offsets) -> np.ndarray:
    """Batched :func:`sample_clip`: ``frames`` is ``(N, L, D)``, one offset per video.

    Returns float64 clips of shape ``(N, clip.frames, D)``.
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    L = frames.shape[1]
    if offsets.size and (offsets.min() < 0 or offsets.max() > clip.max_offset(L)):
        raise ValueError(f"offsets out of range for {clip.frames}x{clip.stride} in {L} frames")
    idx = offsets[:, None] + clip.stride * np.arange(clip.frames)[None, :]
    return frames[np.arange(len(offsets))[:, None], idx].astype(np.float64)


def save_dataset(dataset: Dataset, path) -> Path:
    """Write ``dataset`` as a headered binary file plus a ``.manifest`` sidecar.

    Layout (little-endian): 8 magic bytes, u32 version, u32 K, u32 N,
    u32 raw_length, u32 spatial_dim, K x u32 class counts, N x u32 labels,
    then N * raw_length * spatial_dim float32 values, frame-major.
    """
    path = Path(path)
    spec = dataset.spec
    N, L, D = dataset.frames.shape
    K = spec.num_classes
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<5I", _VERSION, K, N, L, D))
        fh.write(dataset.class_counts().astype("<u4").tobytes())
        fh.write(dataset.labels.astype("<u4").tobytes())
        fh.write(np.ascontiguousarray(dataset.frames, dtype="<f4").tobytes())
    manifest = {
        "num_classes": K,
        "spatial_class_count": spec.spatial_class_count,
        "temporal_class_count": spec.temporal_class_count,
        "videos_per_class": spec.videos_per_class,
        "noise_sigma": repr(spec.noise_sigma),
        "seed": spec.seed,
        "raw_length": L,
        "spatial_dim": D,
        "modulation_depth": repr(spec.modulation_depth),
        "base_frequency": repr(spec.base_frequency),
        "frequency_step": repr(spec.frequency_step),
        "spatial_contrast": repr(spec.spatial_contrast),
        "class_counts": ",".join(str(int(c)) for c in dataset.class_counts()),
        "kinds": ",".join("S" if k is Kind.SPATIAL else "T" for k in spec.kinds),
    }
    text = "".join(f"{k}={v}\n" for k, v in manifest.items())
    path.with_name(path.name + ".manifest").write_text(text, encoding="utf-8")
    return path


def _read_manifest(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def load_dataset(path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a dataset file")
    version, K, N, L, D = struct.unpack_from("<5I", raw, 8)
    if version != _VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    pos = 8 + 20
    counts = np.frombuffer(raw, "<u4", K, pos)
    pos += 4 * K
    labels = np.frombuffer(raw, "<u4", N, pos).astype(np.int64)
    pos += 4 * N
    frames = np.frombuffer(raw, "<f4", N * L * D, pos).reshape(N, L, D).astype(np.float32)
    m = _read_manifest(path.with_name(path.name + ".manifest"))
    kinds = m["kinds"].split(",")
    spec = DatasetSpec(
        num_classes=K,
        spatial_class_count=kinds.count("S"),
        temporal_class_count=kinds.count("T"),
        videos_per_class=int(m["videos_per_class"]),
        noise_sigma=float(m["noise_sigma"]),
        seed=int(m["seed"]),
        raw_length=L,
        spatial_dim=D,
        modulation_depth=float(m["modulation_depth"]),
        base_frequency=float(m["base_frequency"]),
        frequency_step=float(m["frequency_step"]),
        spatial_contrast=float(m.get("spatial_contrast", 1.0)),
        class_counts=None if len(set(counts.tolist())) == 1 and counts[0] == int(m["videos_per_class"])
        else tuple(int(c) for c in counts),
    )
    return Dataset(frames, labels, spec)
