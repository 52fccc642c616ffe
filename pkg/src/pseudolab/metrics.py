"""Diagnostics over trained networks and training logs.

Every metric can be exported as a CSV block: one header line naming the
columns, then one line per row. Plotting is left to external tools.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ReportingError
from .netcore import ParamStore, predict_proba
from .pseudolabel import BatchDecisions, meets
from .synthdata import ClipSpec, Dataset, gather_clips


def csv_block(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# --------------------------------------------------------------------------
# pseudo-label ratio


def _confident_targets(decisions):
    if isinstance(decisions, BatchDecisions):
        return np.asarray(decisions.confident_F, bool), np.asarray(decisions.target_F)
    if isinstance(decisions, tuple) and len(decisions) == 2 and \
            isinstance(decisions[0], np.ndarray):
        return np.asarray(decisions[0], bool), np.asarray(decisions[1])
    decisions = list(decisions)
    return (np.array([d.confident for d in decisions], dtype=bool),
            np.array([d.target_class for d in decisions], dtype=np.int64))


def pseudo_label_ratio(decisions, true_labels, total: int | None = None) -> float:
    """Fraction of the unlabeled pool with a confident and correct pseudo-label.

    ``decisions`` is a :class:`BatchDecisions` (primary side), a sequence of
    :class:`PseudoLabelDecision`, or a ``(confident, target)`` array pair.
    ``total`` defaults to the number of decisions.
    """
    confident, target = _confident_targets(decisions)
    truth = np.asarray(true_labels)
    if len(confident) != len(truth):
        raise ValueError(f"{len(confident)} decisions but {len(truth)} labels")
    total = len(truth) if total is None else total
    if total <= 0:
        raise ValueError("unlabeled pool is empty")
    return float(np.count_nonzero(confident & (target == truth))) / total


# --------------------------------------------------------------------------
# per-class accuracy


@dataclass(frozen=True)
class ClassAccuracyTable:
    correct: np.ndarray
    totals: np.ndarray

    def __post_init__(self):
        if self.correct.shape != self.totals.shape:
            raise ValueError("correct and totals must have the same shape")
        if np.any(self.correct < 0) or np.any(self.correct > self.totals):
            raise ValueError("need 0 <= correct <= totals")

    @classmethod
    def from_predictions(cls, predicted, truth, num_classes: int) -> "ClassAccuracyTable":
        predicted, truth = np.asarray(predicted), np.asarray(truth)
        if predicted.shape != truth.shape:
            raise ValueError("predictions and labels must align")
        totals = np.bincount(truth, minlength=num_classes)
        correct = np.bincount(truth[predicted == truth], minlength=num_classes)
        return cls(correct, totals)

    @classmethod
    def from_accuracy(cls, accuracy) -> "ClassAccuracyTable":
        """A table with unit totals; handy when only accuracies are known."""
        acc = np.asarray(accuracy, dtype=np.float64)
        return cls(acc, np.ones_like(acc))

    @property
    def num_classes(self) -> int:
        return len(self.totals)

    @property
    def accuracy(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.totals > 0, self.correct / np.maximum(self.totals, 1), np.nan)

    def mean_over(self, classes) -> float:
        """Pooled accuracy over a subset of classes."""
        classes = np.asarray(classes, dtype=np.int64)
        n = self.totals[classes].sum()
        return float(self.correct[classes].sum() / n) if n else float("nan")


def class_accuracy(net: ParamStore, data: Dataset, num_clips: int, clip: ClipSpec) -> ClassAccuracyTable:
    from .trainer import infer_batch

    pred = infer_batch(net, data.frames, num_clips, clip).argmax(axis=1)
    return ClassAccuracyTable.from_predictions(pred, data.labels, data.spec.num_classes)


@dataclass(frozen=True)
class ClassGap:
    class_id: int
    acc_small: float
    acc_large: float

    @property
    def gap(self) -> float:
        return self.acc_small - self.acc_large


def per_class_gap(acc_small: ClassAccuracyTable, acc_large: ClassAccuracyTable) -> list[ClassGap]:
    """Per-class ``acc_small - acc_large``, sorted by the large net's accuracy."""
    if acc_small.num_classes != acc_large.num_classes:
        raise ValueError("tables have different numbers of classes")
    s, l = acc_small.accuracy, acc_large.accuracy
    order = np.argsort(l, kind="stable")
    return [ClassGap(int(k), float(s[k]), float(l[k])) for k in order]


def gaps_csv(gaps) -> str:
    return csv_block(("class_id", "acc_small", "acc_large", "gap"),
                     ((g.class_id, g.acc_small, g.acc_large, g.gap) for g in gaps))


# --------------------------------------------------------------------------
# stride degradation


def repeat_extend(clips: np.ndarray, stride: int) -> np.ndarray:
    """Keep every ``stride``-th frame and repeat each one ``stride`` times."""
    T = clips.shape[-2]
    if stride < 1 or T % stride:
        raise ValueError(f"stride {stride} does not divide {T} frames")
    return np.repeat(clips[..., ::stride, :], stride, axis=-2)


@dataclass(frozen=True)
class StrideDegradation:
    strides: tuple[int, ...]
    accuracy: tuple[float, ...]

    @property
    def drop(self) -> tuple[float, ...]:
        """``1 - acc(s) / acc(1)`` per stride."""
        base = self.accuracy[self.strides.index(1)] if 1 in self.strides else None
        out = []
        for s, a in zip(self.strides, self.accuracy):
            if s == 1 or a == base:
                out.append(0.0)
            elif not base:
                out.append(float("nan"))
            else:
                out.append(1.0 - a / base)
        return tuple(out)

    def drop_at(self, stride: int) -> float:
        return self.drop[self.strides.index(stride)]

    def to_csv(self) -> str:
        return csv_block(("stride", "accuracy", "drop_ratio"),
                         zip(self.strides, self.accuracy, self.drop))


def stride_degradation(net: ParamStore, data: Dataset, strides=(1, 2, 4, 8), *,
                       clip: ClipSpec | None = None, num_clips: int = 1) -> StrideDegradation:
    """Accuracy of ``net`` when its input clips are thinned and repeat-extended.

    ``clip`` defaults to ``input_frames`` frames at stride 8. Each evaluation
    clip is thinned by every stride in turn; softmax outputs are averaged over
    ``num_clips`` evenly spaced clips as in :func:`~pseudolab.trainer.infer`.
    """
    from .trainer import inference_offsets

    T = net.config.input_frames
    clip = clip or ClipSpec(T, 8)
    if clip.frames != T:
        raise ValueError(f"clip has {clip.frames} frames, network expects {T}")
    strides = tuple(int(s) for s in strides)
    for s in strides:
        if s < 1 or T % s:
            raise ValueError(f"stride {s} does not divide {T} frames")
    if 1 not in strides:
        strides = (1,) + strides
    offsets = inference_offsets(num_clips, clip.max_offset(data.raw_length))
    K = net.config.num_classes
    accs = []
    for s in strides:
        probs = np.zeros((len(data), K))
        for off in offsets:
            clips = gather_clips(data.frames, clip, np.full(len(data), off))
            probs += predict_proba(net, repeat_extend(clips, s))
        pred = probs.argmax(axis=1)
        accs.append(float(np.mean(pred == data.labels)) if len(data) else float("nan"))
    return StrideDegradation(strides, tuple(accs))


# --------------------------------------------------------------------------
# gain vs auxiliary accuracy


@dataclass(frozen=True)
class GainBin:
    index: int
    low: float
    high: float
    mean_gain: float
    count: int


def gain_vs_aux_bins(primary_gain, aux_acc, bin_width: float = 0.05) -> list[GainBin]:
    """Mean primary gain per bin of auxiliary accuracy; empty bins are omitted."""
    gain = np.asarray(primary_gain, dtype=np.float64)
    acc = np.asarray(aux_acc, dtype=np.float64)
    if gain.shape != acc.shape:
        raise ValueError("gain and accuracy vectors must align")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    # The small epsilon keeps values like 0.15 / 0.05 in their own bin.
    idx = np.floor(acc / bin_width + 1e-9).astype(np.int64)
    bins = []
    for b in np.unique(idx):
        members = gain[idx == b]
        bins.append(GainBin(int(b), b * bin_width, (b + 1) * bin_width,
                            float(members.mean()), len(members)))
    return bins


def gain_bins_csv(bins) -> str:
    return csv_block(("bin", "aux_acc_low", "aux_acc_high", "mean_gain", "count"),
                     ((b.index, b.low, b.high, b.mean_gain, b.count) for b in bins))


# --------------------------------------------------------------------------
# subset accuracy curve


@dataclass(frozen=True)
class SubsetPoint:
    epoch: int
    subset_size: int
    acc_F: float
    acc_A: float
    acc_reference: float


def subset_accuracy_curve(log, interval_epochs: int = 10, reference_log=None,
                          tau: float = 0.9) -> list[SubsetPoint]:
    """Accuracy on the unlabeled samples the auxiliary net labels confidently.

    The subset is re-selected at every sampled epoch from the auxiliary
    snapshot (``conf_A >= tau``). ``reference_log`` is an optional FixMatch
    run whose primary is scored on the same subset; epochs with an empty
    subset are skipped.
    """
    if interval_epochs < 1:
        raise ValueError("interval_epochs must be >= 1")
    last = max((r.epoch for r in log.records), default=0)
    points = []
    for epoch in range(interval_epochs, last + 1, interval_epochs):
        snap = log.snapshots.get(epoch)
        if snap is None or snap.pred_A is None:
            raise ReportingError(f"no auxiliary snapshot at epoch {epoch}")
        ref = None
        if reference_log is not None:
            ref = reference_log.snapshots.get(epoch)
            if ref is None:
                raise ReportingError(f"no reference snapshot at epoch {epoch}")
            if not np.array_equal(ref.truth, snap.truth):
                raise ReportingError("reference run used a different unlabeled pool")
        subset = meets(snap.conf_A, tau)
        n = int(subset.sum())
        if n == 0:
            continue
        truth = snap.truth[subset]
        acc_ref = float("nan") if ref is None else float(np.mean(ref.pred_F[subset] == truth))
        points.append(SubsetPoint(epoch, n, float(np.mean(snap.pred_F[subset] == truth)),
                                  float(np.mean(snap.pred_A[subset] == truth)), acc_ref))
    return points


def subset_curve_csv(points) -> str:
    return csv_block(("epoch", "subset_size", "acc_F", "acc_A", "acc_reference"),
                     ((p.epoch, p.subset_size, p.acc_F, p.acc_A, p.acc_reference)
                      for p in points))


def mean_and_range(values) -> tuple[float, float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan, math.nan
    return float(v.mean()), float(v.min()), float(v.max())
