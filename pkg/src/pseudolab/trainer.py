"""Joint training of a primary/auxiliary pair with cross-model pseudo-labels.

One optimization step draws ``B_l`` labeled and ``B_u`` unlabeled videos and
minimizes::

    (L_s^F + L_s^A) + lambda * (L_u^F + L_u^A)

where the supervised terms are batch-mean cross-entropies and each
unsupervised term sums the cross-entropy of confident pseudo-labels on the
strong view, divided by ``B_u`` (not by the number of confident samples).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import augment as aug
from .autodiff import Tensor, weighted_cross_entropy
from .config import ExperimentConfig, Mode
from .errors import ConfigError
from .netcore import (
    ParamStore,
    ScalableNetConfig,
    backward,
    build_net,
    cross_entropy,
    forward,
    predict_proba,
    sgd_step,
)
from .pseudolabel import BatchDecisions, Scheme, batch_decide
from .synthdata import ClipSpec, Dataset, SplitResult, Video, gather_clips

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "lr", "loss_sup_F", "loss_sup_A", "loss_unsup_F", "loss_unsup_A",
               "n_confident", "pl_ratio", "val_acc_F", "val_acc_A")


@dataclass(eq=False)
class NetPair:
    primary: ParamStore
    auxiliary: ParamStore | None = None

    def __post_init__(self):
        if self.auxiliary is not None and \
                self.auxiliary.config.num_classes != self.primary.config.num_classes:
            raise ConfigError("primary and auxiliary heads must output the same number of classes")

    def nets(self) -> list[ParamStore]:
        return [n for n in (self.primary, self.auxiliary) if n is not None]

    def zero_grad(self) -> None:
        for n in self.nets():
            n.zero_grad()


@dataclass(eq=False)
class LabeledBatch:
    x_F: np.ndarray
    labels: np.ndarray
    x_A: np.ndarray | None = None


@dataclass(eq=False)
class UnlabeledBatch:
    weak_F: np.ndarray
    strong_F: np.ndarray
    weak_A: np.ndarray | None = None
    strong_A: np.ndarray | None = None
    truth: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.weak_F)


def supervised_losses(pair: NetPair, batch: LabeledBatch):
    """Batch-mean cross-entropy of each network on its labeled views.

    Returns ``(L_s^F, L_s^A)``; the second is ``None`` without an auxiliary net.
    """
    if len(batch.labels) == 0:
        raise ValueError("labeled batch is empty")
    loss_F = cross_entropy(forward(pair.primary, batch.x_F), batch.labels)
    loss_A = None
    if pair.auxiliary is not None:
        loss_A = cross_entropy(forward(pair.auxiliary, batch.x_A), batch.labels)
    return loss_F, loss_A


def _masked_loss(net, strong, confident, targets, batch_size):
    idx = np.flatnonzero(confident)
    if idx.size == 0:
        return Tensor(0.0)
    logits = forward(net, strong[idx])
    return weighted_cross_entropy(logits, targets[idx], np.full(idx.size, 1.0 / batch_size))


def unsupervised_losses(pair: NetPair, batch: UnlabeledBatch, scheme, tau: float):
    """Pseudo-label losses ``(L_u^F, L_u^A, decisions)``.

    Weak-view predictions are detached. Only confident samples are run through
    the strong view; the others contribute exactly zero.
    """
    scheme = Scheme(scheme)
    B = len(batch)
    if B == 0:
        raise ValueError("unlabeled batch is empty")
    p_F = predict_proba(pair.primary, batch.weak_F)
    if pair.auxiliary is None:
        if scheme is not Scheme.FIXMATCH:
            raise ConfigError(f"scheme {scheme.value!r} needs an auxiliary network")
        p_A = p_F
    else:
        p_A = predict_proba(pair.auxiliary, batch.weak_A)
    decisions = batch_decide(scheme, p_F, p_A, tau)
    loss_F = _masked_loss(pair.primary, batch.strong_F, decisions.confident_F,
                          decisions.target_F, B)
    loss_A = None
    if pair.auxiliary is not None:
        loss_A = _masked_loss(pair.auxiliary, batch.strong_A, decisions.confident_A,
                              decisions.target_A, B)
    return loss_F, loss_A, decisions


def total_loss(ls_F, ls_A, lu_F, lu_A, lam: float):
    """``(ls_F + ls_A) + lam * (lu_F + lu_A)``; ``None`` terms count as zero."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    ls_A = 0.0 if ls_A is None else ls_A
    lu_F = 0.0 if lu_F is None else lu_F
    lu_A = 0.0 if lu_A is None else lu_A
    return (ls_F + ls_A) + lam * (lu_F + lu_A)


def _value(x) -> float:
    if x is None:
        return 0.0
    return x.item() if isinstance(x, Tensor) else float(x)


# --------------------------------------------------------------------------
# inference


def inference_offsets(num_clips: int, max_offset: int) -> np.ndarray:
    """``num_clips`` offsets evenly spread over ``[0, max_offset]``."""
    if num_clips < 1:
        raise ConfigError("num_clips must be >= 1")
    if max_offset < 0:
        raise ConfigError("clip does not fit in the video")
    if num_clips == 1:
        return np.zeros(1, dtype=np.int64)
    return (np.arange(num_clips) * max_offset) // (num_clips - 1)


def infer_batch(net: ParamStore, frames: np.ndarray, num_clips: int, clip: ClipSpec,
                chunk: int = 1024) -> np.ndarray:
    """Softmax averaged over ``num_clips`` evenly spaced clips, for ``(N, L, D)`` videos."""
    if clip.frames != net.config.input_frames:
        raise ConfigError(f"clip has {clip.frames} frames, network expects {net.config.input_frames}")
    N = len(frames)
    offsets = inference_offsets(num_clips, clip.max_offset(frames.shape[1]))
    out = np.zeros((N, net.config.num_classes))
    for start in range(0, N, chunk):
        part = frames[start:start + chunk]
        acc = np.zeros((len(part), net.config.num_classes))
        for off in offsets:
            acc += predict_proba(net, gather_clips(part, clip, np.full(len(part), off)))
        out[start:start + chunk] = acc / len(offsets)
    return out


def infer(net: ParamStore, video: Video, num_clips: int, clip: ClipSpec) -> np.ndarray:
    """Prediction for one video under the multi-clip protocol."""
    return infer_batch(net, np.asarray(video.frames)[None], num_clips, clip)[0]


def accuracy(net: ParamStore, data: Dataset, num_clips: int, clip: ClipSpec) -> float:
    if len(data) == 0:
        return float("nan")
    pred = infer_batch(net, data.frames, num_clips, clip).argmax(axis=1)
    return float(np.mean(pred == data.labels))


# --------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_sup_F: float
    loss_sup_A: float
    loss_unsup_F: float
    loss_unsup_A: float
    n_confident: int
    n_correct: int
    pl_ratio: float
    val_acc_F: float
    val_acc_A: float
    n_confident_A: int = 0
    n_correct_A: int = 0

    def row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass(eq=False)
class Snapshot:
    """Weak-view predictions of both networks on the whole unlabeled pool."""

    epoch: int
    truth: np.ndarray
    pred_F: np.ndarray
    conf_F: np.ndarray
    pred_A: np.ndarray | None = None
    conf_A: np.ndarray | None = None


@dataclass(eq=False)
class MetricsLog:
    n_unlabeled: int = 0
    batches_per_epoch: int = 0
    batch_unlabeled: int = 0
    records: list[EpochRecord] = field(default_factory=list)
    snapshots: dict[int, Snapshot] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def record(self, epoch: int) -> EpochRecord:
        for r in self.records:
            if r.epoch == epoch:
                return r
        raise KeyError(epoch)

    def to_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for r in self.records:
            lines.append(",".join(_fmt(v) for v in r.row()))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class _Cycler:
    """Endless reshuffled batches over ``indices``."""

    def __init__(self, indices, batch, rng):
        self.indices = np.asarray(indices)
        self.batch = batch
        self.rng = rng
        self.order = np.empty(0, dtype=np.int64)

    def next(self) -> np.ndarray:
        while len(self.order) < self.batch:
            self.order = np.concatenate([self.order, self.rng.permutation(self.indices)])
        out, self.order = self.order[: self.batch], self.order[self.batch:]
        return out


def net_configs(config: ExperimentConfig) -> tuple[ScalableNetConfig, ScalableNetConfig]:
    spec, t, m = config.data, config.temporal, config.model
    primary = ScalableNetConfig(m.primary_depth, m.primary_width, m.base_channels,
                                spec.num_classes, t.primary_frames, spec.spatial_dim)
    aux = ScalableNetConfig(m.aux_depth, m.aux_width, m.base_channels,
                            spec.num_classes, t.aux_frames, spec.spatial_dim)
    return primary, aux


def uses_auxiliary(config: ExperimentConfig) -> bool:
    return config.pseudo_label.scheme is not Scheme.FIXMATCH


def build_pair(config: ExperimentConfig, seed: int) -> NetPair:
    init_F, init_A = np.random.SeedSequence([seed, 1]), np.random.SeedSequence([seed, 2])
    cfg_F, cfg_A = net_configs(config)
    aux = build_net(cfg_A, init_A) if uses_auxiliary(config) else None
    return NetPair(build_net(cfg_F, init_F), aux)


def make_labeled_batch(config, frames, labels, rngs) -> LabeledBatch:
    t = config.temporal
    L = frames.shape[1]
    off_F, off_A = aug.view_offsets(len(frames), t, L, rngs["labeled"])
    x_F = aug.standard_augment(gather_clips(frames, t.primary, off_F), rngs["std_F"],
                               config.augment.standard)
    x_A = None
    if "std_A" in rngs:
        x_A = aug.standard_augment(gather_clips(frames, t.aux, off_A), rngs["std_A"],
                                   config.augment.standard)
    return LabeledBatch(x_F, labels, x_A)


def make_unlabeled_batch(config, frames, truth, rngs) -> UnlabeledBatch:
    t, a = config.temporal, config.augment
    L = frames.shape[1]
    off_F, off_A = aug.view_offsets(len(frames), t, L, rngs["unlabeled"])
    if a.shared_clip:
        s_off_F, s_off_A = off_F, off_A
    else:
        s_off_F, s_off_A = aug.view_offsets(len(frames), t, L, rngs["unlabeled"])
    clip_F = gather_clips(frames, t.primary, off_F)
    batch = UnlabeledBatch(
        weak_F=aug.weak_augment(clip_F, rngs["aug_F"], a.weak),
        strong_F=aug.strong_augment(clip_F if a.shared_clip else
                                    gather_clips(frames, t.primary, s_off_F), rngs["aug_F"], a.strong),
        truth=truth,
    )
    if "aug_A" in rngs:
        clip_A = gather_clips(frames, t.aux, off_A)
        batch.weak_A = aug.weak_augment(clip_A, rngs["aug_A"], a.weak)
        batch.strong_A = aug.strong_augment(clip_A if a.shared_clip else
                                            gather_clips(frames, t.aux, s_off_A), rngs["aug_A"], a.strong)
    return batch


def _streams(seed: int, with_aux: bool) -> dict[str, np.random.Generator]:
    # Each consumer owns a stream, so skipping the auxiliary or the unlabeled
    # branch never shifts the primary's labeled draws.
    names = ["labeled", "std_F", "unlabeled", "aug_F"] + (["std_A", "aug_A"] if with_aux else [])
    return {n: np.random.default_rng([seed, 100 + i]) for i, n in
            enumerate(["labeled", "std_F", "unlabeled", "aug_F", "std_A", "aug_A"]) if n in names}


def take_snapshot(pair: NetPair, config: ExperimentConfig, unlabeled: Dataset, epoch: int) -> Snapshot:
    t = config.temporal
    p_F = infer_batch(pair.primary, unlabeled.frames, 1, t.primary)
    snap = Snapshot(epoch, unlabeled.labels.copy(), p_F.argmax(axis=1), p_F.max(axis=1))
    if pair.auxiliary is not None:
        p_A = infer_batch(pair.auxiliary, unlabeled.frames, 1, t.aux)
        snap.pred_A, snap.conf_A = p_A.argmax(axis=1), p_A.max(axis=1)
    return snap


def train(config: ExperimentConfig, dataset: Dataset, split: SplitResult, *, seed: int = 0,
          val: Dataset | None = None) -> tuple[NetPair, MetricsLog]:
    """Train a network pair (or a single network for FixMatch) on ``split``.

    One epoch is one pass over the unlabeled pool in batches of ``B_u``; the
    supervised-only mode runs the same number of steps without the unlabeled
    branch. ``val`` is evaluated with the multi-clip protocol after each epoch.
    """
    config.validate()
    if split.dataset is not dataset:
        raise ConfigError("split was not made from this dataset")
    B_l, B_u = config.train.batch_labeled, config.batch_unlabeled
    lab_idx, unl_idx = split.labeled_idx, split.unlabeled_idx
    if len(lab_idx) == 0:
        raise ConfigError("no labeled videos")
    steps_per_epoch = len(unl_idx) // B_u
    if steps_per_epoch < 1:
        raise ConfigError(f"unlabeled pool ({len(unl_idx)}) smaller than B_u ({B_u})")
    config.temporal.validate(dataset.raw_length)

    semi = config.train.mode is Mode.SEMI
    scheme, tau, lam = config.pseudo_label.scheme, config.pseudo_label.tau, config.train.lam
    pair = build_pair(config, seed)
    with_aux = pair.auxiliary is not None
    rngs = _streams(seed, with_aux)
    opt = replace(config.optimizer, total_steps=max(1, config.train.epochs * steps_per_epoch))
    labeled = _Cycler(lab_idx, B_l, rngs["labeled"])
    unlabeled = dataset.subset(unl_idx)
    metrics = MetricsLog(len(unl_idx), steps_per_epoch, B_u)
    frames, labels = dataset.frames, dataset.labels
    interval = config.eval.snapshot_interval

    step = 0
    for epoch in range(1, config.train.epochs + 1):
        sums = np.zeros(4)
        n_conf = n_corr = n_conf_A = n_corr_A = 0
        perm = rngs["unlabeled"].permutation(unl_idx) if semi else None
        lr = 0.0
        for j in range(steps_per_epoch):
            li = labeled.next()
            lb = make_labeled_batch(config, frames[li], labels[li], rngs)
            pair.zero_grad()
            ls_F, ls_A = supervised_losses(pair, lb)
            lu_F = lu_A = None
            if semi:
                ui = perm[j * B_u:(j + 1) * B_u]
                ub = make_unlabeled_batch(config, frames[ui], labels[ui], rngs)
                lu_F, lu_A, dec = unsupervised_losses(pair, ub, scheme, tau)
                hit_F = dec.confident_F & (dec.target_F == ub.truth)
                n_conf += int(dec.confident_F.sum())
                n_corr += int(hit_F.sum())
                if with_aux:
                    n_conf_A += int(dec.confident_A.sum())
                    n_corr_A += int((dec.confident_A & (dec.target_A == ub.truth)).sum())
                loss = total_loss(ls_F, ls_A, lu_F, lu_A, lam)
            else:
                loss = total_loss(ls_F, ls_A, None, None, 0.0)
            backward(loss)
            for net in pair.nets():
                lr = sgd_step(net, opt, step)
            step += 1
            sums += (_value(ls_F), _value(ls_A), _value(lu_F), _value(lu_A))

        means = sums / steps_per_epoch
        val_F = val_A = float("nan")
        if val is not None:
            val_F = accuracy(pair.primary, val, config.eval.num_clips, config.temporal.primary)
            if with_aux:
                val_A = accuracy(pair.auxiliary, val, config.eval.num_clips, config.temporal.aux)
        rec = EpochRecord(epoch, lr, *means, n_conf, n_corr, n_corr / len(unl_idx),
                          val_F, val_A, n_conf_A, n_corr_A)
        metrics.records.append(rec)
        if interval and epoch % interval == 0:
            metrics.snapshots[epoch] = take_snapshot(pair, config, unlabeled, epoch)
        log.debug("epoch %d lr=%.4f Ls=%.3f/%.3f Lu=%.3f/%.3f conf=%d acc=%.3f/%.3f",
                  epoch, lr, *means, n_conf, val_F, val_A)
    return pair, metrics
