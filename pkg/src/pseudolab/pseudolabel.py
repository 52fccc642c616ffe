"""Pseudo-label fusion schemes for a primary/auxiliary network pair.

Each scheme picks, per sample, the distribution ``q_F`` used to supervise the
primary network and ``q_A`` used to supervise the auxiliary one. A decision is
confident when ``max(q) >= tau`` and its target is ``argmax(q)`` (lowest index
on ties). Predictions are plain arrays and are never differentiated through.

The threshold test allows ``TAU_SLACK`` of rounding: averaged probabilities
such as ``(0.85 + 0.95) / 2`` land one ulp below a decimal ``tau`` that they
meet exactly in real arithmetic.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Scheme(enum.Enum):
    CROSS = "cross"
    SELF_FIRST = "self_first"
    OPPOSITE_FIRST = "opposite_first"
    MAXIMUM = "maximum"
    AVERAGE = "average"
    FIXMATCH = "fixmatch"


class Source(enum.Enum):
    PRIMARY = "primary"
    AUXILIARY = "auxiliary"
    FUSED = "fused"


@dataclass(frozen=True)
class PseudoLabelDecision:
    confident: bool
    target_class: int
    source: Source
    confidence: float


def validate_prediction(p, atol: float = 1e-6) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim < 1 or p.shape[-1] < 1:
        raise ValueError("prediction must be a non-empty probability vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("prediction entries must be finite and non-negative")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > atol):
        raise ValueError("prediction must sum to 1")
    return p


TAU_SLACK = 1e-12


def meets(confidence, tau):
    """``confidence >= tau`` up to ``TAU_SLACK``; works elementwise on arrays."""
    return confidence >= tau - TAU_SLACK


def _check_tau(tau):
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")


def _decision(q, tau, source) -> PseudoLabelDecision:
    top = float(q.max())
    return PseudoLabelDecision(bool(meets(top, tau)), int(np.argmax(q)), source, top)


def decide(scheme, p_F, p_A, tau: float) -> tuple[PseudoLabelDecision, PseudoLabelDecision]:
    """Pseudo-label decisions ``(for_primary, for_auxiliary)`` for one sample."""
    scheme = Scheme(scheme)
    p_F, p_A = validate_prediction(p_F), validate_prediction(p_A)
    if p_F.shape != p_A.shape:
        raise ValueError("predictions must have the same number of classes")
    _check_tau(tau)
    F, A = Source.PRIMARY, Source.AUXILIARY
    conf_F, conf_A = meets(p_F.max(), tau), meets(p_A.max(), tau)

    if scheme is Scheme.CROSS:
        q_F, s_F, q_A, s_A = p_A, A, p_F, F
    elif scheme is Scheme.SELF_FIRST:
        q_F, s_F = (p_F, F) if conf_F else (p_A, A)
        q_A, s_A = (p_A, A) if conf_A else (p_F, F)
    elif scheme is Scheme.OPPOSITE_FIRST:
        q_F, s_F = (p_A, A) if conf_A else (p_F, F)
        q_A, s_A = (p_F, F) if conf_F else (p_A, A)
    elif scheme is Scheme.MAXIMUM:
        q, s = (p_F, F) if p_F.max() >= p_A.max() else (p_A, A)
        q_F, s_F, q_A, s_A = q, s, q, s
    elif scheme is Scheme.AVERAGE:
        q = (p_F + p_A) / 2
        q_F, s_F, q_A, s_A = q, Source.FUSED, q, Source.FUSED
    else:
        # Each network teaches itself; the trainer drops the auxiliary side.
        q_F, s_F, q_A, s_A = p_F, F, p_A, A
    return _decision(q_F, tau, s_F), _decision(q_A, tau, s_A)


@dataclass(eq=False)
class BatchDecisions:
    """Column-wise decisions for a batch; index to get per-sample pairs."""

    confident_F: np.ndarray
    target_F: np.ndarray
    confidence_F: np.ndarray
    source_F: np.ndarray
    confident_A: np.ndarray
    target_A: np.ndarray
    confidence_A: np.ndarray
    source_A: np.ndarray

    def __len__(self) -> int:
        return len(self.target_F)

    def __getitem__(self, i) -> tuple[PseudoLabelDecision, PseudoLabelDecision]:
        return (
            PseudoLabelDecision(bool(self.confident_F[i]), int(self.target_F[i]),
                                self.source_F[i], float(self.confidence_F[i])),
            PseudoLabelDecision(bool(self.confident_A[i]), int(self.target_A[i]),
                                self.source_A[i], float(self.confidence_A[i])),
        )

    def for_primary(self) -> list[PseudoLabelDecision]:
        return [self[i][0] for i in range(len(self))]

    def for_auxiliary(self) -> list[PseudoLabelDecision]:
        return [self[i][1] for i in range(len(self))]


def _pick(mask, a, b):
    return np.where(mask[:, None], a, b)


def batch_decide(scheme, preds_F, preds_A, tau: float) -> BatchDecisions:
    """Vectorized :func:`decide` over rows of ``(B, K)`` prediction arrays."""
    scheme = Scheme(scheme)
    preds_F = np.asarray(preds_F, dtype=np.float64)
    preds_A = np.asarray(preds_A, dtype=np.float64)
    if len(preds_F) != len(preds_A):
        raise ValueError("prediction batches must have equal length")
    _check_tau(tau)
    if len(preds_F) == 0:
        e = np.empty(0)
        return BatchDecisions(e.astype(bool), e.astype(np.int64), e, np.empty(0, object),
                              e.astype(bool), e.astype(np.int64), e, np.empty(0, object))
    if preds_F.shape != preds_A.shape:
        raise ValueError("prediction batches must have the same shape")
    validate_prediction(preds_F)
    validate_prediction(preds_A)

    B = len(preds_F)
    F = np.full(B, Source.PRIMARY, dtype=object)
    A = np.full(B, Source.AUXILIARY, dtype=object)
    max_F, max_A = preds_F.max(axis=1), preds_A.max(axis=1)
    conf_F, conf_A = meets(max_F, tau), meets(max_A, tau)

    if scheme is Scheme.CROSS:
        q_F, s_F, q_A, s_A = preds_A, A, preds_F, F
    elif scheme is Scheme.SELF_FIRST:
        q_F, s_F = _pick(conf_F, preds_F, preds_A), np.where(conf_F, F, A)
        q_A, s_A = _pick(conf_A, preds_A, preds_F), np.where(conf_A, A, F)
    elif scheme is Scheme.OPPOSITE_FIRST:
        q_F, s_F = _pick(conf_A, preds_A, preds_F), np.where(conf_A, A, F)
        q_A, s_A = _pick(conf_F, preds_F, preds_A), np.where(conf_F, F, A)
    elif scheme is Scheme.MAXIMUM:
        f_wins = max_F >= max_A
        q_F = q_A = _pick(f_wins, preds_F, preds_A)
        s_F = s_A = np.where(f_wins, F, A)
    elif scheme is Scheme.AVERAGE:
        q_F = q_A = (preds_F + preds_A) / 2
        s_F = s_A = np.full(B, Source.FUSED, dtype=object)
    else:
        q_F, s_F, q_A, s_A = preds_F, F, preds_A, A

    top_F, top_A = q_F.max(axis=1), q_A.max(axis=1)
    return BatchDecisions(meets(top_F, tau), q_F.argmax(axis=1), top_F, s_F,
                          meets(top_A, tau), q_A.argmax(axis=1), top_A, s_A)
