"""Detection and pseudo-label quality metrics.

True positives come from score-greedy one-to-one matching against ground
truth at a configurable IoU threshold.  Average precision samples the
interpolated precision at N equally spaced recall positions (40 by default).
Box error metrics over true positives follow the usual conventions:
translation error is the planar center distance, scale error is one minus
the IoU after aligning centers and headings, orientation error is the
smallest absolute heading difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .geometry import Box3D, iou_3d, iou_bev
from .memory_bank import SceneMemory
from .pseudo_label import BoxState

ScoredBox = tuple[Box3D, float]


class IouKind(str, Enum):
    BEV = "bev"
    THREE_D = "3d"


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.7
    iou_kind: IouKind = IouKind.THREE_D
    recall_positions: int = 40

    def __post_init__(self) -> None:
        object.__setattr__(self, "iou_kind", IouKind(self.iou_kind))
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError(f"iou_threshold must be in (0, 1], got {self.iou_threshold!r}")
        if self.recall_positions < 1:
            raise ValueError("recall_positions must be >= 1")

    @property
    def iou_fn(self):
        return iou_bev if self.iou_kind is IouKind.BEV else iou_3d


@dataclass(frozen=True)
class QualityReport:
    tp_count: int
    fp_count: int
    fn_count: int
    precision: float
    recall: float
    f1: float
    ate: float
    ase: float
    aoe: float

    def to_dict(self) -> dict:
        return {
            "tp_count": self.tp_count,
            "fp_count": self.fp_count,
            "fn_count": self.fn_count,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "ate": self.ate,
            "ase": self.ase,
            "aoe": self.aoe,
        }


def match_tp(
    preds: Sequence[ScoredBox], gts: Sequence[Box3D], cfg: EvalConfig
) -> list[tuple[int, int]]:
    """Greedy one-to-one matching in descending prediction score.

    Each prediction takes the unmatched ground-truth box with the highest IoU
    if that IoU reaches the threshold.  Ties break deterministically (higher
    score, then lower prediction index; for ground truths, lower index).
    """
    iou = cfg.iou_fn
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][1], i))
    taken = [False] * len(gts)
    matches = []
    for i in order:
        box = preds[i][0]
        best_iou = 0.0
        best_g = -1
        for g, gt in enumerate(gts):
            if taken[g]:
                continue
            x = iou(box, gt)
            if x > best_iou:
                best_iou = x
                best_g = g
        if best_g >= 0 and best_iou >= cfg.iou_threshold:
            taken[best_g] = True
            matches.append((i, best_g))
    return matches


def ap_recall_positions(
    preds_per_scene: Sequence[Sequence[ScoredBox]],
    gts_per_scene: Sequence[Sequence[Box3D]],
    cfg: EvalConfig,
) -> float:
    """Average precision over cfg.recall_positions recall samples.

    Predictions from all scenes are ranked together by score; each is a true
    positive if it claims an unmatched ground truth in its own scene at the
    threshold.  The precision-recall curve is sampled at recall r = i/N for
    i = 1..N using the interpolated precision max{precision : recall >= r}.
    Raises if there are no ground-truth boxes at all.
    """
    if len(preds_per_scene) != len(gts_per_scene):
        raise ValueError("preds and gts must cover the same scenes")
    n_gt = sum(len(g) for g in gts_per_scene)
    if n_gt == 0:
        raise ValueError("recall is undefined without ground-truth boxes")
    iou = cfg.iou_fn
    ranked = sorted(
        (
            (-score, s, i)
            for s, preds in enumerate(preds_per_scene)
            for i, (_, score) in enumerate(preds)
        ),
    )
    taken = [[False] * len(g) for g in gts_per_scene]
    tp_flags = []
    for neg_score, s, i in ranked:
        box = preds_per_scene[s][i][0]
        gts = gts_per_scene[s]
        best_iou = 0.0
        best_g = -1
        for g, gt in enumerate(gts):
            if taken[s][g]:
                continue
            x = iou(box, gt)
            if x > best_iou:
                best_iou = x
                best_g = g
        if best_g >= 0 and best_iou >= cfg.iou_threshold:
            taken[s][best_g] = True
            tp_flags.append(True)
        else:
            tp_flags.append(False)
    precisions = []
    recalls = []
    tp = 0
    for k, flag in enumerate(tp_flags, start=1):
        if flag:
            tp += 1
        precisions.append(tp / k)
        recalls.append(tp / n_gt)
    n = cfg.recall_positions
    total = 0.0
    for i in range(1, n + 1):
        r = i / n
        best = 0.0
        for p, rec in zip(precisions, recalls):
            if rec >= r and p > best:
                best = p
        total += best
    return total / n


def translation_error(pred: Box3D, gt: Box3D) -> float:
    """Planar (x, y) center distance in meters."""
    return math.hypot(pred.cx - gt.cx, pred.cy - gt.cy)


def scale_error(pred: Box3D, gt: Box3D) -> float:
    """1 - IoU after aligning centers and headings: a pure size comparison."""
    inter = min(pred.l, gt.l) * min(pred.w, gt.w) * min(pred.h, gt.h)
    union = pred.volume + gt.volume - inter
    return 1.0 - inter / union


def orientation_error(pred: Box3D, gt: Box3D) -> float:
    """Smallest absolute heading difference, in [0, pi]."""
    d = abs(pred.yaw - gt.yaw) % math.tau
    return math.tau - d if d > math.pi else d


def closed_gap(ap_model: float, ap_source: float, ap_oracle: float) -> float:
    """Percentage of the source-to-oracle gap recovered by the model.

    (ap_model - ap_source) / (ap_oracle - ap_source) * 100; may be negative
    or exceed 100.  A zero denominator is rejected.
    """
    denom = ap_oracle - ap_source
    if denom == 0.0:
        raise ValueError("closed gap undefined when oracle equals source-only")
    return (ap_model - ap_source) / denom * 100.0


def quality_from_matches(
    n_pred: int,
    n_gt: int,
    matched_pairs: Sequence[tuple[Box3D, Box3D]],
) -> QualityReport:
    """Assemble a report from matched (pred, gt) box pairs and raw counts."""
    tp = len(matched_pairs)
    fp = n_pred - tp
    fn = n_gt - tp
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    if tp:
        ate = sum(translation_error(p, g) for p, g in matched_pairs) / tp
        ase = sum(scale_error(p, g) for p, g in matched_pairs) / tp
        aoe = sum(orientation_error(p, g) for p, g in matched_pairs) / tp
    else:
        ate = ase = aoe = 0.0
    return QualityReport(tp, fp, fn, precision, recall, f1, ate, ase, aoe)


def pseudo_label_quality(
    memories: Mapping[str, SceneMemory],
    gts_per_scene: Mapping[str, Sequence[Box3D]],
    cfg: EvalConfig,
) -> QualityReport:
    """Score the positive entries of a bank against per-scene ground truth.

    Ignored entries are excluded.  Scenes missing from either mapping count
    as empty on that side, so spurious scenes contribute false positives and
    unlabeled scenes contribute false negatives.
    """
    n_pred = 0
    n_gt = 0
    pairs: list[tuple[Box3D, Box3D]] = []
    for scene_id in sorted(set(memories) | set(gts_per_scene)):
        mem = memories.get(scene_id)
        entries = [e for e in mem.entries if e.state is BoxState.POSITIVE] if mem else []
        gts = list(gts_per_scene.get(scene_id, ()))
        preds = [(e.box, e.u) for e in entries]
        matches = match_tp(preds, gts, cfg)
        n_pred += len(preds)
        n_gt += len(gts)
        pairs.extend((preds[i][0], gts[g]) for i, g in matches)
    return quality_from_matches(n_pred, n_gt, pairs)
