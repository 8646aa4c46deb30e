"""Raw detections to proxy pseudo-labels: IoU quality loss and triplet split."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .geometry import Box3D, Detection

# Log clamp for the quality loss.
_BCE_EPS = 1e-7


class BoxState(str, Enum):
    POSITIVE = "positive"
    IGNORED = "ignored"


@dataclass(frozen=True)
class TripletThresholds:
    """Margin [t_neg, t_pos]: below it discard, inside it ignore, at/above keep."""

    t_neg: float
    t_pos: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.t_neg <= self.t_pos <= 1.0):
            raise ValueError(f"need 0 <= t_neg <= t_pos <= 1, got ({self.t_neg}, {self.t_pos})")


DEFAULT_TRIPLET = TripletThresholds(t_neg=0.25, t_pos=0.6)


@dataclass(frozen=True)
class PseudoBox:
    """A stored pseudo-label: box plus quality score u, state, and the
    unmatched counter used by memory voting (0 on creation)."""

    box: Box3D
    u: float
    state: BoxState
    cnt: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.u <= 1.0):
            raise ValueError(f"u must be in [0, 1], got {self.u!r}")
        if self.cnt < 0:
            raise ValueError(f"cnt must be non-negative, got {self.cnt!r}")
        object.__setattr__(self, "state", BoxState(self.state))


def iou_bce_loss(u: float, u_hat: float) -> float:
    """Binary cross entropy between a predicted IoU u and a target IoU u_hat.

    u is clamped a hair inside (0, 1) before taking logs; inputs outside
    [0, 1] are rejected.
    """
    if not (0.0 <= u <= 1.0):
        raise ValueError(f"u must be in [0, 1], got {u!r}")
    if not (0.0 <= u_hat <= 1.0):
        raise ValueError(f"u_hat must be in [0, 1], got {u_hat!r}")
    uc = min(max(u, _BCE_EPS), 1.0 - _BCE_EPS)
    return -u_hat * math.log(uc) - (1.0 - u_hat) * math.log(1.0 - uc)


def triplet_partition(
    dets: Sequence[Detection], thresholds: TripletThresholds = DEFAULT_TRIPLET
) -> list[PseudoBox]:
    """Partition detections by their IoU score u into kept pseudo-labels.

    u >= t_pos is stored positive, t_neg <= u < t_pos is stored ignored, and
    u < t_neg is discarded.  The classification score is never consulted.
    Input order is preserved among stored boxes and every stored box starts
    with cnt = 0.
    """
    out = []
    for det in dets:
        u = det.iou_score
        if u >= thresholds.t_pos:
            out.append(PseudoBox(det.box, u, BoxState.POSITIVE, 0))
        elif u >= thresholds.t_neg:
            out.append(PseudoBox(det.box, u, BoxState.IGNORED, 0))
    return out
