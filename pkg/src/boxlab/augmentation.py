"""Point/box augmentations and the curriculum intensity scheduler.

Per-object scaling transforms the points inside a box into the box frame,
scales them per axis, and maps them back, leaving center and yaw untouched.
World-level transforms act rigidly (or uniformly, for scaling) on everything.
The curriculum scheduler grows per-augmentation intensities geometrically
across a fixed number of stages.

Randomized operations take an explicit seed and are bit-reproducible; there
is no ambient RNG state anywhere in this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .geometry import Box3D, Point3, local_to_world, normalize_yaw, points_in_box, world_to_local

# Default per-axis scale factor range for random object scaling.
DEFAULT_OBJECT_SCALE_RANGE = (0.75, 1.1)


class AugKind(str, Enum):
    WORLD_ROTATION = "world_rotation"
    WORLD_SCALING = "world_scaling"
    WORLD_FLIP_X = "world_flip_x"
    OBJECT_ROTATION = "object_rotation"
    OBJECT_SCALING = "object_scaling"


_ROTATION_KINDS = (AugKind.WORLD_ROTATION, AugKind.OBJECT_ROTATION)
_SCALING_KINDS = (AugKind.WORLD_SCALING, AugKind.OBJECT_SCALING)

# Flips are not intensity-scheduled; they fire with this fixed probability.
FLIP_PROBABILITY = 0.5


@dataclass(frozen=True)
class Scene:
    """A point cloud with its labeled (or pseudo-labeled) boxes."""

    id: str
    points: tuple[Point3, ...]
    boxes: tuple[Box3D, ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("scene id must be non-empty")
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "boxes", tuple(self.boxes))


@dataclass(frozen=True)
class ScaleFactors:
    """Per-axis multiplicative scale factors, all positive."""

    r_l: float
    r_w: float
    r_h: float

    def __post_init__(self) -> None:
        for r in (self.r_l, self.r_w, self.r_h):
            if not (math.isfinite(r) and r > 0):
                raise ValueError(f"scale factors must be positive finite, got {r!r}")


@dataclass(frozen=True)
class CdaSchedule:
    """Curriculum schedule: initial intensities grown by alpha per stage.

    ``kinds`` and ``eps0`` are parallel; rotation intensities are radians and
    must stay below pi, scaling intensities are relative and must stay below 1
    (so sampled scale factors remain positive).  Flip entries are carried but
    never scheduled.
    """

    kinds: tuple[AugKind, ...]
    eps0: tuple[float, ...]
    alpha: float
    stages: int
    total_epochs: int
    enabled: bool = True

    def __post_init__(self) -> None:
        kinds = tuple(AugKind(k) for k in self.kinds)
        eps0 = tuple(float(e) for e in self.eps0)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "eps0", eps0)
        if len(kinds) != len(eps0):
            raise ValueError("kinds and eps0 must have equal length")
        if not self.alpha > 1:
            raise ValueError(f"alpha must be > 1, got {self.alpha!r}")
        if self.stages < 1:
            raise ValueError("stage count must be >= 1")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        for kind, e in zip(kinds, eps0):
            if e < 0:
                raise ValueError("initial intensities must be non-negative")
            if kind in _ROTATION_KINDS and e >= math.pi:
                raise ValueError("rotation intensity must be < pi")
            if kind in _SCALING_KINDS and e >= 1:
                raise ValueError("scaling intensity must be < 1")

    def intensities_at(self, stage: int) -> dict[AugKind, float]:
        return {k: cda_intensity(e, self.alpha, stage) for k, e in zip(self.kinds, self.eps0)}


def apply_object_scaling(scene: Scene, box_index: int, f: ScaleFactors) -> Scene:
    """Scale one box and the points inside it by per-axis factors.

    Member points go world -> box frame -> scaled -> world; the box keeps its
    center and yaw and its size becomes (r_l*l, r_w*w, r_h*h).  Points outside
    the box (boundary-inclusive membership) are untouched.
    """
    if not (0 <= box_index < len(scene.boxes)):
        raise ValueError(f"box index {box_index} out of range for {len(scene.boxes)} boxes")
    box = scene.boxes[box_index]
    mask = points_in_box(scene.points, box)
    local = world_to_local(scene.points, box)
    new_points = []
    for p, inside, q in zip(scene.points, mask, local):
        if inside:
            scaled = Point3(f.r_l * q.x, f.r_w * q.y, f.r_h * q.z)
            new_points.append(local_to_world([scaled], box)[0])
        else:
            new_points.append(p)
    new_box = replace(box, l=f.r_l * box.l, w=f.r_w * box.w, h=f.r_h * box.h)
    boxes = list(scene.boxes)
    boxes[box_index] = new_box
    return Scene(scene.id, tuple(new_points), tuple(boxes))


def random_object_scaling(
    scene: Scene,
    scale_range: tuple[float, float] = DEFAULT_OBJECT_SCALE_RANGE,
    seed: int = 0,
) -> Scene:
    """Scale every box by independent uniform per-axis factors from the range."""
    lo, hi = scale_range
    if not (0 < lo <= hi):
        raise ValueError(f"invalid scale range [{lo}, {hi}]")
    rng = np.random.default_rng(seed)
    factors = rng.uniform(lo, hi, size=(len(scene.boxes), 3))
    out = scene
    for i in range(len(scene.boxes)):
        out = apply_object_scaling(out, i, ScaleFactors(*factors[i]))
    return out


def size_normalization(scene: Scene, target_mean: tuple[float, float, float]) -> Scene:
    """Rescale every box (and its points) to the target size.

    Points move by the same per-axis factors the box does; the final sizes are
    written exactly so repeated normalization is a no-op.
    """
    tl, tw, th = target_mean
    if not (tl > 0 and tw > 0 and th > 0):
        raise ValueError(f"target size must be positive, got {target_mean!r}")
    out = scene
    for i in range(len(scene.boxes)):
        box = out.boxes[i]
        f = ScaleFactors(tl / box.l, tw / box.w, th / box.h)
        out = apply_object_scaling(out, i, f)
        # f*size can land an ulp off the target; pin it so sizes match exactly.
        boxes = list(out.boxes)
        boxes[i] = replace(boxes[i], l=tl, w=tw, h=th)
        out = Scene(out.id, out.points, tuple(boxes))
    return out


def apply_world_transform(scene: Scene, kind: AugKind, magnitude: float = 1.0) -> Scene:
    """Apply a world-level rotation, uniform scaling, or x-axis flip."""
    kind = AugKind(kind)
    if kind is AugKind.WORLD_ROTATION:
        if not (math.isfinite(magnitude) and abs(magnitude) <= math.pi):
            raise ValueError(f"world rotation must be in [-pi, pi], got {magnitude!r}")
        c = math.cos(magnitude)
        s = math.sin(magnitude)
        points = tuple(Point3(p.x * c - p.y * s, p.x * s + p.y * c, p.z) for p in scene.points)
        boxes = tuple(
            replace(
                b,
                cx=b.cx * c - b.cy * s,
                cy=b.cx * s + b.cy * c,
                yaw=normalize_yaw(b.yaw + magnitude),
            )
            for b in scene.boxes
        )
        return Scene(scene.id, points, boxes)
    if kind is AugKind.WORLD_SCALING:
        if not (math.isfinite(magnitude) and magnitude > 0):
            raise ValueError(f"world scale must be positive, got {magnitude!r}")
        m = magnitude
        points = tuple(Point3(p.x * m, p.y * m, p.z * m) for p in scene.points)
        boxes = tuple(
            replace(b, cx=b.cx * m, cy=b.cy * m, cz=b.cz * m, l=b.l * m, w=b.w * m, h=b.h * m)
            for b in scene.boxes
        )
        return Scene(scene.id, points, boxes)
    if kind is AugKind.WORLD_FLIP_X:
        points = tuple(Point3(p.x, -p.y, p.z) for p in scene.points)
        boxes = tuple(replace(b, cy=-b.cy, yaw=normalize_yaw(-b.yaw)) for b in scene.boxes)
        return Scene(scene.id, points, boxes)
    raise ValueError(f"{kind.value} is not a world-level augmentation")


def apply_object_rotation(scene: Scene, box_index: int, angle: float) -> Scene:
    """Rotate one box and its member points rigidly about the box center."""
    if not (0 <= box_index < len(scene.boxes)):
        raise ValueError(f"box index {box_index} out of range for {len(scene.boxes)} boxes")
    if not (math.isfinite(angle) and abs(angle) <= math.pi):
        raise ValueError(f"object rotation must be in [-pi, pi], got {angle!r}")
    box = scene.boxes[box_index]
    mask = points_in_box(scene.points, box)
    c = math.cos(angle)
    s = math.sin(angle)
    new_points = []
    for p, inside in zip(scene.points, mask):
        if inside:
            dx = p.x - box.cx
            dy = p.y - box.cy
            new_points.append(Point3(box.cx + dx * c - dy * s, box.cy + dx * s + dy * c, p.z))
        else:
            new_points.append(p)
    boxes = list(scene.boxes)
    boxes[box_index] = replace(box, yaw=normalize_yaw(box.yaw + angle))
    return Scene(scene.id, tuple(new_points), tuple(boxes))


def cda_intensity(eps0: float, alpha: float, stage: int) -> float:
    """Intensity at a 1-based stage: eps0 * alpha^(stage - 1)."""
    if stage < 1:
        raise ValueError(f"stage must be >= 1, got {stage!r}")
    return eps0 * alpha ** (stage - 1)


def cda_range(eps_s: float, kind: AugKind) -> tuple[float, float]:
    """Sampling interval for a scheduled intensity.

    Rotations sample from [-eps, eps] and scalings from [1-eps, 1+eps]; flips
    are not scheduled and always return the fixed probability pair.
    """
    kind = AugKind(kind)
    if eps_s < 0:
        raise ValueError(f"intensity must be non-negative, got {eps_s!r}")
    if kind in _ROTATION_KINDS:
        return (-eps_s, eps_s)
    if kind in _SCALING_KINDS:
        if eps_s >= 1:
            raise ValueError(f"scaling intensity must be < 1, got {eps_s!r}")
        return (1.0 - eps_s, 1.0 + eps_s)
    return (FLIP_PROBABILITY, FLIP_PROBABILITY)


def stage_of_epoch(epoch: int, total_epochs: int, stages: int) -> int:
    """1-based stage for an epoch, splitting total_epochs into equal buckets.

    Bucket width is ceil(total_epochs / stages) so every epoch maps to a
    stage even when stages does not divide total_epochs; the result is clamped
    to the final stage.
    """
    if stages < 1:
        raise ValueError("stage count must be >= 1")
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    if not (0 <= epoch < total_epochs):
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    width = -(total_epochs // -stages)
    return min(epoch // width + 1, stages)
