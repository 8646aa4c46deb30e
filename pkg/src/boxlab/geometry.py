"""Oriented 3D box geometry: coordinate transforms, rotated IoU, and NMS.

Boxes are upright cuboids parameterized by center (cx, cy, cz), size
(l, w, h) and a heading angle yaw about the +z axis, so every footprint is a
rotated rectangle in the x/y plane (bird's eye view).  IoU goes through exact
convex polygon clipping of those footprints; the 3D variant multiplies the
footprint overlap by the z-interval overlap.

All functions are pure and hold no state, so they are safe to call from any
number of workers.  The arithmetic is deliberately scalar and sequential
(rather than vectorized) so that results are reproducible operation-for-
operation by foreign reimplementations of the same formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

TAU = math.tau

# Points this close to a clip edge count as inside; stabilizes near-tangent
# clips without visibly changing any non-degenerate intersection.
EDGE_TOLERANCE = 1e-12


def normalize_yaw(theta: float) -> float:
    """Map an angle in radians to (-pi, pi]."""
    if not math.isfinite(theta):
        raise ValueError(f"yaw must be finite, got {theta!r}")
    t = math.remainder(theta, TAU)
    if t <= -math.pi:
        t += TAU
    return t


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class Point3:
    """A point in meters; all coordinates finite."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        _require_finite("point coordinate", self.x, self.y, self.z)


@dataclass(frozen=True)
class Box3D:
    """Upright oriented box: center (cx, cy, cz), size (l, w, h), yaw.

    Sizes are strictly positive and yaw is normalized to (-pi, pi] at
    construction time.
    """

    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float

    def __post_init__(self) -> None:
        _require_finite("box field", self.cx, self.cy, self.cz, self.l, self.w, self.h)
        if self.l <= 0 or self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sizes must be positive, got ({self.l}, {self.w}, {self.h})")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def bev_area(self) -> float:
        return self.l * self.w

    @property
    def volume(self) -> float:
        return (self.l * self.w) * self.h

    @property
    def center(self) -> Point3:
        return Point3(self.cx, self.cy, self.cz)


@dataclass(frozen=True)
class Detection:
    """A detected box with a classification score and a predicted-IoU score u."""

    box: Box3D
    cls_score: float
    iou_score: float

    def __post_init__(self) -> None:
        for name, s in (("cls_score", self.cls_score), ("iou_score", self.iou_score)):
            if not (0.0 <= s <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {s!r}")


class ScoreField(str, Enum):
    CLS = "cls"
    IOU = "iou"


@dataclass(frozen=True)
class ConvexPolygon2:
    """Counter-clockwise convex polygon in the x/y plane, >= 3 vertices."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        for x, y in verts:
            _require_finite("polygon vertex", x, y)
        n = len(verts)
        for i in range(n):
            ax, ay = verts[i]
            bx, by = verts[(i + 1) % n]
            cx, cy = verts[(i + 2) % n]
            cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if cross < -EDGE_TOLERANCE:
                raise ValueError("polygon must be convex and counter-clockwise")
        object.__setattr__(self, "vertices", verts)

    @property
    def area(self) -> float:
        return shoelace_area(self.vertices)


def rotation_matrix(yaw: float) -> np.ndarray:
    """3x3 rotation about the z axis; orthonormal with determinant 1."""
    _require_finite("yaw", yaw)
    c = math.cos(yaw)
    s = math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def world_to_local(points: Sequence[Point3], box: Box3D) -> list[Point3]:
    """Express points in the box frame (axes along length/width/height).

    The local coordinates are (p - center) . R with R the yaw rotation, so a
    point at the box center maps to the origin.
    """
    c = math.cos(box.yaw)
    s = math.sin(box.yaw)
    out = []
    for p in points:
        dx = p.x - box.cx
        dy = p.y - box.cy
        dz = p.z - box.cz
        out.append(Point3(dx * c + dy * s, -dx * s + dy * c, dz))
    return out


def local_to_world(points: Sequence[Point3], box: Box3D) -> list[Point3]:
    """Inverse of :func:`world_to_local`: p_world = p_local . R^T + center."""
    c = math.cos(box.yaw)
    s = math.sin(box.yaw)
    out = []
    for p in points:
        out.append(
            Point3(
                p.x * c - p.y * s + box.cx,
                p.x * s + p.y * c + box.cy,
                p.z + box.cz,
            )
        )
    return out


def points_in_box(points: Sequence[Point3], box: Box3D) -> list[bool]:
    """Boundary-inclusive membership mask for each point."""
    hl = box.l * 0.5
    hw = box.w * 0.5
    hh = box.h * 0.5
    local = world_to_local(points, box)
    return [abs(p.x) <= hl and abs(p.y) <= hw and abs(p.z) <= hh for p in local]


def bev_corners(box: Box3D) -> ConvexPolygon2:
    """Four CCW corners of the yaw-rotated l x w footprint around (cx, cy)."""
    hl = box.l * 0.5
    hw = box.w * 0.5
    c = math.cos(box.yaw)
    s = math.sin(box.yaw)
    local = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    world = tuple((box.cx + x * c - y * s, box.cy + x * s + y * c) for x, y in local)
    return ConvexPolygon2(world)


def shoelace_area(vertices: Sequence[tuple[float, float]]) -> float:
    n = len(vertices)
    acc = 0.0
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return abs(acc) * 0.5


def _clip_convex(
    subject: Sequence[tuple[float, float]], clip: Sequence[tuple[float, float]]
) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clipping of a convex subject by a convex CCW clip."""

    def inside(px: float, py: float, ax: float, ay: float, bx: float, by: float) -> bool:
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= -EDGE_TOLERANCE

    def intersect(
        sx: float, sy: float, ex: float, ey: float, ax: float, ay: float, bx: float, by: float
    ) -> tuple[float, float]:
        dcx = ax - bx
        dcy = ay - by
        dpx = sx - ex
        dpy = sy - ey
        n1 = ax * by - ay * bx
        n2 = sx * ey - sy * ex
        n3 = 1.0 / (dcx * dpy - dcy * dpx)
        return ((n1 * dpx - n2 * dcx) * n3, (n1 * dpy - n2 * dcy) * n3)

    output = list(subject)
    nclip = len(clip)
    for i in range(nclip):
        if not output:
            return []
        ax, ay = clip[i - 1] if i > 0 else clip[nclip - 1]
        bx, by = clip[i]
        current = output
        output = []
        sx, sy = current[-1]
        s_in = inside(sx, sy, ax, ay, bx, by)
        for ex, ey in current:
            e_in = inside(ex, ey, ax, ay, bx, by)
            if e_in:
                if not s_in:
                    output.append(intersect(sx, sy, ex, ey, ax, ay, bx, by))
                output.append((ex, ey))
            elif s_in:
                output.append(intersect(sx, sy, ex, ey, ax, ay, bx, by))
            sx, sy = ex, ey
            s_in = e_in
    return output


def polygon_intersection_area(a: ConvexPolygon2, b: ConvexPolygon2) -> float:
    """Area of the intersection; 0 when disjoint or the clip degenerates."""
    clipped = _clip_convex(a.vertices, b.vertices)
    if len(clipped) < 3:
        return 0.0
    return shoelace_area(clipped)


def iou_bev(a: Box3D, b: Box3D) -> float:
    """Rotated IoU of the two footprints, in [0, 1]."""
    inter = polygon_intersection_area(bev_corners(a), bev_corners(b))
    union = a.bev_area + b.bev_area - inter
    return _clamp01(inter / union)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volume IoU: footprint intersection times z-interval overlap, in [0, 1]."""
    za = a.h * 0.5
    zb = b.h * 0.5
    lo = max(a.cz - za, b.cz - zb)
    hi = min(a.cz + za, b.cz + zb)
    dz = hi - lo
    if dz <= 0.0:
        return 0.0
    inter_area = polygon_intersection_area(bev_corners(a), bev_corners(b))
    inter = inter_area * dz
    union = a.volume + b.volume - inter
    return _clamp01(inter / union)


def _clamp01(x: float) -> float:
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


def pairwise_iou_matrix(boxes_a: Sequence[Box3D], boxes_b: Sequence[Box3D]) -> np.ndarray:
    """|A| x |B| matrix of 3D IoUs; either side may be empty."""
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for j, a in enumerate(boxes_a):
        for v, b in enumerate(boxes_b):
            out[j, v] = iou_3d(a, b)
    return out


def nms_indices(
    boxes: Sequence[Box3D], scores: Sequence[float], iou_thresh: float
) -> tuple[list[int], dict[int, int]]:
    """Greedy NMS bookkeeping over parallel box/score lists.

    Returns the kept indices in descending score order plus a map from each
    suppressed index to the index of the survivor that removed it.  Ties are
    broken by score descending then original index ascending, which makes the
    result independent of the input permutation.
    """
    if len(boxes) != len(scores):
        raise ValueError("boxes and scores must have equal length")
    if not (0.0 <= iou_thresh <= 1.0):
        raise ValueError(f"iou_thresh must be in [0, 1], got {iou_thresh!r}")
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    suppressed_by: dict[int, int] = {}
    for pos, i in enumerate(order):
        if i in suppressed_by:
            continue
        kept.append(i)
        for j in order[pos + 1 :]:
            if j in suppressed_by:
                continue
            if iou_3d(boxes[i], boxes[j]) > iou_thresh:
                suppressed_by[j] = i
    return kept, suppressed_by


def nms(
    dets: Sequence[Detection], iou_thresh: float, score_field: ScoreField = ScoreField.IOU
) -> list[Detection]:
    """Greedy NMS over detections using 3D IoU; kept list is score-sorted."""
    field = ScoreField(score_field)
    scores = [d.cls_score if field is ScoreField.CLS else d.iou_score for d in dets]
    kept, _ = nms_indices([d.box for d in dets], scores, iou_thresh)
    return [dets[i] for i in kept]
