"""Canonical file formats: snapshots, scene/detection JSON Lines, documents.

Snapshot files are single JSON documents with a fixed header
(format_version, round, voting_thresholds, variant) and per-scene entry
arrays.  Every float is emitted as decimal text with 9 significant digits
through :func:`format_sig9`, a hand-rolled formatter whose arithmetic is
restricted to IEEE-754 operations plus a table of decimal powers, so a
foreign implementation can reproduce the bytes exactly (printf's %g and
ECMAScript's toPrecision disagree on notation thresholds and trailing
zeros, so neither is usable directly).

Scene and detection interchange files are JSON Lines, one scene per line.
"""

from __future__ import annotations

import json
import math
import os
from typing import Iterable, Mapping, Sequence

from .augmentation import Scene
from .geometry import Box3D, Detection, Point3
from .memory_bank import (
    DEFAULT_VOTING,
    EnsembleVariant,
    MemoryBank,
    MergeRule,
    SceneMemory,
    VotingThresholds,
    update_bank,
)
from .pseudo_label import BoxState, PseudoBox, TripletThresholds, triplet_partition

SNAPSHOT_FORMAT_VERSION = 1

_BOX_FIELDS = ("cx", "cy", "cz", "l", "w", "h", "yaw")


class SnapshotError(ValueError):
    """Base class for snapshot file problems."""


class SnapshotVersionError(SnapshotError):
    """The file declares a format version this code does not understand."""


class SnapshotFormatError(SnapshotError):
    """The file is not a well-formed snapshot document."""


# Exact-parse powers of ten; index k+300 holds the double nearest 10^k.
_POW10 = [float(f"1e{k}") for k in range(-300, 301)]
_POW10_MIN_EXP = -300
_POW10_MAX_EXP = 300


def _round_half_even(v: float) -> float:
    f = math.floor(v)
    r = v - f
    if r > 0.5:
        return f + 1.0
    if r < 0.5:
        return f
    return f if math.fmod(f, 2.0) == 0.0 else f + 1.0


def format_sig9(x: float) -> str:
    """Render a finite float as decimal text with 9 significant digits.

    Plain notation for decimal exponents in [-4, 8], otherwise exponent
    notation with a sign and at least two exponent digits.  Trailing zeros
    are stripped.  Magnitudes outside [1e-300, 1e300] are rejected; nothing
    in this codebase produces them.
    """
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x!r}")
    if x == 0.0:
        return "0"
    neg = x < 0.0
    a = -x if neg else x
    if a < 1e-300 or a >= 1e300:
        raise ValueError(f"magnitude out of serializable range: {x!r}")
    # Largest e with 10^e <= a, by binary search over the table.
    lo, hi = 0, len(_POW10) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if _POW10[mid] <= a:
            lo = mid
        else:
            hi = mid - 1
    e = lo + _POW10_MIN_EXP
    v = a / _POW10[e - _POW10_MIN_EXP]
    if v >= 10.0:
        e += 1
        v = a / _POW10[e - _POW10_MIN_EXP]
    elif v < 1.0:
        e -= 1
        v = a / _POW10[e - _POW10_MIN_EXP]
    n = _round_half_even(v * 1e8)
    if n >= 1e9:
        n = 1e8
        e += 1
    digits = str(int(n)).rstrip("0")
    out: str
    if -4 <= e < 9:
        if e >= 0:
            if len(digits) <= e + 1:
                out = digits + "0" * (e + 1 - len(digits))
            else:
                out = digits[: e + 1] + "." + digits[e + 1 :]
        else:
            out = "0." + "0" * (-e - 1) + digits
    else:
        mantissa = digits[0] + ("." + digits[1:] if len(digits) > 1 else "")
        sign = "-" if e < 0 else "+"
        mag = -e if e < 0 else e
        out = f"{mantissa}e{sign}{mag:02d}"
    return "-" + out if neg else out


def _json_string(s: str) -> str:
    return json.dumps(s, ensure_ascii=True)


def _entry_text(e: PseudoBox) -> str:
    b = e.box
    return (
        '{"cx":' + format_sig9(b.cx)
        + ',"cy":' + format_sig9(b.cy)
        + ',"cz":' + format_sig9(b.cz)
        + ',"l":' + format_sig9(b.l)
        + ',"w":' + format_sig9(b.w)
        + ',"h":' + format_sig9(b.h)
        + ',"yaw":' + format_sig9(b.yaw)
        + ',"u":' + format_sig9(e.u)
        + ',"state":"' + e.state.value
        + '","cnt":' + str(e.cnt)
        + "}"
    )


def dump_snapshot(bank: MemoryBank) -> str:
    """Render a bank as canonical snapshot text (scenes sorted by id)."""
    scene_parts = []
    for scene_id in sorted(bank.scenes):
        mem = bank.scenes[scene_id]
        entries = ",".join(_entry_text(e) for e in mem.entries)
        scene_parts.append(
            '{"scene_id":' + _json_string(scene_id) + ',"entries":[' + entries + "]}"
        )
    return (
        '{"format_version":' + str(SNAPSHOT_FORMAT_VERSION)
        + ',"round":' + str(bank.round)
        + ',"voting_thresholds":{"t_ign":' + str(bank.voting.t_ign)
        + ',"t_rm":' + str(bank.voting.t_rm)
        + '},"variant":"' + bank.variant.value
        + '","scenes":[' + ",".join(scene_parts) + "]}\n"
    )


def _finite_number(obj, what: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)) or not math.isfinite(obj):
        raise SnapshotFormatError(f"{what} must be a finite number, got {obj!r}")
    return float(obj)


def _parse_entry(obj, what: str) -> PseudoBox:
    if not isinstance(obj, dict):
        raise SnapshotFormatError(f"{what} must be an object")
    try:
        box = Box3D(*(_finite_number(obj[k], f"{what}.{k}") for k in _BOX_FIELDS))
        u = _finite_number(obj["u"], f"{what}.u")
        state = obj["state"]
        cnt = obj["cnt"]
    except KeyError as exc:
        raise SnapshotFormatError(f"{what} missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise SnapshotFormatError(f"{what}: {exc}") from None
    if state not in (BoxState.POSITIVE.value, BoxState.IGNORED.value):
        raise SnapshotFormatError(f"{what}.state must be positive|ignored, got {state!r}")
    if isinstance(cnt, bool) or not isinstance(cnt, int) or cnt < 0:
        raise SnapshotFormatError(f"{what}.cnt must be a non-negative integer, got {cnt!r}")
    try:
        return PseudoBox(box, u, BoxState(state), cnt)
    except ValueError as exc:
        raise SnapshotFormatError(f"{what}: {exc}") from None


def parse_snapshot(text: str) -> MemoryBank:
    """Parse snapshot text into a bank, validating structure and invariants."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SnapshotFormatError(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SnapshotFormatError("snapshot document must be a JSON object")
    version = doc.get("format_version")
    if version != SNAPSHOT_FORMAT_VERSION:
        raise SnapshotVersionError(f"unsupported snapshot format version {version!r}")
    try:
        rnd = doc["round"]
        vt = doc["voting_thresholds"]
        variant = doc["variant"]
        scenes_obj = doc["scenes"]
    except KeyError as exc:
        raise SnapshotFormatError(f"missing snapshot field {exc.args[0]!r}") from None
    if isinstance(rnd, bool) or not isinstance(rnd, int) or rnd < 0:
        raise SnapshotFormatError(f"round must be a non-negative integer, got {rnd!r}")
    if not isinstance(vt, dict) or not isinstance(scenes_obj, list):
        raise SnapshotFormatError("bad voting_thresholds or scenes structure")
    try:
        voting = VotingThresholds(int(vt["t_ign"]), int(vt["t_rm"]))
        variant = EnsembleVariant(variant)
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotFormatError(f"bad voting thresholds or variant: {exc}") from None
    scenes = {}
    for i, scene_obj in enumerate(scenes_obj):
        what = f"scenes[{i}]"
        if not isinstance(scene_obj, dict):
            raise SnapshotFormatError(f"{what} must be an object")
        scene_id = scene_obj.get("scene_id")
        entries_obj = scene_obj.get("entries")
        if not isinstance(scene_id, str) or not scene_id:
            raise SnapshotFormatError(f"{what}.scene_id must be a non-empty string")
        if scene_id in scenes:
            raise SnapshotFormatError(f"duplicate scene id {scene_id!r}")
        if not isinstance(entries_obj, list):
            raise SnapshotFormatError(f"{what}.entries must be an array")
        entries = tuple(
            _parse_entry(e, f"{what}.entries[{j}]") for j, e in enumerate(entries_obj)
        )
        try:
            scenes[scene_id] = SceneMemory(scene_id, rnd, entries)
        except ValueError as exc:
            raise SnapshotFormatError(f"{what}: {exc}") from None
    try:
        return MemoryBank(scenes, rnd, voting, variant)
    except ValueError as exc:
        raise SnapshotFormatError(str(exc)) from None


def write_text_atomic(path, text: str) -> None:
    """Write via a temp file and rename, so readers never see partial files."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Scene / detection JSON Lines
# ---------------------------------------------------------------------------


def _box_obj_text(b: Box3D) -> str:
    return (
        '{"cx":' + format_sig9(b.cx)
        + ',"cy":' + format_sig9(b.cy)
        + ',"cz":' + format_sig9(b.cz)
        + ',"l":' + format_sig9(b.l)
        + ',"w":' + format_sig9(b.w)
        + ',"h":' + format_sig9(b.h)
        + ',"yaw":' + format_sig9(b.yaw)
        + "}"
    )


def dump_scene_line(scene: Scene) -> str:
    boxes = ",".join(_box_obj_text(b) for b in scene.boxes)
    points = ",".join(
        "[" + format_sig9(p.x) + "," + format_sig9(p.y) + "," + format_sig9(p.z) + "]"
        for p in scene.points
    )
    return (
        '{"id":' + _json_string(scene.id) + ',"boxes":[' + boxes + '],"points":[' + points + "]}"
    )


def dump_scenes(scenes: Iterable[Scene]) -> str:
    return "".join(dump_scene_line(s) + "\n" for s in scenes)


def _parse_box(obj, what: str) -> Box3D:
    if not isinstance(obj, dict):
        raise ValueError(f"{what} must be an object")
    try:
        return Box3D(*(_finite_number(obj[k], f"{what}.{k}") for k in _BOX_FIELDS))
    except KeyError as exc:
        raise ValueError(f"{what} missing field {exc.args[0]!r}") from None


def parse_scenes(text: str) -> list[Scene]:
    """Parse scene JSON Lines: {id, boxes:[...], points:[[x,y,z],...]}."""
    scenes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        what = f"scene line {lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{what}: not valid JSON: {exc}") from None
        if not isinstance(obj, dict) or not isinstance(obj.get("id"), str) or not obj["id"]:
            raise ValueError(f"{what}: needs a non-empty string id")
        boxes = [
            _parse_box(b, f"{what} box {i}") for i, b in enumerate(obj.get("boxes", []))
        ]
        points = []
        for i, p in enumerate(obj.get("points", [])):
            if not (isinstance(p, list) and len(p) == 3):
                raise ValueError(f"{what} point {i}: expected [x, y, z]")
            points.append(Point3(*(_finite_number(c, f"{what} point {i}") for c in p)))
        scenes.append(Scene(obj["id"], tuple(points), tuple(boxes)))
    return scenes


def dump_detections_line(scene_id: str, dets: Sequence[Detection]) -> str:
    parts = []
    for d in dets:
        parts.append(
            _box_obj_text(d.box)[:-1]
            + ',"cls_score":' + format_sig9(d.cls_score)
            + ',"iou_score":' + format_sig9(d.iou_score)
            + "}"
        )
    return '{"id":' + _json_string(scene_id) + ',"detections":[' + ",".join(parts) + "]}"


def dump_detections(per_scene: Mapping[str, Sequence[Detection]]) -> str:
    return "".join(dump_detections_line(sid, dets) + "\n" for sid, dets in per_scene.items())


def parse_detections(text: str) -> dict[str, list[Detection]]:
    """Parse detection JSON Lines: {id, detections:[{box fields, scores}]}."""
    out: dict[str, list[Detection]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        what = f"detection line {lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{what}: not valid JSON: {exc}") from None
        if not isinstance(obj, dict) or not isinstance(obj.get("id"), str) or not obj["id"]:
            raise ValueError(f"{what}: needs a non-empty string id")
        if obj["id"] in out:
            raise ValueError(f"{what}: duplicate scene id {obj['id']!r}")
        dets = []
        for i, d in enumerate(obj.get("detections", [])):
            box = _parse_box(d, f"{what} detection {i}")
            try:
                dets.append(
                    Detection(
                        box,
                        _finite_number(d["cls_score"], f"{what} detection {i} cls_score"),
                        _finite_number(d["iou_score"], f"{what} detection {i} iou_score"),
                    )
                )
            except KeyError as exc:
                raise ValueError(f"{what} detection {i} missing {exc.args[0]!r}") from None
        out[obj["id"]] = dets
    return out


# ---------------------------------------------------------------------------
# Document-level memory update (shared by the CLI and the bindings fixtures)
# ---------------------------------------------------------------------------


class OptionsError(ValueError):
    """Bad options document for the document-level update."""


def _resolve_options(options: dict, bank: MemoryBank | None):
    if not isinstance(options, dict):
        raise OptionsError("options must be a JSON object")
    allowed = {"variant", "merge", "t_neg", "t_pos", "t_ign", "t_rm"}
    unknown = set(options) - allowed
    if unknown:
        raise OptionsError(f"unknown option keys: {sorted(unknown)}")
    try:
        variant = EnsembleVariant(
            options.get("variant", bank.variant.value if bank else "consistency")
        )
        merge = MergeRule(options.get("merge", "max"))
        t_neg = float(options.get("t_neg", 0.25))
        t_pos = float(options.get("t_pos", 0.6))
        triplet = TripletThresholds(t_neg, t_pos)
        default_vote = bank.voting if bank else DEFAULT_VOTING
        voting = VotingThresholds(
            int(options.get("t_ign", default_vote.t_ign)),
            int(options.get("t_rm", default_vote.t_rm)),
        )
    except (TypeError, ValueError) as exc:
        raise OptionsError(str(exc)) from None
    return variant, merge, triplet, voting


def update_memory_documents(snapshot_doc: str, detections_doc: str, options_doc: str) -> str:
    """Run triplet partition plus memory update at the document level.

    An empty snapshot document bootstraps a round-0 bank.  Options may
    override the variant and thresholds recorded in the snapshot header.
    Returns the new snapshot text.
    """
    try:
        options = json.loads(options_doc) if options_doc.strip() else {}
    except json.JSONDecodeError as exc:
        raise OptionsError(f"options not valid JSON: {exc}") from None
    bank = parse_snapshot(snapshot_doc) if snapshot_doc.strip() else None
    variant, merge, triplet, voting = _resolve_options(options, bank)
    if bank is None:
        bank = MemoryBank({}, 0, voting, variant)
    detections = parse_detections(detections_doc)
    proxies = {sid: triplet_partition(dets, triplet) for sid, dets in detections.items()}
    return dump_snapshot(update_bank(bank, proxies, merge, voting=voting, variant=variant))
