"""Command-line entry point.

Subcommands: ``simulate`` (run a self-training experiment from a config
file), ``update`` (one pseudo-label update over detection/snapshot files),
``eval`` (score a snapshot or detection file against ground-truth scenes),
and ``iou`` (print the IoU of two boxes).

Exit codes are a stable contract: 0 success, 1 runtime failure, 2 usage or
input-parse failure.  Output files are written atomically and contain no
timestamps, so identical inputs produce byte-identical outputs.  Set
BOXLAB_LOG to a level name (DEBUG, INFO, ...) for logging verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import serialize
from .geometry import Box3D, iou_3d, iou_bev
from .metrics import EvalConfig, IouKind, ap_recall_positions, closed_gap, pseudo_label_quality
from .pseudo_label import BoxState, PseudoBox
from .sim import config_from_dict, config_to_dict, run_experiment

log = logging.getLogger("boxlab")


class UsageError(Exception):
    """Bad invocation or unparseable input: exits with code 2."""


def _read_text(path: str, what: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path!r}: {exc}") from None


def _dump_json(obj) -> str:
    return json.dumps(obj, separators=(",", ":")) + "\n"


def cmd_simulate(args) -> int:
    text = _read_text(args.config, "config file")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from None
    try:
        cfg = config_from_dict(doc)
        if args.seed is not None:
            from dataclasses import replace

            cfg = replace(
                cfg,
                seed=args.seed,
                scene_gen=replace(cfg.scene_gen, seed=args.seed),
                detector=replace(cfg.detector, seed=args.seed),
            )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from None

    os.makedirs(args.out_dir, exist_ok=True)
    report, state = run_experiment(cfg)

    rounds_path = os.path.join(args.out_dir, "rounds.jsonl")
    serialize.write_text_atomic(
        rounds_path, "".join(_dump_json(r.to_dict()) for r in report.records)
    )
    summary = {"config": config_to_dict(cfg), **report.to_dict()}
    serialize.write_text_atomic(os.path.join(args.out_dir, "summary.json"), _dump_json(summary))
    serialize.write_text_atomic(
        os.path.join(args.out_dir, "snapshot.json"), serialize.dump_snapshot(state.bank)
    )
    serialize.write_text_atomic(
        os.path.join(args.out_dir, "scenes.jsonl"), serialize.dump_scenes(state.scenes)
    )
    q = report.final_quality
    print(f"pipeline={cfg.pipeline.value} rounds={cfg.rounds} scenes={len(state.scenes)}")
    print(
        f"final f1={q.f1:.4f} precision={q.precision:.4f} recall={q.recall:.4f} "
        f"ap={report.final_ap:.4f}"
    )
    print(f"reports written to {args.out_dir}")
    return 0


def cmd_update(args) -> int:
    detections_doc = _read_text(args.detections, "detections file")
    snapshot_doc = _read_text(args.snapshot_in, "snapshot file") if args.snapshot_in else ""
    options = {}
    for key in ("variant", "merge", "t_neg", "t_pos", "t_ign", "t_rm"):
        value = getattr(args, key)
        if value is not None:
            options[key] = value
    try:
        out = serialize.update_memory_documents(snapshot_doc, detections_doc, json.dumps(options))
    except (serialize.SnapshotError, serialize.OptionsError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    serialize.write_text_atomic(args.snapshot_out, out)
    bank = serialize.parse_snapshot(out)
    for scene_id in sorted(bank.scenes):
        entries = bank.scenes[scene_id].entries
        pos = sum(1 for e in entries if e.state is BoxState.POSITIVE)
        print(f"{scene_id}: positive={pos} ignored={len(entries) - pos} total={len(entries)}")
    print(f"round={bank.round} scenes={len(bank.scenes)} -> {args.snapshot_out}")
    return 0


def _load_predictions(path: str) -> dict[str, list[tuple[Box3D, float]]]:
    """Positive entries of a snapshot, or detections scored by iou_score."""
    text = _read_text(path, "predictions file")
    stripped = text.lstrip()
    if stripped.startswith("{") and '"format_version"' in stripped.split("\n", 1)[0]:
        try:
            bank = serialize.parse_snapshot(text)
        except serialize.SnapshotError as exc:
            raise UsageError(f"bad snapshot {path!r}: {exc}") from None
        return {
            scene_id: [(e.box, e.u) for e in mem.entries if e.state is BoxState.POSITIVE]
            for scene_id, mem in bank.scenes.items()
        }
    try:
        dets = serialize.parse_detections(text)
    except ValueError as exc:
        raise UsageError(f"bad detections {path!r}: {exc}") from None
    return {sid: [(d.box, d.iou_score) for d in ds] for sid, ds in dets.items()}


def cmd_eval(args) -> int:
    if args.closed_gap is not None:
        model, source, oracle = args.closed_gap
        try:
            gap = closed_gap(model, source, oracle)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        print(f"closed_gap {gap:.2f}%")
        if args.pred is None or args.gt is None:
            return 0
    if args.pred is None or args.gt is None:
        raise UsageError("eval needs --pred and --gt (or --closed-gap alone)")
    preds = _load_predictions(args.pred)
    try:
        scenes = serialize.parse_scenes(_read_text(args.gt, "scene file"))
    except ValueError as exc:
        raise UsageError(f"bad scene file {args.gt!r}: {exc}") from None
    gts = {s.id: list(s.boxes) for s in scenes}
    if sum(len(b) for b in gts.values()) == 0:
        raise UsageError("no ground-truth boxes in the scene file")
    cfg = EvalConfig(iou_threshold=args.iou, iou_kind=IouKind(args.kind))

    scene_ids = sorted(set(preds) | set(gts))
    fake_memories = {}
    from .memory_bank import SceneMemory

    for sid in scene_ids:
        entries = tuple(
            PseudoBox(box, score, BoxState.POSITIVE, 0) for box, score in preds.get(sid, [])
        )
        fake_memories[sid] = SceneMemory(sid, 1, entries)
    quality = pseudo_label_quality(fake_memories, gts, cfg)
    ap = ap_recall_positions(
        [preds.get(sid, []) for sid in scene_ids],
        [gts.get(sid, []) for sid in scene_ids],
        cfg,
    )

    print(f"{'metric':<12}{'value':>12}")
    rows = [
        ("tp", quality.tp_count),
        ("fp", quality.fp_count),
        ("fn", quality.fn_count),
        ("precision", f"{quality.precision:.4f}"),
        ("recall", f"{quality.recall:.4f}"),
        ("f1", f"{quality.f1:.4f}"),
        ("ate_m", f"{quality.ate:.4f}"),
        ("ase", f"{quality.ase:.4f}"),
        ("aoe_rad", f"{quality.aoe:.4f}"),
        (f"ap@{cfg.recall_positions}", f"{ap:.4f}"),
    ]
    for name, value in rows:
        print(f"{name:<12}{value:>12}")
    if args.out:
        serialize.write_text_atomic(
            args.out, _dump_json({"quality": quality.to_dict(), "ap": ap})
        )
    return 0


def cmd_iou(args) -> int:
    try:
        a = Box3D(*args.box[:7])
        b = Box3D(*args.box[7:])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad box: {exc}") from None
    print(f"bev {iou_bev(a, b):.6f}")
    print(f"3d  {iou_3d(a, b):.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boxlab", description="Pseudo-label engine for oriented 3D boxes"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a self-training experiment from a JSON config")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out-dir", required=True, help="directory for reports and snapshots")
    p.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("update", help="one pseudo-label update over files")
    p.add_argument("--detections", required=True, help="detections JSON Lines")
    p.add_argument("--snapshot-in", default=None, help="existing snapshot (omit to bootstrap)")
    p.add_argument("--snapshot-out", required=True, help="where to write the updated snapshot")
    p.add_argument("--variant", choices=["consistency", "nms", "bipartite"], default=None)
    p.add_argument("--merge", choices=["max", "avg"], default=None)
    p.add_argument("--t-neg", dest="t_neg", type=float, default=None)
    p.add_argument("--t-pos", dest="t_pos", type=float, default=None)
    p.add_argument("--t-ign", dest="t_ign", type=int, default=None)
    p.add_argument("--t-rm", dest="t_rm", type=int, default=None)
    p.set_defaults(fn=cmd_update)

    p = sub.add_parser("eval", help="score predictions against ground-truth scenes")
    p.add_argument("--pred", default=None, help="snapshot JSON or detections JSON Lines")
    p.add_argument("--gt", default=None, help="ground-truth scene JSON Lines")
    p.add_argument("--iou", type=float, default=0.7, help="IoU threshold (default 0.7)")
    p.add_argument("--kind", choices=["bev", "3d"], default="3d")
    p.add_argument("--out", default=None, help="optional JSON summary path")
    p.add_argument(
        "--closed-gap",
        dest="closed_gap",
        nargs=3,
        type=float,
        metavar=("AP_MODEL", "AP_SOURCE", "AP_ORACLE"),
        default=None,
        help="also report the closed performance gap for three AP values",
    )
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("iou", help="print BEV and 3D IoU of two boxes")
    p.add_argument(
        "box",
        nargs=14,
        type=float,
        metavar="N",
        help="two boxes: cx cy cz l w h yaw, twice",
    )
    p.set_defaults(fn=cmd_iou)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("BOXLAB_LOG", "WARNING").upper())
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure contract
        log.debug("unhandled failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
