#!/usr/bin/env python3
"""Generate the randomized parity fixtures consumed by the bindings package.

Each fixture pairs serialized inputs with the byte-exact output the bindings
must reproduce.  Fixture generation is fully seeded: rerunning this script
always produces identical files, and the test suite regenerates them in
memory to detect drift against the committed copies.

Run from the repository root:  python3 scripts/make_binding_fixtures.py
"""

from __future__ import annotations

import json
import math
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from boxlab import Box3D, Detection  # noqa: E402
from boxlab.geometry import iou_bev, iou_3d  # noqa: E402
from boxlab.serialize import (  # noqa: E402
    dump_detections,
    format_sig9,
    update_memory_documents,
)

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "..", "fixtures", "bindings")

N_IOU_FIXTURES = 50
N_UPDATE_FIXTURES = 50


def dump_iou_matrix(rows: int, cols: int, values) -> str:
    """Canonical text for a row-major IoU matrix (the bindings' output)."""
    body = ",".join(format_sig9(v) for v in values)
    return '{"rows":' + str(rows) + ',"cols":' + str(cols) + ',"values":[' + body + "]}\n"


def batch_iou_reference(a_flat, b_flat, kind: str) -> str:
    boxes_a = [Box3D(*a_flat[i * 7 : (i + 1) * 7]) for i in range(len(a_flat) // 7)]
    boxes_b = [Box3D(*b_flat[i * 7 : (i + 1) * 7]) for i in range(len(b_flat) // 7)]
    fn = iou_bev if kind == "bev" else iou_3d
    values = [fn(a, b) for a in boxes_a for b in boxes_b]
    return dump_iou_matrix(len(boxes_a), len(boxes_b), values)


def _random_cluster(rng: np.random.Generator, n: int) -> list[float]:
    """Flat box array with plenty of overlap between nearby boxes."""
    flat: list[float] = []
    anchors = [(float(rng.uniform(-20, 20)), float(rng.uniform(-20, 20))) for _ in range(max(n // 2, 1))]
    for _ in range(n):
        ax, ay = anchors[int(rng.integers(0, len(anchors)))]
        flat.extend(
            [
                ax + float(rng.uniform(-2, 2)),
                ay + float(rng.uniform(-2, 2)),
                float(rng.uniform(-0.5, 1.5)),
                float(rng.uniform(1.0, 5.5)),
                float(rng.uniform(0.8, 3.0)),
                float(rng.uniform(0.8, 2.5)),
                float(rng.uniform(-math.pi, math.pi)),
            ]
        )
    return flat


def make_iou_fixture(index: int) -> dict:
    rng = np.random.default_rng([2024, 1, index])
    kind = "bev" if index % 2 == 0 else "3d"
    if index == 0:
        n_a, n_b = 0, 3  # empty side must serialize as a 0 x 3 matrix
    elif index == 1:
        n_a, n_b = 1, 1
    else:
        n_a = int(rng.integers(1, 9))
        n_b = int(rng.integers(1, 9))
    a = _random_cluster(rng, n_a)
    b = _random_cluster(rng, n_b)
    return {
        "kind": kind,
        "a": a,
        "b": b,
        "expected": batch_iou_reference(a, b, kind),
    }


def _random_detections(rng: np.random.Generator, scene_ids) -> dict:
    out = {}
    for sid in scene_ids:
        dets = []
        for _ in range(int(rng.integers(0, 6))):
            flat = _random_cluster(rng, 1)
            u = float(rng.uniform(0, 1))
            cls = float(rng.uniform(0, 1))
            dets.append(Detection(Box3D(*flat), cls, u))
        out[sid] = dets
    return out


def make_update_fixture(index: int) -> dict:
    rng = np.random.default_rng([2024, 2, index])
    variants = ["consistency", "nms", "bipartite"]
    options = {
        "variant": variants[index % 3],
        "merge": "max" if index % 4 else "avg",
        "t_neg": round(float(rng.uniform(0.05, 0.3)), 2),
        "t_pos": round(float(rng.uniform(0.4, 0.7)), 2),
        "t_ign": 2,
        "t_rm": 3,
    }
    options_doc = json.dumps(options, separators=(",", ":"))
    scene_ids = [f"s{i}" for i in range(int(rng.integers(1, 4)))]
    if index < 5:
        snapshot_doc = ""  # bootstrap case
    else:
        seed_dets = _random_detections(rng, scene_ids)
        snapshot_doc = update_memory_documents("", dump_detections(seed_dets), options_doc)
    detections = _random_detections(rng, scene_ids)
    detections_doc = dump_detections(detections)
    expected = update_memory_documents(snapshot_doc, detections_doc, options_doc)
    return {
        "snapshot": snapshot_doc,
        "detections": detections_doc,
        "options": options_doc,
        "expected": expected,
    }


def generate_all() -> dict[str, dict]:
    fixtures = {}
    for i in range(N_IOU_FIXTURES):
        fixtures[f"batch_iou_{i:03d}.json"] = make_iou_fixture(i)
    for i in range(N_UPDATE_FIXTURES):
        fixtures[f"update_{i:03d}.json"] = make_update_fixture(i)
    return fixtures


def write_all(out_dir: str = FIXTURE_DIR) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for name, doc in generate_all().items():
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")


if __name__ == "__main__":
    write_all()
    print(f"wrote {N_IOU_FIXTURES + N_UPDATE_FIXTURES} fixtures to {FIXTURE_DIR}")
