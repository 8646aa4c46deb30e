"""Generate and verify the parity fixtures for the bindings package.

The committed fixtures are the contract the foreign bindings test against;
this module regenerates them from the seeded generator and fails if the
primary implementation has drifted from the committed expectations.
"""

import importlib.util
import json
import os

import pytest

from boxlab.cli import main
from boxlab.serialize import parse_snapshot

REPO = os.path.join(os.path.dirname(__file__), "..")
FIXTURE_DIR = os.path.join(REPO, "fixtures", "bindings")


def _load_generator():
    path = os.path.join(REPO, "scripts", "make_binding_fixtures.py")
    spec = importlib.util.spec_from_file_location("make_binding_fixtures", path)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


GEN = _load_generator()


@pytest.fixture(scope="module")
def fixtures():
    if not os.path.isdir(FIXTURE_DIR) or not os.listdir(FIXTURE_DIR):
        GEN.write_all()
    return GEN.generate_all()


def test_fixture_count(fixtures):
    assert len(fixtures) == 100


def test_committed_fixtures_match_generator(fixtures):
    for name, doc in fixtures.items():
        path = os.path.join(FIXTURE_DIR, name)
        assert os.path.exists(path), f"missing fixture {name}; run scripts/make_binding_fixtures.py"
        with open(path, "r", encoding="utf-8") as fh:
            committed = json.load(fh)
        assert committed == doc, f"fixture {name} drifted; regenerate and re-verify"


def test_iou_expectations_reproducible(fixtures):
    for name, doc in fixtures.items():
        if not name.startswith("batch_iou"):
            continue
        again = GEN.batch_iou_reference(doc["a"], doc["b"], doc["kind"])
        assert again == doc["expected"]


def test_update_expectations_are_valid_snapshots(fixtures):
    for name, doc in fixtures.items():
        if not name.startswith("update"):
            continue
        bank = parse_snapshot(doc["expected"])
        assert bank.round >= 1


def test_update_fixtures_match_cli_byte_for_byte(fixtures, tmp_path):
    checked = 0
    for name, doc in sorted(fixtures.items()):
        if not name.startswith("update") or checked >= 10:
            continue
        det_path = tmp_path / f"{name}.dets.jsonl"
        det_path.write_text(doc["detections"])
        out_path = tmp_path / f"{name}.out.json"
        args = ["update", "--detections", str(det_path), "--snapshot-out", str(out_path)]
        if doc["snapshot"]:
            snap_path = tmp_path / f"{name}.in.json"
            snap_path.write_text(doc["snapshot"])
            args += ["--snapshot-in", str(snap_path)]
        options = json.loads(doc["options"])
        args += [
            "--variant", options["variant"],
            "--merge", options["merge"],
            "--t-neg", str(options["t_neg"]),
            "--t-pos", str(options["t_pos"]),
            "--t-ign", str(options["t_ign"]),
            "--t-rm", str(options["t_rm"]),
        ]
        assert main(args) == 0
        assert out_path.read_text() == doc["expected"]
        checked += 1
    assert checked == 10
