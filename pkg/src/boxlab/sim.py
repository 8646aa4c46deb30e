"""Desk-scale self-training harness with a parametric noisy detector.

The harness generates synthetic scenes once, then alternates pseudo-label
generation and "training" for a configured number of rounds.  Training is
abstracted as feedback: the better the previous round's pseudo-label F1, the
closer the detector's noise parameters move toward their floors (and its
detection probability toward its ceiling).  Per-round multiplicative jitter
on detection probability and false-positive rate models epoch-to-epoch model
fluctuation.

Two pipelines are supported on identical random streams: "naive" replaces
the label set wholesale each round with the detections above the positive
threshold, while "memory" runs the full match/merge/vote update.  When the
curriculum schedule is enabled, its stage caps the feedback that can be
realized early in the run (the cap rises stage by stage), which is how the
scheduler participates in the closed loop here.

Randomness is strictly stream-keyed: every draw comes from a generator
seeded by (seed, stream tag, round, scene), so runs are bit-reproducible and
scenes are independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping

import numpy as np

from .augmentation import AugKind, CdaSchedule, Scene, stage_of_epoch
from .geometry import Box3D, Detection, Point3, iou_3d, local_to_world, nms
from .memory_bank import (
    DEFAULT_VOTING,
    EnsembleVariant,
    MemoryBank,
    MergeRule,
    SceneMemory,
    VotingThresholds,
    update_bank,
)
from .metrics import EvalConfig, QualityReport, ap_recall_positions, pseudo_label_quality
from .pseudo_label import BoxState, DEFAULT_TRIPLET, PseudoBox, TripletThresholds, triplet_partition

# Stream tags keep the per-purpose generators disjoint.
_STREAM_SCENE_GEN = 1
_STREAM_JITTER = 2
_STREAM_DETECTOR = 3

# Face points are pulled this far (relative) inside the box so membership
# tests survive world/local coordinate round-trips.
_FACE_INSET = 1e-9


class Pipeline(str, Enum):
    NAIVE = "naive"
    MEMORY = "memory"


@dataclass(frozen=True)
class SceneGenConfig:
    """Synthetic scene layout parameters."""

    n_scenes: int = 50
    boxes_min: int = 2
    boxes_max: int = 6
    extent: float = 40.0
    size_mean: tuple[float, float, float] = (4.2, 1.9, 1.6)
    size_std: tuple[float, float, float] = (0.4, 0.15, 0.12)
    min_separation: float = 8.0
    points_per_box: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "size_mean", tuple(float(v) for v in self.size_mean))
        object.__setattr__(self, "size_std", tuple(float(v) for v in self.size_std))
        if self.n_scenes < 0 or self.points_per_box < 0:
            raise ValueError("counts must be non-negative")
        if not (0 <= self.boxes_min <= self.boxes_max):
            raise ValueError("need 0 <= boxes_min <= boxes_max")
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        if any(v <= 0 for v in self.size_mean) or any(v < 0 for v in self.size_std):
            raise ValueError("size mean must be positive and std non-negative")
        if self.min_separation < 0:
            raise ValueError("min_separation must be >= 0")


@dataclass(frozen=True)
class DetectorModel:
    """Parametric noisy detector.

    Per ground-truth box: detected with probability p_det; center, size and
    heading perturbed by the sigmas; the quality score u is the true IoU with
    the source box plus Gaussian noise, clamped to [0, 1].  False positives
    arrive at Poisson rate fp_rate per scene with Beta(fp_score_a,
    fp_score_b) scores.  ``fluctuation`` is the log-std of per-round jitter
    on p_det and fp_rate.  ``feedback_gain`` scales how strongly the previous
    F1 pulls parameters toward noise_floor (a fraction of the base value
    retained at full feedback) and p_det toward p_det_ceiling.
    """

    p_det: float = 0.75
    fp_rate: float = 0.8
    sigma_xy: float = 0.25
    sigma_z: float = 0.08
    sigma_size: float = 0.05
    sigma_yaw: float = 0.06
    sigma_u: float = 0.08
    fp_score_a: float = 2.0
    fp_score_b: float = 8.0
    fluctuation: float = 0.0
    feedback_gain: float = 0.0
    noise_floor: float = 0.2
    p_det_ceiling: float = 0.98
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p_det", "p_det_ceiling", "feedback_gain", "noise_floor"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v!r}")
        for name in (
            "fp_rate", "sigma_xy", "sigma_z", "sigma_size", "sigma_yaw", "sigma_u", "fluctuation",
        ):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"{name} must be >= 0, got {v!r}")
        if self.fp_score_a <= 0 or self.fp_score_b <= 0:
            raise ValueError("Beta shape parameters must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    scene_gen: SceneGenConfig = SceneGenConfig()
    detector: DetectorModel = DetectorModel()
    pipeline: Pipeline = Pipeline.MEMORY
    variant: EnsembleVariant = EnsembleVariant.CONSISTENCY
    merge: MergeRule = MergeRule.MAX
    triplet: TripletThresholds = DEFAULT_TRIPLET
    voting: VotingThresholds = DEFAULT_VOTING
    rounds: int = 10
    update_period: int = 2
    cda: CdaSchedule = CdaSchedule(
        kinds=(
            AugKind.WORLD_ROTATION,
            AugKind.WORLD_SCALING,
            AugKind.WORLD_FLIP_X,
            AugKind.OBJECT_ROTATION,
            AugKind.OBJECT_SCALING,
        ),
        eps0=(math.pi / 40, 0.05, 0.0, math.pi / 40, 0.05),
        alpha=1.2,
        stages=6,
        total_epochs=30,
    )
    eval: EvalConfig = EvalConfig(iou_threshold=0.5)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "pipeline", Pipeline(self.pipeline))
        object.__setattr__(self, "variant", EnsembleVariant(self.variant))
        object.__setattr__(self, "merge", MergeRule(self.merge))
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.update_period < 1:
            raise ValueError("update_period must be >= 1")


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([abs(int(k)) for k in key])


def _sample_size(rng: np.random.Generator, cfg: SceneGenConfig) -> tuple[float, float, float]:
    out = []
    for mean, std in zip(cfg.size_mean, cfg.size_std):
        v = rng.normal(mean, std)
        out.append(max(v, 0.2 * mean))
    return tuple(out)


def _face_points(box: Box3D, n: int, rng: np.random.Generator) -> list[Point3]:
    """Uniform samples over the box surface, nudged slightly inward."""
    hl, hw, hh = box.l * 0.5, box.w * 0.5, box.h * 0.5
    areas = np.array([box.w * box.h, box.w * box.h, box.l * box.h, box.l * box.h,
                      box.l * box.w, box.l * box.w])
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=n)
    v = rng.uniform(-1.0, 1.0, size=n)
    shrink = 1.0 - _FACE_INSET
    local = []
    for f, a, b in zip(faces, u, v):
        if f == 0:
            p = (hl, a * hw, b * hh)
        elif f == 1:
            p = (-hl, a * hw, b * hh)
        elif f == 2:
            p = (a * hl, hw, b * hh)
        elif f == 3:
            p = (a * hl, -hw, b * hh)
        elif f == 4:
            p = (a * hl, b * hw, hh)
        else:
            p = (a * hl, b * hw, -hh)
        local.append(Point3(p[0] * shrink, p[1] * shrink, p[2] * shrink))
    return local_to_world(local, box)


def generate_scene(cfg: SceneGenConfig, rng: np.random.Generator, scene_id: str = "scene") -> Scene:
    """One synthetic scene: separated boxes resting on the ground plane with
    surface-sampled points.  Raises after bounded placement retries."""
    n_boxes = int(rng.integers(cfg.boxes_min, cfg.boxes_max + 1))
    centers: list[tuple[float, float]] = []
    boxes: list[Box3D] = []
    max_tries = 200 * max(n_boxes, 1)
    tries = 0
    while len(boxes) < n_boxes:
        if tries >= max_tries:
            raise RuntimeError(
                f"could not place {n_boxes} boxes with separation {cfg.min_separation} m "
                f"in a {2 * cfg.extent:.0f} m square after {max_tries} tries"
            )
        tries += 1
        x = rng.uniform(-cfg.extent, cfg.extent)
        y = rng.uniform(-cfg.extent, cfg.extent)
        if any(math.hypot(x - cx, y - cy) < cfg.min_separation for cx, cy in centers):
            continue
        l, w, h = _sample_size(rng, cfg)
        yaw = rng.uniform(-math.pi, math.pi)
        boxes.append(Box3D(x, y, h * 0.5, l, w, h, yaw))
        centers.append((x, y))
    points: list[Point3] = []
    for box in boxes:
        points.extend(_face_points(box, cfg.points_per_box, rng))
    return Scene(scene_id, tuple(points), tuple(boxes))


def generate_scenes(cfg: SceneGenConfig) -> list[Scene]:
    return [
        generate_scene(cfg, _rng(cfg.seed, _STREAM_SCENE_GEN, i), f"scene_{i:04d}")
        for i in range(cfg.n_scenes)
    ]


def round_jitter(model: DetectorModel, round_index: int) -> tuple[float, float]:
    """Per-round effective (p_det, fp_rate) under multiplicative jitter.

    The jitter stream is keyed only by the model seed and the round, so every
    scene in a round sees the same fluctuation, and pipelines sharing a seed
    see identical fluctuations.
    """
    if model.fluctuation == 0.0:
        return model.p_det, model.fp_rate
    rng = _rng(model.seed, _STREAM_JITTER, round_index)
    jp = math.exp(rng.normal(0.0, model.fluctuation))
    jf = math.exp(rng.normal(0.0, model.fluctuation))
    return min(model.p_det * jp, 1.0), model.fp_rate * jf


def simulate_detector(
    scene: Scene, model: DetectorModel, round_index: int, rng: np.random.Generator
) -> list[Detection]:
    """Noisy detections for one scene, NMS-deduplicated at IoU 0.1."""
    p_det, fp_rate = round_jitter(model, round_index)
    dets: list[Detection] = []
    for gt in scene.boxes:
        if rng.random() >= p_det:
            continue
        dx = rng.normal(0.0, model.sigma_xy)
        dy = rng.normal(0.0, model.sigma_xy)
        dz = rng.normal(0.0, model.sigma_z)
        sl, sw, sh = np.exp(rng.normal(0.0, model.sigma_size, size=3))
        dyaw = rng.normal(0.0, model.sigma_yaw)
        box = Box3D(
            gt.cx + dx, gt.cy + dy, gt.cz + dz,
            gt.l * sl, gt.w * sw, gt.h * sh,
            gt.yaw + dyaw,
        )
        u_true = iou_3d(box, gt)
        u = float(np.clip(u_true + rng.normal(0.0, model.sigma_u), 0.0, 1.0))
        cls = float(np.clip(u + rng.normal(0.0, model.sigma_u), 0.0, 1.0))
        dets.append(Detection(box, cls, u))
    n_fp = int(rng.poisson(fp_rate))
    if n_fp:
        if scene.boxes:
            xs = [b.cx for b in scene.boxes]
            ys = [b.cy for b in scene.boxes]
            x_lo, x_hi = min(xs) - 10.0, max(xs) + 10.0
            y_lo, y_hi = min(ys) - 10.0, max(ys) + 10.0
            mean_size = (
                sum(b.l for b in scene.boxes) / len(scene.boxes),
                sum(b.w for b in scene.boxes) / len(scene.boxes),
                sum(b.h for b in scene.boxes) / len(scene.boxes),
            )
        else:
            x_lo, x_hi = y_lo, y_hi = (-40.0, 40.0)
            mean_size = (4.2, 1.9, 1.6)
        for _ in range(n_fp):
            x = rng.uniform(x_lo, x_hi)
            y = rng.uniform(y_lo, y_hi)
            sl, sw, sh = np.exp(rng.normal(0.0, 0.1, size=3))
            l, w, h = mean_size[0] * sl, mean_size[1] * sw, mean_size[2] * sh
            yaw = rng.uniform(-math.pi, math.pi)
            u = float(rng.beta(model.fp_score_a, model.fp_score_b))
            cls = float(np.clip(u + rng.normal(0.0, model.sigma_u), 0.0, 1.0))
            dets.append(Detection(Box3D(x, y, h * 0.5, l, w, h, yaw), cls, u))
    return nms(dets, 0.1)


def apply_feedback(model: DetectorModel, f1_prev: float, ceiling: float = 1.0) -> DetectorModel:
    """Move noise parameters toward their floors in proportion to f1_prev.

    Treats ``model`` as the base configuration: sigma' = floor + (base -
    floor) * (1 - t) with t = min(feedback_gain * f1_prev, ceiling), floors
    at noise_floor * base; p_det moves symmetrically toward its ceiling.
    Always apply feedback to the base model, not to a previous output, so
    improvements never compound.
    """
    if not (0.0 <= f1_prev <= 1.0):
        raise ValueError(f"f1 must be in [0, 1], got {f1_prev!r}")
    if not (0.0 <= ceiling <= 1.0):
        raise ValueError(f"ceiling must be in [0, 1], got {ceiling!r}")
    t = min(model.feedback_gain * f1_prev, ceiling)

    def toward_floor(base: float) -> float:
        floor = model.noise_floor * base
        return floor + (base - floor) * (1.0 - t)

    ceiling_p = max(model.p_det_ceiling, model.p_det)
    return replace(
        model,
        p_det=model.p_det + (ceiling_p - model.p_det) * t,
        fp_rate=toward_floor(model.fp_rate),
        sigma_xy=toward_floor(model.sigma_xy),
        sigma_z=toward_floor(model.sigma_z),
        sigma_size=toward_floor(model.sigma_size),
        sigma_yaw=toward_floor(model.sigma_yaw),
        sigma_u=toward_floor(model.sigma_u),
    )


@dataclass(frozen=True)
class RoundRecord:
    round: int
    epoch: int
    stage: int
    intensities: dict[str, float]
    p_det: float
    fp_rate: float
    sigma_xy: float
    quality: QualityReport
    positive_count: int
    entry_count: int

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "epoch": self.epoch,
            "stage": self.stage,
            "intensities": self.intensities,
            "p_det": self.p_det,
            "fp_rate": self.fp_rate,
            "sigma_xy": self.sigma_xy,
            "quality": self.quality.to_dict(),
            "positive_count": self.positive_count,
            "entry_count": self.entry_count,
        }


@dataclass(frozen=True)
class ExperimentState:
    scenes: tuple[Scene, ...]
    bank: MemoryBank
    round: int
    f1_prev: float
    records: tuple[RoundRecord, ...]


@dataclass(frozen=True)
class ExperimentReport:
    pipeline: Pipeline
    seed: int
    records: tuple[RoundRecord, ...]
    final_quality: QualityReport
    final_ap: float

    @property
    def positive_counts(self) -> list[int]:
        return [r.positive_count for r in self.records]

    def to_dict(self) -> dict:
        return {
            "pipeline": self.pipeline.value,
            "seed": self.seed,
            "rounds": [r.to_dict() for r in self.records],
            "positive_counts": self.positive_counts,
            "final_quality": self.final_quality.to_dict(),
            "final_ap": self.final_ap,
        }


def initial_state(cfg: ExperimentConfig) -> ExperimentState:
    scenes = generate_scenes(cfg.scene_gen)
    bank = MemoryBank({}, 0, cfg.voting, cfg.variant)
    return ExperimentState(tuple(scenes), bank, 0, 0.0, ())


def _bank_counts(bank: MemoryBank) -> tuple[int, int]:
    positives = 0
    total = 0
    for mem in bank.scenes.values():
        total += len(mem.entries)
        positives += sum(1 for e in mem.entries if e.state is BoxState.POSITIVE)
    return positives, total


def _check_bank(bank: MemoryBank, expected_round: int) -> None:
    # MemoryBank.__post_init__ enforces cnt < t_rm and per-scene round
    # consistency; this guards the loop-level contract.
    if bank.round != expected_round:
        raise AssertionError(f"bank at round {bank.round}, expected {expected_round}")


def self_training_round(state: ExperimentState, cfg: ExperimentConfig) -> ExperimentState:
    """One pseudo-label round: detect, partition, update, evaluate, feed back."""
    k = state.round + 1
    epoch = min((k - 1) * cfg.update_period, cfg.cda.total_epochs - 1)
    stage = stage_of_epoch(epoch, cfg.cda.total_epochs, cfg.cda.stages)
    ceiling = stage / cfg.cda.stages if cfg.cda.enabled else 1.0
    model = apply_feedback(cfg.detector, state.f1_prev, ceiling)

    proxies: dict[str, list[PseudoBox]] = {}
    naive_scenes: dict[str, SceneMemory] = {}
    for i, scene in enumerate(state.scenes):
        rng = _rng(cfg.seed, _STREAM_DETECTOR, k, i)
        dets = simulate_detector(scene, model, k, rng)
        if cfg.pipeline is Pipeline.MEMORY:
            proxies[scene.id] = triplet_partition(dets, cfg.triplet)
        else:
            entries = tuple(
                PseudoBox(d.box, d.iou_score, BoxState.POSITIVE, 0)
                for d in dets
                if d.iou_score >= cfg.triplet.t_pos
            )
            naive_scenes[scene.id] = SceneMemory(scene.id, k, entries)

    if cfg.pipeline is Pipeline.MEMORY:
        bank = update_bank(state.bank, proxies, cfg.merge)
    else:
        bank = MemoryBank(naive_scenes, k, cfg.voting, cfg.variant)
    _check_bank(bank, k)

    gts = {scene.id: scene.boxes for scene in state.scenes}
    quality = pseudo_label_quality(bank.scenes, gts, cfg.eval)
    positives, total = _bank_counts(bank)
    record = RoundRecord(
        round=k,
        epoch=epoch,
        stage=stage,
        intensities={kind.value: eps for kind, eps in cfg.cda.intensities_at(stage).items()},
        p_det=model.p_det,
        fp_rate=model.fp_rate,
        sigma_xy=model.sigma_xy,
        quality=quality,
        positive_count=positives,
        entry_count=total,
    )
    return ExperimentState(state.scenes, bank, k, quality.f1, state.records + (record,))


def config_from_dict(doc: Mapping) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed JSON document.

    Every section is optional and falls back to the defaults; unknown keys
    are rejected so typos fail loudly.
    """

    def section(name: str, cls, **extra):
        sub = doc.get(name, {})
        if not isinstance(sub, Mapping):
            raise ValueError(f"config section {name!r} must be an object")
        names = {f.name for f in cls.__dataclass_fields__.values()} if hasattr(cls, "__dataclass_fields__") else set()
        unknown = set(sub) - names
        if unknown:
            raise ValueError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
        return cls(**{**extra, **sub})

    known = {
        "scene_gen", "detector", "pipeline", "variant", "merge", "triplet",
        "voting", "rounds", "update_period", "cda", "eval", "seed",
    }
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    defaults = ExperimentConfig()
    return ExperimentConfig(
        scene_gen=section("scene_gen", SceneGenConfig),
        detector=section("detector", DetectorModel),
        pipeline=Pipeline(doc.get("pipeline", defaults.pipeline.value)),
        variant=EnsembleVariant(doc.get("variant", defaults.variant.value)),
        merge=MergeRule(doc.get("merge", defaults.merge.value)),
        triplet=section("triplet", TripletThresholds, t_neg=0.25, t_pos=0.6),
        voting=section("voting", VotingThresholds, t_ign=2, t_rm=3),
        rounds=int(doc.get("rounds", defaults.rounds)),
        update_period=int(doc.get("update_period", defaults.update_period)),
        cda=section(
            "cda",
            CdaSchedule,
            kinds=defaults.cda.kinds,
            eps0=defaults.cda.eps0,
            alpha=defaults.cda.alpha,
            stages=defaults.cda.stages,
            total_epochs=defaults.cda.total_epochs,
        ),
        eval=section("eval", EvalConfig),
        seed=int(doc.get("seed", defaults.seed)),
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "scene_gen": {
            "n_scenes": cfg.scene_gen.n_scenes,
            "boxes_min": cfg.scene_gen.boxes_min,
            "boxes_max": cfg.scene_gen.boxes_max,
            "extent": cfg.scene_gen.extent,
            "size_mean": list(cfg.scene_gen.size_mean),
            "size_std": list(cfg.scene_gen.size_std),
            "min_separation": cfg.scene_gen.min_separation,
            "points_per_box": cfg.scene_gen.points_per_box,
            "seed": cfg.scene_gen.seed,
        },
        "detector": {
            "p_det": cfg.detector.p_det,
            "fp_rate": cfg.detector.fp_rate,
            "sigma_xy": cfg.detector.sigma_xy,
            "sigma_z": cfg.detector.sigma_z,
            "sigma_size": cfg.detector.sigma_size,
            "sigma_yaw": cfg.detector.sigma_yaw,
            "sigma_u": cfg.detector.sigma_u,
            "fp_score_a": cfg.detector.fp_score_a,
            "fp_score_b": cfg.detector.fp_score_b,
            "fluctuation": cfg.detector.fluctuation,
            "feedback_gain": cfg.detector.feedback_gain,
            "noise_floor": cfg.detector.noise_floor,
            "p_det_ceiling": cfg.detector.p_det_ceiling,
            "seed": cfg.detector.seed,
        },
        "pipeline": cfg.pipeline.value,
        "variant": cfg.variant.value,
        "merge": cfg.merge.value,
        "triplet": {"t_neg": cfg.triplet.t_neg, "t_pos": cfg.triplet.t_pos},
        "voting": {"t_ign": cfg.voting.t_ign, "t_rm": cfg.voting.t_rm},
        "rounds": cfg.rounds,
        "update_period": cfg.update_period,
        "cda": {
            "kinds": [k.value for k in cfg.cda.kinds],
            "eps0": list(cfg.cda.eps0),
            "alpha": cfg.cda.alpha,
            "stages": cfg.cda.stages,
            "total_epochs": cfg.cda.total_epochs,
            "enabled": cfg.cda.enabled,
        },
        "eval": {
            "iou_threshold": cfg.eval.iou_threshold,
            "iou_kind": cfg.eval.iou_kind.value,
            "recall_positions": cfg.eval.recall_positions,
        },
        "seed": cfg.seed,
    }


def run_experiment(cfg: ExperimentConfig) -> tuple[ExperimentReport, ExperimentState]:
    """Run the configured number of rounds and score the final bank."""
    state = initial_state(cfg)
    for _ in range(cfg.rounds):
        state = self_training_round(state, cfg)
    gts = {scene.id: scene.boxes for scene in state.scenes}
    quality = pseudo_label_quality(state.bank.scenes, gts, cfg.eval)
    order = [scene.id for scene in state.scenes]
    preds_per_scene = []
    gts_per_scene = []
    for scene_id in order:
        mem = state.bank.scenes.get(scene_id)
        entries = [e for e in mem.entries if e.state is BoxState.POSITIVE] if mem else []
        preds_per_scene.append([(e.box, e.u) for e in entries])
        gts_per_scene.append(list(gts[scene_id]))
    final_ap = ap_recall_positions(preds_per_scene, gts_per_scene, cfg.eval)
    report = ExperimentReport(cfg.pipeline, cfg.seed, state.records, quality, final_ap)
    return report, state
