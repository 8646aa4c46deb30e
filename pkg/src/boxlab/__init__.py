"""boxlab: a pseudo-label engine for oriented 3D box detection.

Geometry (rotated IoU, NMS), object/world augmentations with a curriculum
intensity scheduler, detection-to-pseudo-label conversion, a quality-aware
memory bank with ensemble matching and voting, detection metrics, and a
simulated-detector harness that closes the self-training loop at desk scale.
"""

from .augmentation import (
    AugKind,
    CdaSchedule,
    DEFAULT_OBJECT_SCALE_RANGE,
    ScaleFactors,
    Scene,
    apply_object_rotation,
    apply_object_scaling,
    apply_world_transform,
    cda_intensity,
    cda_range,
    random_object_scaling,
    size_normalization,
    stage_of_epoch,
)
from .geometry import (
    Box3D,
    ConvexPolygon2,
    Detection,
    Point3,
    ScoreField,
    bev_corners,
    iou_3d,
    iou_bev,
    local_to_world,
    nms,
    normalize_yaw,
    pairwise_iou_matrix,
    points_in_box,
    polygon_intersection_area,
    rotation_matrix,
    world_to_local,
)
from .memory_bank import (
    DEFAULT_VOTING,
    EnsembleVariant,
    MatchResult,
    MemoryBank,
    MergeRule,
    SceneMemory,
    VotingThresholds,
    bipartite_match,
    consistency_match,
    load_snapshot,
    memory_voting,
    merge_matched,
    nms_match,
    save_snapshot,
    update_bank,
    update_memory,
    weighted_avg_merge,
)
from .metrics import (
    EvalConfig,
    IouKind,
    QualityReport,
    ap_recall_positions,
    closed_gap,
    match_tp,
    orientation_error,
    pseudo_label_quality,
    scale_error,
    translation_error,
)
from .pseudo_label import (
    BoxState,
    DEFAULT_TRIPLET,
    PseudoBox,
    TripletThresholds,
    iou_bce_loss,
    triplet_partition,
)
from .sim import (
    DetectorModel,
    ExperimentConfig,
    Pipeline,
    SceneGenConfig,
    apply_feedback,
    generate_scene,
    generate_scenes,
    run_experiment,
    self_training_round,
    simulate_detector,
)

__version__ = "0.1.0"
