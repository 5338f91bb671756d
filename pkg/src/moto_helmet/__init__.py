"""Cascaded motorcycle, rider, and helmet detection with a threshold-sweep
evaluation harness.

The pipeline finds motorcycles in a frame, people inside each expanded
motorcycle crop, and a helmet plus seat role per person, composing the
results into a nine-class labeling. Detections come from pluggable
backends: a replay file of recorded model outputs, a synthetic generator
that corrupts ground truth with configurable noise, or a live inference
service over HTTP.
"""

from .geometry import (
    CASCADE_MARGINS,
    FRAME,
    MODEL_INPUT,
    Box,
    ImageSize,
    Margins,
    clamp_box,
    crop_space,
    crop_to_frame,
    expand_box,
    frame_to_crop,
    iou,
    pixel_rect,
    rescale_box,
)
from .dataset import (
    FRAME_SIZE,
    MOTORCYCLE_CLASS_ID,
    PERSON_CLASS_IDS,
    AnnotationParseError,
    ClassStats,
    FrameAnnotation,
    GTObject,
    ObjectClass,
    Role,
    class_decompose,
    compute_class_stats,
    inverse_class_weights,
    load_annotations,
    parse_annotations,
    resolve_class_weights,
    serialize_annotations,
)
from .detector import (
    PROMPT_HELMET,
    PROMPT_MOTORCYCLE,
    PROMPT_PERSON,
    DetectionRequest,
    DetectorBackend,
    FrameNotFoundError,
    FrameStore,
    NoiseConfig,
    RemoteBackend,
    ReplayBackend,
    ReplayParseError,
    ScoredDetection,
    SyntheticBackend,
    TransportError,
    crop_key,
    format_replay_record,
    frame_key,
    parse_image_key,
    replay_load,
    synthetic_generate,
)
from .metrics import (
    ConfusionMatrix4,
    MatchResult,
    PRPoint,
    average_precision,
    binary_counts,
    match_detections,
    naive_helmet_baseline,
    precision_recall,
)
from .cascade import (
    CascadeConfig,
    CascadeOutput,
    CascadeStageError,
    ConstantSeat,
    MappingSeat,
    RemoteSeatClassifier,
    RiderRecord,
    SeatClassifier,
    UnclassifiedSeat,
    assemble_class,
    classify_helmet_on_gt,
    dedup_persons,
    parse_predictions,
    run_frame,
    write_cascade_csv,
)
from .sweep import (
    SweepConfig,
    SweepTable,
    class_exact_counts,
    emit_pr_csv,
    emit_pr_svg,
    evaluate_predictions,
    load_table,
    parse_pr_csv,
    run_sweep,
    save_table,
)

__version__ = "0.1.0"
