"""signlight: low-light enhancement for traffic-sign imagery.

A numpy-backed tensor engine with taped gradients, a residual multi-scale
enhancer whose spatial attention gates on channel medians, supervised
training, detection scoring (IoU / AP / mAP / P / R / F1), dataset tooling
for GTSRB and GTSDB annotations, and a two-arm enhance-then-detect
comparison pipeline around a pluggable external detector.
"""

from .engine import (
    ConfigError,
    NotOnTapeError,
    ShapeError,
    Tape,
    Tensor,
    add,
    clamp01,
    concat_channels,
    conv2d,
    global_pool_spatial,
    grad_check,
    grad_check_directional,
    median_pool_channels,
    mul,
    pool_channels,
    relu,
    resize_bilinear,
    sigmoid,
    softmax_over_branches,
    sum_all,
)
from .network import (
    ModelParams,
    NetConfig,
    ResolutionError,
    channel_attention,
    dau,
    forward,
    init_model,
    load_checkpoint,
    mrb,
    save_checkpoint,
    skff,
    spatial_attention,
)
from .training import (
    Adam,
    CurveRow,
    ImagePair,
    TrainConfig,
    TrainingDiverged,
    charbonnier_loss,
    psnr,
    random_crop_pair,
    train,
    write_curve_csv,
)
from .evaluation import (
    BBox,
    Detection,
    EvalReport,
    GroundTruth,
    average_precision,
    evaluate,
    iou,
    match_detections,
)
from .datasets import (
    Annotation,
    Category,
    FormatError,
    decode_ppm,
    encode_ppm,
    group_class,
    parse_gtsdb_gt,
    parse_gtsrb_csv,
    select_low_quality,
    to_yolo_line,
)
from .pipeline import (
    ComparisonReport,
    PipelineConfig,
    StubDetector,
    enhance_batch,
    enhance_image,
    run_pipeline,
)

__version__ = "0.1.0"
