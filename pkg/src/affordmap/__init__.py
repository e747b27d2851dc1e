"""Dense affordance heatmaps from sparse annotations, with an adaptive upsampling decoder."""

from affordmap.decoder import (
    DECODER_KINDS,
    AHDParams,
    BilinearParams,
    CoarseAffordance,
    DecoderConfig,
    DeconvParams,
    KernelField,
    PixelShuffleParams,
    ahd_forward,
    akg_forward,
    bilinear_upsample,
    cap_forward,
    convex_upsample,
    decoder_forward,
    deconv_upsample,
    init_params,
    pixelshuffle_upsample,
    softmax_normalize,
)
from affordmap.errors import (
    AffordmapError,
    DimensionError,
    FormatError,
    ParameterError,
    SupervisionError,
    TrainingError,
    ValidationError,
)
from affordmap.evaluation import (
    AblationResult,
    EvalCase,
    EvalReport,
    LatencyStats,
    Outcome,
    ablate,
    evaluate_case,
    run_eval,
    time_inference,
)
from affordmap.grid import BinaryMask, FeatureMap, Heatmap, PixelCoord, argmax_peak, topk_peaks
from affordmap.io import (
    decode_rle,
    encode_rle,
    export_pgm,
    load_checkpoint,
    parse_annotations,
    read_heatmap,
    save_checkpoint,
    write_heatmap,
)
from affordmap.scenes import SceneConfig, SyntheticScene, generate_scenes, generate_synthetic_scene
from affordmap.synthesis import (
    AnnotationRecord,
    BoxSupervision,
    DistanceField,
    MaskSupervision,
    PointSupervision,
    box_heatmap,
    euclidean_distance_transform,
    mask_heatmap,
    point_heatmap,
    synthesize,
)
from affordmap.training import (
    Dataset,
    LossPoint,
    OptimState,
    TrainConfig,
    adamw_step,
    ahd_backward,
    bce_grad,
    bce_loss,
    lr_schedule,
    train,
)

__version__ = "0.1.0"
