"""relict: replica detection for 3D image generative-model outputs.

Ranks training images by similarity to each synthetic image with image-,
feature-, and segmentation-level measures, scores abnormal closeness via a
distance ratio, supports human Likert calibration of decision thresholds,
and reports balanced accuracy per measure.
"""

from .backends import ACTIVE_BACKEND
from .engine import (
    MEASURES,
    CandidateSet,
    MeasureSpec,
    Neighbor,
    PipelineRun,
    RankingRecord,
    ThresholdConfig,
    decide,
    distance_ratio,
    execute,
    rank_training,
    run_pipeline,
    to_distance,
)
from .evaluation import (
    RatingRecord,
    ReferenceLabel,
    SweepResult,
    aggregate_ratings,
    agreement_stats,
    emit_report,
    preselect_pairs,
    sweep_thresholds,
)
from .feature_metrics import (
    adaptive_avg_pool,
    cosine_similarity,
    embedding_rmse,
    flatten,
)
from .image_metrics import SsimParams, mae, mean_ssim, rmse
from .segmentation_metrics import (
    asd_binary,
    asd_multiclass,
    dice_binary,
    dice_multiclass,
    extract_surface,
)
from .volio import (
    Corpus,
    CorpusEntry,
    EmbeddingVector,
    FeatureMap4D,
    SegmentationMask,
    Volume3D,
    load_corpus,
    load_embedding,
    load_feature_map,
    load_mask,
    load_volume,
    write_embedding,
    write_feature_map,
    write_mask,
    write_volume,
    zscore_normalize,
)

__version__ = "0.1.0"
