"""Similarity-based segment embeddings from artist/album/track metadata."""

from .catalog import (
    CatalogError,
    CatalogIndex,
    Split,
    SplitShortfallError,
    TrackRecord,
    build_album_split,
    build_artist_split,
    build_index,
    load_catalog,
    load_split,
    save_split,
    validate_split,
)
from .estimator import SimilarityEmbedder
from .evaluation import (
    HoldoutResult,
    MetricsReport,
    ProbeConfig,
    ProbeDataset,
    RawMeanEmbedder,
    ablate_negatives,
    ablate_scale,
    holdout_accuracy,
    load_probe_csv,
    transfer_probe,
)
from .features import (
    FeatureFormatError,
    FeatureMatrix,
    FeatureStore,
    MelParams,
    Segment,
    compute_melspectrogram,
    extract_segment,
    load_features,
    write_features,
)
from .losses import MarginConfig, joint_loss, margin_loss, similarity
from .model import (
    ConvBlockSpec,
    EncoderConfig,
    EncoderConfigError,
    SegmentEncoder,
    default_encoder_config,
    init_encoder,
)
from .sampler import (
    Concept,
    Regime,
    SampledTuple,
    SamplingError,
    TupleBatch,
    TupleSampler,
    TupleSpec,
    sample_tuple,
    tuple_stream,
)
from .synth import (
    HierarchyParams,
    SeparationStats,
    generate_catalog,
    genre_labels,
    hierarchy_separation,
    write_probe_csvs,
)
from .trainer import (
    TrainConfig,
    TrainResult,
    TrainState,
    TrainingDivergedError,
    checkpoint,
    restore,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CatalogError",
    "CatalogIndex",
    "Concept",
    "ConvBlockSpec",
    "EncoderConfig",
    "EncoderConfigError",
    "FeatureFormatError",
    "FeatureMatrix",
    "FeatureStore",
    "HierarchyParams",
    "HoldoutResult",
    "MarginConfig",
    "MelParams",
    "MetricsReport",
    "ProbeConfig",
    "ProbeDataset",
    "RawMeanEmbedder",
    "Regime",
    "SampledTuple",
    "SamplingError",
    "Segment",
    "SegmentEncoder",
    "SeparationStats",
    "SimilarityEmbedder",
    "Split",
    "SplitShortfallError",
    "TrackRecord",
    "TrainConfig",
    "TrainResult",
    "TrainState",
    "TrainingDivergedError",
    "TupleBatch",
    "TupleSampler",
    "TupleSpec",
    "ablate_negatives",
    "ablate_scale",
    "build_album_split",
    "build_artist_split",
    "build_index",
    "checkpoint",
    "compute_melspectrogram",
    "default_encoder_config",
    "extract_segment",
    "generate_catalog",
    "genre_labels",
    "hierarchy_separation",
    "holdout_accuracy",
    "init_encoder",
    "joint_loss",
    "load_catalog",
    "load_features",
    "load_probe_csv",
    "load_split",
    "margin_loss",
    "restore",
    "sample_tuple",
    "save_split",
    "similarity",
    "train",
    "transfer_probe",
    "tuple_stream",
    "validate_split",
    "write_features",
    "write_probe_csvs",
]
