"""Interactive model-correction workbench: describe a classifier's failure
modes in text, score the descriptions against held-out predictions, and
retrain a last-layer probe with slice-robust objectives."""

from .dataset import (
    DatasetManifest,
    EmbeddingDataset,
    load_dataset,
    validate_dataset,
    write_dataset,
)
from .errors import (
    ConfigError,
    DatasetError,
    EncodingError,
    SlicelabError,
    TrainingDivergedError,
    UnscoreableClassError,
)
from .probe import (
    EvalReport,
    LinearProbe,
    TrainConfig,
    evaluate,
    load_probe,
    predict,
    save_probe,
    train_probe,
    zero_shot_classify,
)
from .similarity import (
    ErrorAnnotation,
    FixtureTextEncoder,
    KeywordRanking,
    PromptRecord,
    PromptScore,
    SlicePartition,
    cosine_sim,
    finalize_best_annotations,
    fixture_encode_text,
    load_keyword_pools,
    load_vocab,
    partition_class,
    rank_classes,
    rank_keywords,
    score_at_threshold,
    score_prompt,
    select_candidate_classes,
)
from .synth import (
    BenchReport,
    SyntheticConfig,
    generate_synthetic,
    oracle_error_score,
    run_benchmark,
)

__version__ = "0.1.0"

__all__ = [
    "BenchReport",
    "ConfigError",
    "DatasetError",
    "DatasetManifest",
    "EmbeddingDataset",
    "EncodingError",
    "ErrorAnnotation",
    "EvalReport",
    "FixtureTextEncoder",
    "KeywordRanking",
    "LinearProbe",
    "PromptRecord",
    "PromptScore",
    "SlicePartition",
    "SlicelabError",
    "SyntheticConfig",
    "TrainConfig",
    "TrainingDivergedError",
    "UnscoreableClassError",
    "cosine_sim",
    "evaluate",
    "finalize_best_annotations",
    "fixture_encode_text",
    "generate_synthetic",
    "load_dataset",
    "load_keyword_pools",
    "load_probe",
    "load_vocab",
    "oracle_error_score",
    "partition_class",
    "predict",
    "rank_classes",
    "rank_keywords",
    "run_benchmark",
    "save_probe",
    "score_at_threshold",
    "score_prompt",
    "select_candidate_classes",
    "train_probe",
    "validate_dataset",
    "write_dataset",
    "zero_shot_classify",
]
