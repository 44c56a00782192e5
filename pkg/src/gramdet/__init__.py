"""Out-of-distribution detection from class-conditional Gram-matrix bounds."""

from .activations import (
    ActivationRecord,
    BenchmarkConfig,
    DatasetHandle,
    DatasetRole,
    GactHeader,
    GactWriter,
    generate_synthetic_benchmark,
    open_dataset,
    read_activations,
    read_header,
    split_validation,
    write_activations,
)
from .gram import (
    DEFAULT_ORDERS,
    GramStat,
    StatVariant,
    compute_all_stats,
    extract_stat,
    gram_matrix,
    stat_matrix,
)
from .metrics import EvalResult, auroc, detection_accuracy, evaluate, tnr_at_95tpr
from .scoring import (
    Aggregation,
    NormalizerVector,
    ScoredExample,
    Threshold,
    calibrate_threshold,
    compute_normalizer,
    deviation_gaussian,
    deviation_scalar,
    is_ood,
    layer_deviation,
    score_stream,
    total_deviation,
)
from .tables import (
    BoundsTable,
    MomentsTable,
    TableSpec,
    fit_bounds,
    fit_moments,
    load_table,
    merge,
    save_table,
)

__version__ = "0.1.0"
