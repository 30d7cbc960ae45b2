"""Unsupervised out-of-distribution scoring over feature embeddings.

Fit Local Outlier Factor or Gaussian/Mahalanobis detectors on
in-distribution embeddings, score queries, and evaluate ID-vs-OOD
separation with AUROC under leakage-free, stratified protocols.
"""

from .contrastive import (
    DEFAULT_TEMPERATURE,
    ToyEncoderParams,
    TrainingResult,
    ViewBatch,
    cosine_similarity_matrix,
    encode,
    load_encoder_params,
    nt_xent_grad,
    nt_xent_loss,
    save_encoder_params,
    train_toy_encoder,
    write_training_curve,
)
from .embeddings import (
    EmbeddingMatrix,
    cosine_distance,
    l2_normalize,
    load_embeddings,
    pairwise_distances,
    save_embeddings,
)
from .errors import (
    DataError,
    DegenerateDataError,
    DomainError,
    EmptySelectionError,
    FormatError,
    LeakageError,
    NumericalError,
    OodkitError,
    ParameterError,
    TrainingError,
)
from .evaluation import (
    DetectorSpec,
    EvalReport,
    ExperimentConfig,
    ScoreSet,
    auroc,
    cross_tie_count,
    evaluate_gaussian_stats,
    evaluate_lof_model,
    k_sweep,
    load_report,
    reports_table_csv,
    run_experiment,
    write_report,
    write_reports_table,
)
from .lof import (
    LofModel,
    NeighborList,
    QueryNeighborCache,
    TrainNeighborCache,
    fit_lof,
    knn_query,
    load_lof_model,
    lof_score,
    lof_score_batch,
    reach_dist,
    save_lof_model,
)
from .manifest import (
    SPLITS,
    SampleManifest,
    SampleRecord,
    SubsetFilter,
    filter_indices,
    filter_subset,
    load_manifest,
    save_manifest,
)
from .splitting import SplitAssignment, stratified_group_split
from .ssd import (
    GaussianStats,
    default_epsilon,
    fit_gaussian,
    load_gaussian_stats,
    mahalanobis_score,
    mahalanobis_score_batch,
    save_gaussian_stats,
)

__version__ = "0.1.0"
