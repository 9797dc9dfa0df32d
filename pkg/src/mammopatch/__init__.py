"""Mammography mass / non-mass patch classification pipeline.

Patch tiling, forward-only CNN feature extraction, tree-ensemble feature
selection, from-scratch SVM training (C and nu forms), and rotating
five-way cross-validated evaluation, with a batch CLI over the stages.
"""

__version__ = "0.1.0"

from .errors import (
    BoundsError,
    ConfigError,
    ConvergenceError,
    DataError,
    DomainError,
    EvaluationError,
    GridSearchError,
    InfeasibleNuError,
    MammopatchError,
    SelectionError,
    ShapeError,
    WeightFormatError,
)
from .patches import (
    AUG_FLIPPED,
    AUG_ORIGINAL,
    AUG_ROTATED90,
    LABEL_DISCARD,
    LABEL_MASS,
    LABEL_NON_MASS,
    MAX_INTENSITY,
    GrayImage,
    LabeledPatch,
    MassMask,
    PatchGridConfig,
    augment_patch,
    build_dataset,
    extract_patches,
    flip_x,
    grid_origins,
    label_patch,
    normalize_patch,
    rotate90,
)
from .vgg import (
    FeatureMatrix,
    LayerSpec,
    Network,
    architecture,
    conv3x3_forward,
    extract_features,
    forward_with_tap,
    load_network,
    maxpool2x2,
    prepare_input,
    read_feature_matrix,
    resize_bilinear,
    save_network,
    seeded_random_network,
    write_feature_matrix,
)
from .forest import (
    Ensemble,
    EnsembleConfig,
    SelectionResult,
    fit_ensemble,
    gini,
    project,
    read_selection,
    select_cumulative,
    write_selection,
)
from .svm import (
    KernelRowCache,
    KernelSpec,
    SolverConfig,
    SvmModel,
    check_kkt,
    decision_function,
    kernel_eval,
    load_model,
    predict,
    save_model,
    train_csvm,
    train_nusvm,
    train_svm,
)
from .evaluation import (
    CvReport,
    FoldGroups,
    GridSpec,
    RocCurve,
    SplitCase,
    aggregate_aucs,
    auc,
    build_cases,
    evaluate_cases,
    grid_search,
    partition_groups,
    roc_curve,
)
from .pipeline import PipelineConfig, build_config, parse_config_file, run_pipeline
from .synth import generate_corpus, generate_image
