"""Texture analysis from shape co-occurrence statistics on the tree of shapes."""

from .attributes import ATTRIBUTE_NAMES, compute_attributes
from .coding import (
    CodebookSet,
    DiagonalGMM,
    KMeansCodebook,
    PCAModel,
    dict_learn,
    encode_descriptor,
    fisher_encode,
    fit_codebooks,
    gmm_fit,
    kmeans_fit,
    lasso_encode,
    load_codebook_set,
    pca_fit,
    save_codebook_set,
)
from .errors import (
    CacheIntegrityError,
    DatasetError,
    EmptyImageError,
    ImageReadError,
    InsufficientSamplesError,
    ParameterError,
    ShapetexError,
    UnsupportedImageError,
)
from .imaging import GrayImage, generate_synthetic, load_image, save_pgm
from .learning import (
    accuracy,
    geodesic_distances,
    hik,
    recall_curve,
    rbf,
    svm_predict,
    svm_train,
)
from .patterns import (
    PATTERN_KINDS,
    estimate_interval,
    extract_patterns,
)
from .pipeline import (
    ExperimentConfig,
    PatternCache,
    RunResult,
    config_hash,
    fit_split,
    evaluate_split,
    extract_many,
    load_class_directory_dataset,
    run_classification,
    run_retrieval,
)
from .tree import ShapeTree, Shape, build_tree, build_tree_bruteforce, prune_by_area, reconstruct

__version__ = "0.1.0"

__all__ = [
    "ATTRIBUTE_NAMES",
    "CacheIntegrityError",
    "CodebookSet",
    "DatasetError",
    "DiagonalGMM",
    "EmptyImageError",
    "ExperimentConfig",
    "GrayImage",
    "ImageReadError",
    "InsufficientSamplesError",
    "KMeansCodebook",
    "PATTERN_KINDS",
    "PCAModel",
    "ParameterError",
    "PatternCache",
    "RunResult",
    "Shape",
    "ShapeTree",
    "ShapetexError",
    "UnsupportedImageError",
    "accuracy",
    "build_tree",
    "build_tree_bruteforce",
    "compute_attributes",
    "config_hash",
    "dict_learn",
    "encode_descriptor",
    "estimate_interval",
    "evaluate_split",
    "extract_many",
    "extract_patterns",
    "fisher_encode",
    "fit_codebooks",
    "fit_split",
    "generate_synthetic",
    "geodesic_distances",
    "gmm_fit",
    "hik",
    "kmeans_fit",
    "lasso_encode",
    "load_class_directory_dataset",
    "load_codebook_set",
    "load_image",
    "pca_fit",
    "prune_by_area",
    "rbf",
    "recall_curve",
    "reconstruct",
    "run_classification",
    "run_retrieval",
    "save_codebook_set",
    "save_pgm",
    "svm_predict",
    "svm_train",
    "__version__",
]
