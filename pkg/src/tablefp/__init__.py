"""Numerical-table fingerprints for scanned book pages.

Digit activation maps from a rotation-equivariant detector are
recomposed into 110-dimensional bigram histograms that act as robust
content fingerprints: similar tables match across fonts, scales, and
scan noise, and corpus-level statistics (clustering, windowed entropy,
spread chains) read publishing history off the fingerprints.
"""

from .errors import (
    AnnotationError,
    ConflictError,
    DataError,
    MalformedRowsError,
    SchemaError,
    TablefpError,
    TrainingDivergedError,
    UndefinedStatisticError,
    UnknownCityError,
)
from .preprocess import PageImage, binarize, load_page, rescale_to_reference, save_page
from .recognizer import (
    ModelConfig,
    ModelWeights,
    Patch,
    TrainingConfig,
    classify_patch,
    evaluate_accuracy,
    forward,
    init_weights,
    load_weights,
    save_weights,
    select_scale_rotation,
    template_recognize,
    train,
)
from .recompose import FeatureMaps110, recompose
from .histograms import (
    BigramHistogram,
    decode_to_histogram,
    peak_detect,
    pearson,
    pooled_histogram,
    sqrt_transform,
    unigram_histogram,
)
from .store import (
    CorpusRecord,
    CorpusStore,
    DigitAnnotation,
    TableOccurrence,
    ground_truth_histogram,
    reconstruct_numbers,
)
from .similarity import cluster_purity, kmeans, nn_classify, query_similar, similarity
from .runner import RunConfig, extract_page, run_extract

__version__ = "0.1.0"

__all__ = [
    "AnnotationError", "ConflictError", "DataError", "MalformedRowsError",
    "SchemaError", "TablefpError", "TrainingDivergedError",
    "UndefinedStatisticError", "UnknownCityError",
    "PageImage", "binarize", "load_page", "rescale_to_reference", "save_page",
    "ModelConfig", "ModelWeights", "Patch", "TrainingConfig", "classify_patch",
    "evaluate_accuracy", "forward", "init_weights", "load_weights",
    "save_weights", "select_scale_rotation", "template_recognize", "train",
    "FeatureMaps110", "recompose",
    "BigramHistogram", "decode_to_histogram", "peak_detect", "pearson",
    "pooled_histogram", "sqrt_transform", "unigram_histogram",
    "CorpusRecord", "CorpusStore", "DigitAnnotation", "TableOccurrence",
    "ground_truth_histogram", "reconstruct_numbers",
    "cluster_purity", "kmeans", "nn_classify", "query_similar", "similarity",
    "RunConfig", "extract_page", "run_extract",
    "__version__",
]
