"""Shapley feature attribution and PAC Top-k feature identification."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    DegenerateSampleError,
    EstimatorError,
    LoadError,
    OracleScaleError,
    ShapkError,
)
from .estimators import (
    EstimateSet,
    FeatureStreams,
    KernelBatchConfig,
    add_replicate,
    kernel_shap_exhaustive,
    kernel_shap_replicate,
    sampling_shap_replicate,
    sampling_shap_replicates,
    z_critical,
)
from .model import (
    Coalition,
    ExplanationInstance,
    FunctionModel,
    InteractionModel,
    Layer,
    LinearModel,
    MLPModel,
    ModelSpec,
    evaluate,
    load_model,
    save_model,
    value_of_coalition,
)
from .oracle import ExactShap, ExactTopK, exact_shap, exact_topk, is_eps_approximate
from .synthetic import gen_synthetic
from .topk import (
    HighLowSplit,
    TopKConfig,
    TopKResult,
    naive_stop_check,
    overlap_stop_check,
    pac_trial_harness,
    run_greedy,
    run_naive,
    run_overlap_uniform,
    run_topk,
)
