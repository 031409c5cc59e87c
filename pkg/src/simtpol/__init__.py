"""Adaptive read/write policies for streaming sequence-to-sequence decoding.

The package covers the full loop: a synthetic transduction task with exact
token posteriors, a small transformer trained full-sentence or under sampled
wait-k schedules, divergence grids between partial- and full-context
predictions, fixed and learned write policies driven by those divergences,
a streaming simulator, and latency/quality metrics.
"""

__version__ = "0.1.0"

from .corpus import (
    Alignment,
    SentencePair,
    SyntheticTaskConfig,
    Vocabulary,
    build_vocabulary,
    generate_synthetic_task,
    load_parallel_corpus,
    parse_alignments,
    strip_mode_offset,
)
from .divergence import (
    MEASURES,
    DivergenceMatrix,
    cosine_distance,
    divergence_fn,
    divergence_matrix,
    euclidean_divergence,
    kl_divergence,
    matrix_records,
    threshold_path,
)
from .metrics import (
    CurvePoint,
    EvaluationRun,
    anticipation_rate,
    average_lagging,
    build_curve,
    corpus_bleu,
    interpolate_curve,
)
from .policy import (
    DapPolicyConfig,
    DapPolicyModel,
    MatrixPolicy,
    PolicyDecision,
    WaitkPolicy,
    decide,
    load_policy,
    save_policy,
    train_policy,
    waitk_g,
)
from .simulator import (
    SimulationLimits,
    SimulationResult,
    full_sentence_nll,
    replay_path_nll,
    simulate,
)
from .translation import (
    SyntheticOracleModel,
    TinyModel,
    TinyModelConfig,
    corpus_nll,
    load_model,
    save_model,
    train_full_sentence,
    train_multipath_waitk,
)

__all__ = [
    "Alignment",
    "CurvePoint",
    "DapPolicyConfig",
    "DapPolicyModel",
    "DivergenceMatrix",
    "EvaluationRun",
    "MEASURES",
    "MatrixPolicy",
    "PolicyDecision",
    "SentencePair",
    "SimulationLimits",
    "SimulationResult",
    "SyntheticOracleModel",
    "SyntheticTaskConfig",
    "TinyModel",
    "TinyModelConfig",
    "Vocabulary",
    "WaitkPolicy",
    "anticipation_rate",
    "average_lagging",
    "build_curve",
    "build_vocabulary",
    "corpus_bleu",
    "corpus_nll",
    "cosine_distance",
    "decide",
    "divergence_fn",
    "divergence_matrix",
    "euclidean_divergence",
    "full_sentence_nll",
    "generate_synthetic_task",
    "interpolate_curve",
    "kl_divergence",
    "load_model",
    "load_parallel_corpus",
    "load_policy",
    "matrix_records",
    "parse_alignments",
    "replay_path_nll",
    "save_model",
    "save_policy",
    "simulate",
    "strip_mode_offset",
    "threshold_path",
    "train_full_sentence",
    "train_multipath_waitk",
    "train_policy",
    "waitk_g",
]
