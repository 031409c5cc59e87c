from .base import (
    TranslationModel,
    check_distribution,
    check_prefixes,
    full_context_distribution,
    greedy_next,
)
from .checkpoint import load_model, params_hash, save_model
from .oracle import SyntheticOracleModel, required_prefix_len
from .tiny import TinyModel, TinyModelConfig
from .train import corpus_nll, train_full_sentence, train_multipath_waitk

__all__ = [
    "TranslationModel",
    "check_distribution",
    "check_prefixes",
    "full_context_distribution",
    "greedy_next",
    "SyntheticOracleModel",
    "required_prefix_len",
    "TinyModel",
    "TinyModelConfig",
    "train_full_sentence",
    "train_multipath_waitk",
    "corpus_nll",
    "save_model",
    "load_model",
    "params_hash",
]
