"""Deterministic stub models and policies for exercising the streaming loop
without any learning in the way."""

import numpy as np

from simtpol.corpus import EOS_ID
from simtpol.policy import PolicyModel
from simtpol.translation.base import TranslationModel, check_prefixes


class ScriptedModel(TranslationModel):
    """Emits a fixed token sequence regardless of the source: position t gets a
    point mass on script[t]. Queries past the script end return <EOS>."""

    def __init__(self, script, vocab_size: int):
        self.script = tuple(int(t) for t in script)
        self.vocab_size = int(vocab_size)

    def next_token_distribution(self, source_prefix, target_prefix, source_total_len=None):
        check_prefixes(source_prefix, target_prefix)
        t = len(target_prefix)
        token = self.script[t] if t < len(self.script) else EOS_ID
        out = np.zeros(self.vocab_size)
        out[token] = 1.0
        return out


class AlwaysEosModel(ScriptedModel):
    def __init__(self, vocab_size: int):
        super().__init__((), vocab_size)


class NeverEosModel(TranslationModel):
    """Emits the same non-terminal token forever."""

    def __init__(self, token: int, vocab_size: int):
        assert token != EOS_ID
        self.token = int(token)
        self.vocab_size = int(vocab_size)

    def next_token_distribution(self, source_prefix, target_prefix, source_total_len=None):
        check_prefixes(source_prefix, target_prefix)
        out = np.zeros(self.vocab_size)
        out[self.token] = 1.0
        return out


class TieModel(TranslationModel):
    """Splits all mass evenly over the given ids, an exact argmax tie."""

    def __init__(self, ids, vocab_size: int):
        self.ids = tuple(int(t) for t in ids)
        self.vocab_size = int(vocab_size)

    def next_token_distribution(self, source_prefix, target_prefix, source_total_len=None):
        check_prefixes(source_prefix, target_prefix)
        out = np.zeros(self.vocab_size)
        out[list(self.ids)] = 1.0 / len(self.ids)
        return out


class StubPolicy(PolicyModel):
    """Returns scripted confidence values in call order and records every
    query's (source length, target length)."""

    def __init__(self, confidences):
        self.confidences = list(confidences)
        self.calls = []
        self._cursor = 0

    def confidence(self, source_prefix, target_prefix, source_total_len=None) -> float:
        self.calls.append((len(source_prefix), len(target_prefix)))
        value = self.confidences[min(self._cursor, len(self.confidences) - 1)]
        self._cursor += 1
        return float(value)


class ConstantPolicy(PolicyModel):
    def __init__(self, value: float):
        self.value = float(value)

    def confidence(self, source_prefix, target_prefix, source_total_len=None) -> float:
        return self.value
