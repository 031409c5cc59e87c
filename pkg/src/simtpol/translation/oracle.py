"""Exact next-token posteriors for the synthetic copy/swap task.

For a source [mode, w_1..w_n] whose content tokens are drawn i.i.d. uniform,
and with the true length known, the posterior over the next target token has a
closed form:

  - a position t <= n needs exactly one source position; once that position is
    inside the read prefix the posterior is a point mass on its token, and
    before that it is exactly uniform over the content tokens (neither the read
    prefix nor the target prefix reveals anything about an unread position);
  - every position past the content, t > n, is <EOS> with certainty.

Vectors are built to sum to exactly 1.0 under compensated summation so that
closed-form divergence checks stay tight.
"""

from __future__ import annotations

import math

import numpy as np

from ..corpus import (
    CONTENT_BASE_ID,
    COPY_ID,
    EOS_ID,
    SWAP_ID,
    Vocabulary,
    origin_content_position,
)
from .base import TranslationModel, check_prefixes


def required_prefix_len(is_swap: bool, t: int, n: int) -> int:
    """Shortest source prefix that pins target position t down exactly, for a
    sentence with n content tokens (so N = n + 1 with the mode token)."""
    if t > n:
        return 1
    return origin_content_position(is_swap, t, n) + 1


class SyntheticOracleModel(TranslationModel):
    """Tabular model producing the task's exact posteriors.

    Requires source_total_len: with only a prefix in hand the sentence length is
    genuinely ambiguous, and the closed form above is conditioned on knowing it.
    The streaming harness always has the full sentence, so it passes the hint.
    """

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.n_content = len(vocab) - CONTENT_BASE_ID
        if self.n_content < 2:
            raise ValueError("vocabulary does not look like a synthetic-task vocabulary")
        uniform = np.zeros(len(vocab))
        uniform[CONTENT_BASE_ID:] = 1.0 / self.n_content
        # nudge one entry so the compensated total is exactly 1
        uniform[-1] += 1.0 - math.fsum(uniform)
        self._uniform = uniform
        eos = np.zeros(len(vocab))
        eos[EOS_ID] = 1.0
        self._eos = eos

    def next_token_distribution(self, source_prefix, target_prefix, source_total_len=None):
        check_prefixes(source_prefix, target_prefix)
        if source_total_len is None:
            raise ValueError("the task oracle needs source_total_len to resolve its posterior")
        n_src = int(source_total_len)
        j = len(source_prefix)
        if not 1 <= j <= n_src:
            raise ValueError(f"source prefix length {j} outside [1, {n_src}]")
        mode = source_prefix[0]
        if mode == COPY_ID:
            is_swap = False
        elif mode == SWAP_ID:
            is_swap = True
        else:
            raise ValueError("source does not start with a task mode token")
        n = n_src - 1
        t = len(target_prefix) + 1
        if t > n:
            return self._eos.copy()
        s = origin_content_position(is_swap, t, n) + 1  # +1: the mode token is source position 1
        if j >= s:
            tok = int(source_prefix[s - 1])
            if tok < CONTENT_BASE_ID:
                raise ValueError("malformed task source: content position holds a reserved id")
            out = np.zeros(len(self.vocab))
            out[tok] = 1.0
            return out
        return self._uniform.copy()
