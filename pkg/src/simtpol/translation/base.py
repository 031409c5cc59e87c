"""Shared contract for prefix-conditioned translation models."""

from __future__ import annotations

import abc

import numpy as np

from ..corpus import EOS_ID


def check_distribution(probs, expect_dim: int | None = None) -> np.ndarray:
    """Validate a probability vector: finite, non-negative, sums to 1 within 1e-6."""
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a vector, got shape {arr.shape}")
    if expect_dim is not None and arr.shape[0] != expect_dim:
        raise ValueError(f"expected dimension {expect_dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("distribution contains NaN or Inf")
    if np.any(arr < 0):
        raise ValueError("distribution contains negative entries")
    total = float(arr.sum())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"distribution sums to {total!r}, not 1")
    return arr


def check_prefixes(source_prefix, target_prefix) -> None:
    if len(source_prefix) == 0:
        raise ValueError(
            "source prefix is empty: a policy reads at least one source token before decoding"
        )
    if EOS_ID in target_prefix:
        raise ValueError("target prefix must not contain <EOS>")


class TranslationModel(abc.ABC):
    """Conditional next-token distribution provider over (source prefix, target prefix).

    Implementations must be deterministic. Querying with the entire source is
    the full-context distribution; there is no separate code path for it.

    source_total_len is an out-of-band hint giving the true source length. The
    streaming harness always knows it even though the model has only read a
    prefix; neural models ignore the hint, the task oracle requires it.
    """

    vocab = None  # set by implementations

    @abc.abstractmethod
    def next_token_distribution(
        self, source_prefix, target_prefix, source_total_len: int | None = None
    ) -> np.ndarray:
        raise NotImplementedError

    def row_distributions(
        self, source_prefix, target, source_total_len: int | None = None
    ) -> np.ndarray:
        """Next-token distributions for every position of target under teacher
        forcing: row t conditions on target[:t]. This reference implementation
        is the definitional per-position loop; subclasses may batch it, staying
        within float tolerance of the loop."""
        rows = [
            self.next_token_distribution(source_prefix, tuple(target[:t]), source_total_len)
            for t in range(len(target))
        ]
        return np.stack(rows)


def full_context_distribution(model: TranslationModel, source, target_prefix) -> np.ndarray:
    """Distribution given the whole source. Deliberately the same code path as a
    prefix query with the prefix covering all of it."""
    return model.next_token_distribution(source, target_prefix, source_total_len=len(source))


def greedy_next(
    model: TranslationModel, source_prefix, target_prefix, source_total_len: int | None = None
) -> int:
    """Argmax token; exact ties resolve to the smallest id (argmax returns the
    first maximal index)."""
    probs = model.next_token_distribution(source_prefix, target_prefix, source_total_len)
    return int(np.argmax(probs))
