"""Streaming decode loop and its offline counterpart.

simulate() runs the live protocol: starting from one read source token, a
policy scores the current state and the decision rule picks read or write.
Writes come from the translation model's greedy choice. An end-of-sentence
choice is suppressed while source tokens remain unread (the model cannot know
the sentence is over before seeing all of it), which turns into a forced read.

replay_path_nll() is the offline protocol: the reference target is scored
token by token under a fixed read schedule, no generation involved.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import EOS_ID, SentencePair
from .policy import PolicyDecision, PolicyModel, decide
from .translation.base import TranslationModel, greedy_next

import math


@dataclass(frozen=True)
class SimulationLimits:
    threshold: float
    r_max: int | None = None
    max_target_len: int | None = None

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.r_max is not None and self.r_max < 1:
            raise ValueError("r_max must be >= 1")
        if self.max_target_len is not None and self.max_target_len < 1:
            raise ValueError("max_target_len must be >= 1")


@dataclass(frozen=True)
class SimulationResult:
    pair_id: int
    hypothesis: tuple
    path: tuple
    confidences: tuple
    truncated: bool

    def __post_init__(self):
        if not len(self.hypothesis) == len(self.path) == len(self.confidences):
            raise ValueError("hypothesis, path and confidences must align")


def simulate(
    model: TranslationModel,
    policy: PolicyModel,
    source,
    limits: SimulationLimits,
    pair_id: int = 0,
) -> SimulationResult:
    """Run the streaming loop on one source sentence.

    Returns the emitted tokens (end-of-sentence included when produced), the
    number of source tokens consumed before each emission, and the confidence
    that triggered each write. Generation stops at end-of-sentence or at the
    length cap (default: 2 * len(source) + 5), whichever comes first."""
    n = len(source)
    if n < 1:
        raise ValueError("source must be non-empty")
    max_len = limits.max_target_len
    if max_len is None:
        max_len = 2 * n + 5

    emitted: list[int] = []
    path: list[int] = []
    confidences: list[float] = []
    j = 1
    r_c = 1
    truncated = False
    while True:
        if len(emitted) >= max_len:
            truncated = True
            break
        c = float(policy.confidence(source[:j], tuple(emitted), source_total_len=n))
        if not (math.isfinite(c) or c == math.inf) or c < 0:
            raise ValueError(f"policy produced an invalid confidence {c}")
        action = decide(c, limits.threshold, r_c, limits.r_max, j, n)
        if action is PolicyDecision.WRITE:
            y = greedy_next(model, source[:j], tuple(emitted), source_total_len=n)
            if y == EOS_ID and j < n:
                j += 1
                r_c += 1
                continue
            emitted.append(y)
            path.append(j)
            confidences.append(c)
            r_c = 0
            if y == EOS_ID:
                break
        else:
            j += 1
            r_c += 1
    return SimulationResult(
        pair_id=pair_id,
        hypothesis=tuple(emitted),
        path=tuple(path),
        confidences=tuple(confidences),
        truncated=truncated,
    )


def check_schedule(path, n_source: int) -> None:
    """A read schedule is positive, monotone non-decreasing, and within the
    source length."""
    if len(path) == 0:
        raise ValueError("empty read schedule")
    prev = 1
    for g in path:
        if int(g) != g or g < prev or g > n_source:
            raise ValueError(f"invalid read schedule entry {g}")
        prev = int(g)


def replay_path_nll(model: TranslationModel, pair: SentencePair, path) -> float:
    """Mean negative log-likelihood per reference token when the reference is
    scored under a fixed read schedule. path[t-1] is the number of source
    tokens visible when target position t is scored."""
    t_len = pair.n_target
    if len(path) != t_len:
        raise ValueError(f"schedule length {len(path)} != target length {t_len}")
    check_schedule(path, pair.n_source)
    total = 0.0
    for t0 in range(t_len):
        probs = model.next_token_distribution(
            pair.source[: path[t0]], pair.target[:t0], source_total_len=pair.n_source
        )
        p = float(probs[pair.target[t0]])
        total += -math.log(p) if p > 0 else math.inf
    return total / t_len


def full_sentence_nll(model: TranslationModel, pair: SentencePair) -> float:
    """Mean per-token reference NLL with the whole source visible throughout.

    Uses the model's own batched scorer when it has one; that route shares no
    code with replay_path_nll, so agreement between the two is meaningful."""
    scorer = getattr(model, "sequence_nll", None)
    if scorer is not None:
        return float(scorer(pair.source, pair.target))
    return replay_path_nll(model, pair, [pair.n_source] * pair.n_target)


@dataclass(frozen=True)
class SimulationLogRow:
    pair_id: int
    threshold: float
    r_max: int | None
    al: float
    path: tuple
    hypothesis_text: str


def save_simulation_log(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            r_max = "none" if row.r_max is None else str(row.r_max)
            fields = (
                str(row.pair_id),
                repr(row.threshold),
                r_max,
                repr(row.al),
                ",".join(str(g) for g in row.path),
                row.hypothesis_text,
            )
            fh.write("\t".join(fields) + "\n")


def load_simulation_log(path) -> list[SimulationLogRow]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise ValueError(f"{path}:{i}: expected 6 tab-separated fields")
            pair_id, threshold, r_max, al, path_s, hyp = parts
            rows.append(
                SimulationLogRow(
                    pair_id=int(pair_id),
                    threshold=float(threshold),
                    r_max=None if r_max == "none" else int(r_max),
                    al=float(al),
                    path=tuple(int(g) for g in path_s.split(",")) if path_s else (),
                    hypothesis_text=hyp,
                )
            )
    return rows
