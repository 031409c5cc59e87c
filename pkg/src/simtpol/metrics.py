"""Latency, quality, and anticipation metrics, plus latency-quality curves.

Average lagging compares a read schedule against the ideal diagonal and stops
accumulating once the schedule has consumed the whole source. BLEU is the
usual corpus-level 4-gram score with brevity penalty. The anticipation rate
counts target words whose aligned source word has not yet been read under a
given wait-k schedule.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .corpus import Alignment, SentencePair


def check_path(path, n_source: int) -> None:
    if len(path) == 0:
        raise ValueError("empty path")
    prev = 1
    for g in path:
        if int(g) != g or g < prev or g > n_source:
            raise ValueError(f"invalid path entry {g}")
        prev = int(g)


def average_lagging(path, n_source: int, n_target: int) -> float:
    """Mean lag, in source tokens, behind the length-normalized diagonal.

    The sum runs up to the first emission made with the full source in view
    (everything after it adds no information about latency); the diagonal is
    scaled by n_target / n_source so mismatched lengths stay comparable."""
    if n_source < 1 or n_target < 1:
        raise ValueError("sentence lengths must be >= 1")
    check_path(path, n_source)
    rate = n_target / n_source
    cutoff = len(path)
    for idx, g in enumerate(path):
        if g == n_source:
            cutoff = idx + 1
            break
    total = 0.0
    for t0 in range(cutoff):
        total += path[t0] - t0 / rate
    return total / cutoff


def _fold(token):
    return token.casefold() if isinstance(token, str) else token


def _ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def clipped_ngram_counts(hypotheses, references, n: int) -> tuple[int, int]:
    """Corpus-level clipped n-gram matches and total hypothesis n-grams."""
    match = 0
    total = 0
    for hyp, ref in zip(hypotheses, references):
        hyp = [_fold(t) for t in hyp]
        ref = [_fold(t) for t in ref]
        hyp_counts = _ngram_counts(hyp, n)
        ref_counts = _ngram_counts(ref, n)
        for gram, count in hyp_counts.items():
            match += min(count, ref_counts.get(gram, 0))
        total += sum(hyp_counts.values())
    return match, total


def corpus_bleu(hypotheses, references, max_n: int = 4) -> float:
    """Corpus BLEU on a 0-100 scale: geometric mean of clipped 1..max_n gram
    precisions times the brevity penalty. Any empty precision gives 0. String
    tokens are compared case-insensitively; integer tokens are compared as is."""
    hypotheses = [list(h) for h in hypotheses]
    references = [list(r) for r in references]
    if len(hypotheses) != len(references):
        raise ValueError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise ValueError("empty corpus")
    hyp_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        match, total = clipped_ngram_counts(hypotheses, references, n)
        if match == 0 or total == 0:
            return 0.0
        log_sum += math.log(match / total) / max_n
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_sum)


def anticipation_indicator(t: int, alignment: Alignment, k: int) -> int:
    """1 when target position t has an aligned source position that a wait-k
    schedule has not yet read when t is emitted, 0 otherwise."""
    if t < 1 or k < 1:
        raise ValueError("t and k must be >= 1")
    for s, t_a in alignment.pairs:
        if t_a == t and s >= t + k:
            return 1
    return 0


def anticipation_rate(pair: SentencePair, alignment: Alignment, k: int) -> float:
    """Fraction of real target words (end-of-sentence excluded) that are
    anticipated under wait-k."""
    alignment.check_within(pair.n_source, pair.n_target)
    n_words = pair.n_target - 1
    if n_words == 0:
        return 0.0
    hits = sum(anticipation_indicator(t, alignment, k) for t in range(1, n_words + 1))
    return hits / n_words


def corpus_anticipation_rate(pairs, alignments, k: int) -> float:
    """Anticipation rate pooled over a corpus: anticipated words / real words."""
    pairs = list(pairs)
    alignments = list(alignments)
    if len(pairs) != len(alignments):
        raise ValueError("pairs and alignments must align")
    if not pairs:
        raise ValueError("empty corpus")
    hits = 0
    words = 0
    for pair, alignment in zip(pairs, alignments):
        alignment.check_within(pair.n_source, pair.n_target)
        n_words = pair.n_target - 1
        hits += sum(
            anticipation_indicator(t, alignment, k) for t in range(1, n_words + 1)
        )
        words += n_words
    if words == 0:
        return 0.0
    return hits / words


@dataclass(frozen=True)
class CurvePoint:
    operating_point: str
    latency: float
    quality: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")


@dataclass
class EvaluationRun:
    label: str
    operating_point: str
    al_values: list = field(default_factory=list)
    bleu: float | None = None
    mean_nll: float | None = None

    @property
    def mean_al(self) -> float:
        if not self.al_values:
            raise ValueError(f"run {self.label!r} has no latency values")
        return sum(self.al_values) / len(self.al_values)


def build_curve(runs, quality: str = "bleu") -> list[CurvePoint]:
    """Collapse runs into curve points sorted by latency ascending."""
    if quality not in ("bleu", "nll"):
        raise ValueError(f"quality must be 'bleu' or 'nll', got {quality!r}")
    points = []
    for run in runs:
        value = run.bleu if quality == "bleu" else run.mean_nll
        if value is None:
            raise ValueError(f"run {run.label!r} has no {quality} value")
        points.append(
            CurvePoint(
                operating_point=run.operating_point,
                latency=run.mean_al,
                quality=float(value),
                count=len(run.al_values),
            )
        )
    points.sort(key=lambda p: p.latency)
    return points


def interpolate_curve(points, latency: float) -> float:
    """Piecewise-linear quality at a latency, clamped to the curve's ends."""
    if not points:
        raise ValueError("empty curve")
    pts = sorted(points, key=lambda p: p.latency)
    if latency <= pts[0].latency:
        return pts[0].quality
    if latency >= pts[-1].latency:
        return pts[-1].quality
    for left, right in zip(pts, pts[1:]):
        if left.latency <= latency <= right.latency:
            span = right.latency - left.latency
            if span == 0:
                return left.quality
            w = (latency - left.latency) / span
            return left.quality + w * (right.quality - left.quality)
    raise AssertionError("unreachable")


CURVE_HEADER = "operating_point\tAL\tquality\tcount"


def save_curve(points, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CURVE_HEADER + "\n")
        for p in points:
            fh.write(f"{p.operating_point}\t{p.latency:.9g}\t{p.quality:.9g}\t{p.count}\n")


def load_curve(path) -> list[CurvePoint]:
    points = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != CURVE_HEADER:
            raise ValueError(f"{path}: unexpected curve header {header!r}")
        for i, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{i}: expected 4 tab-separated fields")
            points.append(
                CurvePoint(
                    operating_point=parts[0],
                    latency=float(parts[1]),
                    quality=float(parts[2]),
                    count=int(parts[3]),
                )
            )
    return points
