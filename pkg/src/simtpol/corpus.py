"""Corpus handling: vocabularies, parallel text, word alignments, and a synthetic
copy/swap translation task with known structure.

Token id layout is fixed across the package: ids 0..3 are reserved for <BOS>,
<EOS>, <UNK>, <PAD>. The synthetic task pins its two mode tokens at ids 4 and 5
and its content tokens at ids 6 and up.

File formats:
  parallel text  one sentence per line, tokens separated by single spaces
  alignments     one line per pair, space-separated "s-t" items, 0-based on disk
  vocabulary     one non-special token per line, line number = id minus 4
"""

from __future__ import annotations

import hashlib
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

BOS_TOKEN = "<BOS>"
EOS_TOKEN = "<EOS>"
UNK_TOKEN = "<UNK>"
PAD_TOKEN = "<PAD>"
SPECIAL_TOKENS = (BOS_TOKEN, EOS_TOKEN, UNK_TOKEN, PAD_TOKEN)

BOS_ID = 0
EOS_ID = 1
UNK_ID = 2
PAD_ID = 3
NUM_SPECIALS = 4

# Synthetic-task conventions.
COPY_TOKEN = "<copy>"
SWAP_TOKEN = "<swap>"
COPY_ID = NUM_SPECIALS
SWAP_ID = NUM_SPECIALS + 1
CONTENT_BASE_ID = NUM_SPECIALS + 2


class Vocabulary:
    """Token <-> id bijection with the four reserved specials at ids 0..3."""

    def __init__(self, tokens):
        self.id_to_token: list[str] = list(SPECIAL_TOKENS) + [str(t) for t in tokens]
        self.token_to_id: dict[str, int] = {}
        for i, tok in enumerate(self.id_to_token):
            if not tok or any(ch.isspace() for ch in tok):
                raise ValueError(f"invalid vocabulary token {tok!r}")
            if tok in self.token_to_id:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.token_to_id[tok] = i

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def encode(self, token: str) -> int:
        """Id of a token, falling back to <UNK> for anything unknown."""
        return self.token_to_id.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.id_to_token):
            raise ValueError(
                f"token id {token_id} out of range for vocabulary of size {len(self)}"
            )
        return self.id_to_token[token_id]

    def fingerprint(self) -> str:
        """Stable content hash, used to bind checkpoints to their vocabulary."""
        payload = "\n".join(self.id_to_token).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class SentencePair:
    """One source/target pair. The source carries no <EOS>; the target ends with
    exactly one, so n_target counts it."""

    id: int
    source: tuple[int, ...]
    target: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "source", tuple(int(t) for t in self.source))
        object.__setattr__(self, "target", tuple(int(t) for t in self.target))
        if len(self.source) < 1:
            raise ValueError("source must contain at least one token")
        if len(self.target) < 1:
            raise ValueError("target must contain at least one token")
        if self.target[-1] != EOS_ID:
            raise ValueError("target must end with <EOS>")
        for tok in self.source + self.target:
            if tok < 0:
                raise ValueError(f"negative token id {tok}")
        banned_src = (BOS_ID, EOS_ID, PAD_ID)
        if any(tok in banned_src for tok in self.source):
            raise ValueError("source must not contain <BOS>, <EOS> or <PAD>")
        body = self.target[:-1]
        if any(tok in (BOS_ID, PAD_ID) for tok in self.target) or EOS_ID in body:
            raise ValueError("target may contain <EOS> only as its final token, and no <BOS>/<PAD>")

    @property
    def n_source(self) -> int:
        return len(self.source)

    @property
    def n_target(self) -> int:
        return len(self.target)


@dataclass(frozen=True)
class Alignment:
    """Word alignment for one pair: a set of (source position, target position),
    both 1-based. On disk the convention is 0-based "s-t" items."""

    pairs: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        norm = frozenset((int(s), int(t)) for s, t in self.pairs)
        object.__setattr__(self, "pairs", norm)
        for s, t in norm:
            if s < 1 or t < 1:
                raise ValueError(f"alignment indices are 1-based, got ({s},{t})")

    def check_within(self, n_source: int, n_target: int) -> None:
        for s, t in self.pairs:
            if s > n_source or t > n_target:
                raise ValueError(
                    f"alignment link ({s},{t}) outside a {n_source}x{n_target} pair"
                )

    def sources_for_target(self, t: int) -> set:
        return {s for s, tt in self.pairs if tt == t}


@dataclass(frozen=True)
class SyntheticTaskConfig:
    vocab_size: int = 38
    min_len: int = 4
    max_len: int = 10
    num_pairs: int = 1000
    seed: int = 0
    mode_tokens: tuple[str, str] = (COPY_TOKEN, SWAP_TOKEN)

    def __post_init__(self):
        object.__setattr__(self, "mode_tokens", tuple(self.mode_tokens))
        if self.vocab_size < 8:
            raise ValueError("vocab_size must be >= 8 (4 specials, 2 modes, 2+ content tokens)")
        if not 2 <= self.min_len <= self.max_len:
            raise ValueError("need 2 <= min_len <= max_len")
        if self.num_pairs < 1:
            raise ValueError("num_pairs must be >= 1")
        if len(self.mode_tokens) != 2 or self.mode_tokens[0] == self.mode_tokens[1]:
            raise ValueError("mode_tokens must be two distinct tokens")


def build_vocabulary(corpus_lines, min_frequency: int = 1) -> Vocabulary:
    """Frequency-filtered vocabulary over whitespace-tokenized lines.

    Ids are assigned by descending count, ties broken by lexicographic token, so
    the mapping is stable for a given input.
    """
    if min_frequency < 1:
        raise ValueError("min_frequency must be >= 1")
    counts = Counter()
    n_lines = 0
    for line in corpus_lines:
        toks = line.split() if isinstance(line, str) else list(line)
        counts.update(toks)
        n_lines += 1
    if n_lines == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = [tok for tok, c in counts.items() if c >= min_frequency and tok not in SPECIAL_TOKENS]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    return Vocabulary(kept)


def _read_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def load_parallel_corpus(source_path, target_path, vocab: Vocabulary) -> list[SentencePair]:
    """Read a parallel corpus; unknown tokens map to <UNK> and every target gets
    a terminal <EOS>."""
    src_lines = _read_lines(source_path)
    tgt_lines = _read_lines(target_path)
    if len(src_lines) != len(tgt_lines):
        raise ValueError(
            f"line count mismatch: {source_path} has {len(src_lines)} lines, "
            f"{target_path} has {len(tgt_lines)}"
        )
    out = []
    for i, (s_line, t_line) in enumerate(zip(src_lines, tgt_lines), start=1):
        s_toks = s_line.split()
        t_toks = t_line.split()
        if not s_toks:
            raise ValueError(f"empty line {i} in {source_path}")
        if not t_toks:
            raise ValueError(f"empty line {i} in {target_path}")
        source = tuple(vocab.encode(tok) for tok in s_toks)
        target = tuple(vocab.encode(tok) for tok in t_toks) + (EOS_ID,)
        try:
            out.append(SentencePair(id=i - 1, source=source, target=target))
        except ValueError as exc:
            raise ValueError(f"line {i}: {exc}") from exc
    return out


_ALIGN_ITEM = re.compile(r"(\d+)-(\d+)")


def parse_alignments(path) -> list[Alignment]:
    """Parse "s-t" alignment lines (0-based on disk) into 1-based Alignment sets.
    Duplicates collapse; an empty line is an unaligned sentence."""
    out = []
    for line_no, line in enumerate(_read_lines(path), start=1):
        links = set()
        for m in re.finditer(r"\S+", line):
            item = m.group(0)
            parsed = _ALIGN_ITEM.fullmatch(item)
            if parsed is None:
                raise ValueError(
                    f"malformed alignment item {item!r} at line {line_no}, column {m.start() + 1}"
                )
            links.add((int(parsed.group(1)) + 1, int(parsed.group(2)) + 1))
        out.append(Alignment(pairs=frozenset(links)))
    return out


def origin_content_position(is_swap: bool, t: int, n: int) -> int:
    """1-based content position of the token emitted at target position t, for a
    sentence with n content tokens. Copy keeps order; swap exchanges positions
    pairwise and leaves an odd tail in place."""
    if not 1 <= t <= n:
        raise ValueError(f"target position {t} outside [1, {n}]")
    if not is_swap:
        return t
    if t % 2 == 0:
        return t - 1
    return t + 1 if t < n else t


def target_origins(is_swap: bool, n: int) -> tuple[int, ...]:
    return tuple(origin_content_position(is_swap, t, n) for t in range(1, n + 1))


def generate_synthetic_task(config: SyntheticTaskConfig):
    """Build the synthetic copy/swap corpus: sources are [mode, w_1..w_n] with
    content tokens drawn i.i.d. uniform; the target replays the content in mode
    order and the gold alignment links each target token to its source position
    (the mode token stays unaligned).

    Returns (pairs, alignments, vocab). The per-pair draw order is fixed
    (length, then mode, then content tokens) so corpora are a pure function of
    the seed.
    """
    n_content = config.vocab_size - CONTENT_BASE_ID
    width = max(3, len(str(n_content - 1)))
    vocab = Vocabulary(list(config.mode_tokens) + [f"w{i:0{width}d}" for i in range(n_content)])
    rng = random.Random(config.seed)
    pairs = []
    alignments = []
    for pid in range(config.num_pairs):
        n = rng.randint(config.min_len, config.max_len)
        is_swap = rng.randrange(2) == 1
        content = [CONTENT_BASE_ID + rng.randrange(n_content) for _ in range(n)]
        origins = target_origins(is_swap, n)
        source = (SWAP_ID if is_swap else COPY_ID, *content)
        target = tuple(content[o - 1] for o in origins) + (EOS_ID,)
        links = frozenset((o + 1, t) for t, o in enumerate(origins, start=1))
        pairs.append(SentencePair(id=pid, source=source, target=target))
        alignments.append(Alignment(pairs=links))
    return pairs, alignments, vocab


def strip_mode_offset(alignment: Alignment) -> Alignment:
    """Re-index source positions to content positions by dropping the leading
    mode token. Gold task alignments carry a one-position offset from that
    token, which inflates lookahead statistics; this removes it. Links to the
    mode position itself (s = 1) are discarded."""
    return Alignment(pairs=frozenset((s - 1, t) for s, t in alignment.pairs if s >= 2))


def save_parallel_corpus(pairs, vocab: Vocabulary, source_path, target_path) -> None:
    """Write surface forms; the terminal <EOS> is dropped on the target side so
    that loading (which re-appends it) round-trips token ids exactly."""
    src_lines = []
    tgt_lines = []
    for p in pairs:
        if len(p.target) < 2:
            raise ValueError(f"pair {p.id}: target has no real tokens, cannot round-trip")
        src_lines.append(" ".join(vocab.token(t) for t in p.source))
        tgt_lines.append(" ".join(vocab.token(t) for t in p.target[:-1]))
    Path(source_path).write_text("\n".join(src_lines) + "\n", encoding="utf-8")
    Path(target_path).write_text("\n".join(tgt_lines) + "\n", encoding="utf-8")


def save_alignments(alignments, path) -> None:
    lines = [
        " ".join(f"{s - 1}-{t - 1}" for s, t in sorted(a.pairs))
        for a in alignments
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_vocabulary(vocab: Vocabulary, path) -> None:
    Path(path).write_text("\n".join(vocab.id_to_token[NUM_SPECIALS:]) + "\n", encoding="utf-8")


def load_vocabulary(path) -> Vocabulary:
    return Vocabulary(_read_lines(path))
