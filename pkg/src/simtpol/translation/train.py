"""Training loops: the whole-sentence objective and the multi-path prefix
objective that samples one lookahead k per batch.

Both loops are seed-deterministic: weight init, batch shuffling and k sampling
each draw from their own fixed stream, and torch runs single-threaded so
reductions accumulate in a stable order.
"""

from __future__ import annotations

import math
import random

import torch
from torch import nn

from ..corpus import BOS_ID, PAD_ID, Vocabulary
from .tiny import TinyModel, TinyModelConfig, waitk_cross_mask


def _pad_batch(pairs):
    """Tensors (src, src_pad, tgt_in, tgt_out) padded to the batch maxima."""
    max_s = max(p.n_source for p in pairs)
    max_t = max(p.n_target for p in pairs)
    b = len(pairs)
    src = torch.full((b, max_s), PAD_ID, dtype=torch.long)
    tgt_in = torch.full((b, max_t), PAD_ID, dtype=torch.long)
    tgt_out = torch.full((b, max_t), PAD_ID, dtype=torch.long)
    for i, p in enumerate(pairs):
        src[i, : p.n_source] = torch.tensor(p.source, dtype=torch.long)
        tgt_in[i, 0] = BOS_ID
        if p.n_target > 1:
            tgt_in[i, 1 : p.n_target] = torch.tensor(p.target[:-1], dtype=torch.long)
        tgt_out[i, : p.n_target] = torch.tensor(p.target, dtype=torch.long)
    src_pad = src.eq(PAD_ID)
    return src, src_pad, tgt_in, tgt_out


def _batch_nll_sum(net, batch_tensors, k: int | None):
    """Summed teacher-forced NLL over non-pad target tokens, plus the count.
    k=None conditions every position on the whole source; otherwise each target
    row sees only the prefix its schedule has read."""
    src, src_pad, tgt_in, tgt_out = batch_tensors
    memory = net.encode(src, src_pad)
    cross = waitk_cross_mask(tgt_in.shape[1], src.shape[1], k) if k is not None else None
    states = net.decode_states(memory, src_pad, tgt_in, cross)
    logits = net.logits(states)
    nll = nn.functional.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        tgt_out.reshape(-1),
        ignore_index=PAD_ID,
        reduction="sum",
    )
    return nll, int(tgt_out.ne(PAD_ID).sum())


def _run_training(config: TinyModelConfig, pairs, vocab: Vocabulary, sample_k):
    if not pairs:
        raise ValueError("cannot train on an empty corpus")
    torch.set_num_threads(1)
    model = TinyModel(config, vocab)
    opt = torch.optim.Adam(model.net.parameters(), lr=config.learning_rate)
    rng_batches = random.Random(f"{config.seed}-batches")
    rng_k = random.Random(f"{config.seed}-k")
    order = list(range(len(pairs)))
    model.net.train()
    for epoch in range(1, config.epochs + 1):
        rng_batches.shuffle(order)
        total = 0.0
        count = 0
        for start in range(0, len(order), config.batch_size):
            chunk = [pairs[i] for i in order[start : start + config.batch_size]]
            tensors = _pad_batch(chunk)
            k = sample_k(rng_k)
            nll_sum, n_tok = _batch_nll_sum(model.net, tensors, k)
            loss = nll_sum / n_tok
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(nll_sum.detach())
            count += n_tok
        mean = total / count
        if not math.isfinite(mean):
            raise RuntimeError(f"training diverged at epoch {epoch}: loss={mean}")
        model.train_log.append(mean)
    model.net.eval()
    return model


def train_full_sentence(config: TinyModelConfig, pairs, vocab: Vocabulary) -> TinyModel:
    """Fit with every target position conditioned on the whole source. This is
    the offline model usable as a supervision source; the encoder may be
    bidirectional here (causal_source=False) since nothing decodes from its
    prefixes during training."""
    return _run_training(config, pairs, vocab, lambda rng: None)


def train_multipath_waitk(config: TinyModelConfig, pairs, vocab: Vocabulary) -> TinyModel:
    """Fit under the prefix schedule, drawing one k uniformly from k_candidates
    per batch. Requires a causal source encoder; with a bidirectional one the
    masked cross-attention would still leak unread source tokens through the
    encoder states."""
    if not config.causal_source:
        raise ValueError("multi-path training requires causal_source=True")
    candidates = config.k_candidates

    def sample_k(rng: random.Random) -> int:
        return candidates[rng.randrange(len(candidates))]

    return _run_training(config, pairs, vocab, sample_k)


def corpus_nll(model: TinyModel, pairs, k: int | None = None, batch_size: int = 64) -> float:
    """Mean per-token teacher-forced NLL over a corpus. k=None scores with the
    whole source visible; an integer k scores along the wait-k schedule, which
    needs the causal encoder for honest prefix conditioning."""
    if not pairs:
        raise ValueError("empty corpus")
    if k is not None and not model.config.causal_source:
        raise ValueError("prefix-schedule scoring needs a causal source encoder")
    total = 0.0
    count = 0
    model.net.eval()
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            nll_sum, n_tok = _batch_nll_sum(model.net, _pad_batch(chunk), k)
            total += float(nll_sum.detach())
            count += n_tok
    return total / count
