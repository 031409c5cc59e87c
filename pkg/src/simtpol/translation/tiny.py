"""A small encoder-decoder transformer over token ids.

Everything runs in float64: downstream checks compare per-position replays
against batched whole-sentence scoring at 1e-9, which float32 cannot hold.

With causal_source=True the encoder self-attention is unidirectional, so the
hidden state of a source position depends only on positions at or before it.
That is what makes decoding from a prefix consistent with slicing a full-pass
encoding, and it is required for the prefix-schedule training objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..corpus import BOS_ID, EOS_ID, PAD_ID, Vocabulary
from .base import TranslationModel, check_prefixes

MAX_POSITIONS = 192


@dataclass(frozen=True)
class TinyModelConfig:
    embed_dim: int = 64
    hidden_dim: int = 128
    num_layers: int = 2
    num_heads: int = 4
    learning_rate: float = 1e-3
    epochs: int = 40
    batch_size: int = 64
    k_candidates: tuple[int, ...] = (1, 3, 5, 7, 9)
    seed: int = 0
    causal_source: bool = True

    def __post_init__(self):
        object.__setattr__(self, "k_candidates", tuple(sorted({int(k) for k in self.k_candidates})))
        if self.embed_dim <= 0 or self.num_heads <= 0 or self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be positive and divisible by num_heads")
        if self.hidden_dim <= 0 or self.num_layers < 1:
            raise ValueError("hidden_dim must be positive and num_layers >= 1")
        if not self.k_candidates or any(k < 1 for k in self.k_candidates):
            raise ValueError("k_candidates must be non-empty with every k >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def causal_mask(length: int) -> torch.Tensor:
    """Bool mask, True above the diagonal (those positions are blocked)."""
    return torch.triu(torch.ones(length, length, dtype=torch.bool), diagonal=1)


def waitk_cross_mask(n_target: int, n_source: int, k: int) -> torch.Tensor:
    """Bool mask blocking target row t (0-based) from source columns >= t + k,
    i.e. each row sees exactly the prefix its schedule has read. Per-sentence
    source lengths are enforced separately through the padding mask."""
    rows = torch.arange(n_target).unsqueeze(1)
    cols = torch.arange(n_source).unsqueeze(0)
    return cols >= rows + k


def expand_attn_mask(mask: torch.Tensor, num_heads: int) -> torch.Tensor:
    """Expand a per-sample (B, L, S) bool mask to the (B*H, L, S) layout that
    multi-head attention expects."""
    b, l, s = mask.shape
    return mask.unsqueeze(1).expand(b, num_heads, l, s).reshape(b * num_heads, l, s)


class EncoderLayer(nn.Module):
    def __init__(self, d: int, heads: int, hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = nn.MultiheadAttention(d, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, hidden), nn.ReLU(), nn.Linear(hidden, d))

    def forward(self, x, attn_mask, key_padding_mask):
        h = self.norm1(x)
        a, _ = self.attn(
            h, h, h, attn_mask=attn_mask, key_padding_mask=key_padding_mask, need_weights=False
        )
        x = x + a
        return x + self.ff(self.norm2(x))


class DecoderLayer(nn.Module):
    def __init__(self, d: int, heads: int, hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.self_attn = nn.MultiheadAttention(d, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(d)
        self.cross_attn = nn.MultiheadAttention(d, heads, batch_first=True)
        self.norm3 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, hidden), nn.ReLU(), nn.Linear(hidden, d))

    def forward(self, x, memory, self_mask, cross_mask, memory_key_padding_mask):
        h = self.norm1(x)
        a, _ = self.self_attn(h, h, h, attn_mask=self_mask, need_weights=False)
        x = x + a
        h = self.norm2(x)
        a, _ = self.cross_attn(
            h,
            memory,
            memory,
            attn_mask=cross_mask,
            key_padding_mask=memory_key_padding_mask,
            need_weights=False,
        )
        x = x + a
        return x + self.ff(self.norm3(x))


class TinyNet(nn.Module):
    def __init__(self, config: TinyModelConfig, vocab_size: int):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.src_tok = nn.Embedding(vocab_size, d, padding_idx=PAD_ID)
        self.tgt_tok = nn.Embedding(vocab_size, d, padding_idx=PAD_ID)
        self.src_pos = nn.Embedding(MAX_POSITIONS, d)
        self.tgt_pos = nn.Embedding(MAX_POSITIONS, d)
        self.enc_layers = nn.ModuleList(
            EncoderLayer(d, config.num_heads, config.hidden_dim) for _ in range(config.num_layers)
        )
        self.dec_layers = nn.ModuleList(
            DecoderLayer(d, config.num_heads, config.hidden_dim) for _ in range(config.num_layers)
        )
        self.enc_norm = nn.LayerNorm(d)
        self.dec_norm = nn.LayerNorm(d)
        self.out_proj = nn.Linear(d, vocab_size)

    @staticmethod
    def _positions(ids: torch.Tensor) -> torch.Tensor:
        length = ids.shape[1]
        if length > MAX_POSITIONS:
            raise ValueError(f"sequence length {length} exceeds the positional table ({MAX_POSITIONS})")
        return torch.arange(length)

    def encode(self, src: torch.Tensor, src_pad: torch.Tensor | None) -> torch.Tensor:
        x = self.src_tok(src) + self.src_pos(self._positions(src))
        mask = causal_mask(src.shape[1]) if self.config.causal_source else None
        for layer in self.enc_layers:
            x = layer(x, mask, src_pad)
        return self.enc_norm(x)

    def decode_states(
        self,
        memory: torch.Tensor,
        src_pad: torch.Tensor | None,
        tgt_in: torch.Tensor,
        cross_mask: torch.Tensor | None,
    ) -> torch.Tensor:
        x = self.tgt_tok(tgt_in) + self.tgt_pos(self._positions(tgt_in))
        self_mask = causal_mask(tgt_in.shape[1])
        for layer in self.dec_layers:
            x = layer(x, memory, self_mask, cross_mask, src_pad)
        return self.dec_norm(x)

    def logits(self, states: torch.Tensor) -> torch.Tensor:
        return self.out_proj(states)


class TinyModel(TranslationModel):
    """Config + vocabulary + weights, queried with token id sequences.

    Construction is seed-deterministic: fresh weights are drawn under the
    config's seed, so the same config and vocabulary always yield the same
    initial parameters.
    """

    def __init__(self, config: TinyModelConfig, vocab: Vocabulary, net: TinyNet | None = None):
        self.config = config
        self.vocab = vocab
        if net is None:
            torch.manual_seed(config.seed)
            net = TinyNet(config, len(vocab))
        self.net = net.to(torch.float64)
        self.net.eval()
        self.train_log: list[float] = []

    def _check_ids(self, ids) -> None:
        for tok in ids:
            if not 0 <= int(tok) < len(self.vocab):
                raise ValueError(f"token id {tok} out of range for vocabulary of size {len(self.vocab)}")

    @staticmethod
    def _tensor(ids) -> torch.Tensor:
        return torch.tensor([list(ids)], dtype=torch.long)

    def next_token_distribution(self, source_prefix, target_prefix, source_total_len=None):
        check_prefixes(source_prefix, target_prefix)
        self._check_ids(source_prefix)
        self._check_ids(target_prefix)
        with torch.no_grad():
            src = self._tensor(source_prefix)
            memory = self.net.encode(src, None)
            tgt_in = self._tensor([BOS_ID, *target_prefix])
            states = self.net.decode_states(memory, None, tgt_in, None)
            probs = torch.softmax(self.net.logits(states[:, -1]), dim=-1)[0]
        return probs.numpy()

    def row_distributions(self, source_prefix, target, source_total_len=None):
        """Batched form of the base-class loop: one encoder pass over the prefix
        and one teacher-forced decoder pass produce every row at once."""
        check_prefixes(source_prefix, ())
        self._check_ids(source_prefix)
        self._check_ids(target)
        if len(target) == 0:
            return np.zeros((0, len(self.vocab)))
        if EOS_ID in tuple(target)[:-1]:
            raise ValueError("<EOS> may only appear as the final target token")
        with torch.no_grad():
            src = self._tensor(source_prefix)
            memory = self.net.encode(src, None)
            tgt_in = self._tensor([BOS_ID, *target[:-1]])
            states = self.net.decode_states(memory, None, tgt_in, None)
            probs = torch.softmax(self.net.logits(states[0]), dim=-1)
        return probs.numpy()

    def sequence_nll(self, source, target) -> float:
        """Whole-sentence teacher-forced NLL per target token, computed in one
        batched pass with the entire source visible."""
        self._check_ids(source)
        self._check_ids(target)
        if len(target) < 1:
            raise ValueError("empty target")
        with torch.no_grad():
            src = self._tensor(source)
            memory = self.net.encode(src, None)
            tgt_in = self._tensor([BOS_ID, *target[:-1]])
            tgt_out = self._tensor(target)
            states = self.net.decode_states(memory, None, tgt_in, None)
            logits = self.net.logits(states)
            nll = nn.functional.cross_entropy(
                logits.reshape(-1, logits.shape[-1]), tgt_out.reshape(-1), reduction="sum"
            )
        return float(nll) / len(target)
