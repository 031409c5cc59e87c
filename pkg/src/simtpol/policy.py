"""Read/write policies: the fixed wait-k rule, scoring straight from a
divergence matrix, and a trainable divergence predictor stacked on a frozen
translation model.

The predictor reuses the base model's encoder states for the source prefix and
its decoder states for the target prefix; zero or more fresh decoder layers
re-attend those, and a small head (linear, tanh, linear) reads the state at the
last target position. Only the fresh layers and the head ever receive gradient
updates; the base stays byte-identical through training.
"""

from __future__ import annotations

import abc
import enum
import math
import random
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .corpus import BOS_ID, EOS_ID, PAD_ID, SentencePair, Vocabulary
from .divergence import MEASURES, SupervisionRecord
from .translation.base import check_prefixes
from .translation.checkpoint import params_hash
from .translation.tiny import DecoderLayer, TinyModel, causal_mask

POLICY_KIND = "divergence_policy"


def waitk_g(t: int, k: int, n_source: int) -> int:
    """Source tokens consumed before emitting target position t under wait-k:
    the schedule reads k tokens up front, then alternates, clamped at the
    source length."""
    if t < 1 or k < 1 or n_source < 1:
        raise ValueError("t, k and the source length must all be >= 1")
    return min(t + k - 1, n_source)


class PolicyDecision(enum.Enum):
    READ = "read"
    WRITE = "write"


def decide(
    confidence: float,
    threshold: float,
    continuous_reads: int,
    r_max: int | None,
    j: int,
    n_source: int,
) -> PolicyDecision:
    """One read/write decision: write when the confidence is at or below the
    threshold, when the consecutive-read cap is hit, or when the whole source
    has been read (reading further is impossible, so the rule forces a write
    there); read otherwise."""
    if j > n_source:
        raise ValueError(f"read position {j} beyond source length {n_source}")
    if confidence <= threshold:
        return PolicyDecision.WRITE
    if r_max is not None and continuous_reads >= r_max:
        return PolicyDecision.WRITE
    if j == n_source:
        return PolicyDecision.WRITE
    return PolicyDecision.READ


class PolicyModel(abc.ABC):
    """Confidence scorer: the predicted divergence for emitting the next target
    token now. Deterministic, finite, non-negative."""

    @abc.abstractmethod
    def confidence(self, source_prefix, target_prefix, source_total_len=None) -> float:
        raise NotImplementedError


class WaitkPolicy(PolicyModel):
    """The fixed schedule expressed through the confidence interface: zero once
    the schedule allows a write and infinity before that, so any positive
    threshold reproduces the schedule exactly."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k

    def confidence(self, source_prefix, target_prefix, source_total_len=None) -> float:
        if source_total_len is None:
            raise ValueError("the wait-k policy needs the true source length")
        t = len(target_prefix) + 1
        j = len(source_prefix)
        return 0.0 if j >= waitk_g(t, self.k, int(source_total_len)) else math.inf


class MatrixPolicy(PolicyModel):
    """Scores straight from a precomputed divergence matrix (the ground-truth
    mode). The row follows the tokens emitted so far, capped at the matrix's
    last row once the hypothesis outruns the reference it was computed for."""

    def __init__(self, matrix):
        self.matrix = matrix

    def confidence(self, source_prefix, target_prefix, source_total_len=None) -> float:
        t_len, n = self.matrix.values.shape
        t = min(len(target_prefix) + 1, t_len)
        j = len(source_prefix)
        if not 1 <= j <= n:
            raise ValueError(f"prefix length {j} outside the matrix width {n}")
        return float(self.matrix.values[t - 1, j - 1])


@dataclass(frozen=True)
class DapPolicyConfig:
    extra_decoder_layers: int = 1
    head_hidden_dim: int = 128
    loss_kind: str = "bce"
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.extra_decoder_layers < 0:
            raise ValueError("extra_decoder_layers must be >= 0")
        if self.head_hidden_dim < 1:
            raise ValueError("head_hidden_dim must be >= 1")
        if self.loss_kind not in ("mse", "bce"):
            raise ValueError(f"loss_kind must be 'mse' or 'bce', got {self.loss_kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def _confidence_features(probs: torch.Tensor) -> torch.Tensor:
    """Per-distribution confidence summaries along the last axis: residual
    peak mass 1 - max p, entropy normalized to [0, 1], and the mass on the
    end-of-sentence token."""
    peak = 1.0 - probs.max(dim=-1).values
    entropy = -(probs * torch.log(probs.clamp_min(1e-12))).sum(dim=-1)
    entropy = entropy / math.log(probs.shape[-1])
    eos_mass = probs[..., EOS_ID]
    return torch.stack([peak, entropy, eos_mass], dim=-1)


class DapPolicyModel(PolicyModel):
    """Trainable divergence predictor over a frozen base translation model.

    With loss_kind="bce" the head output passes through a sigmoid, so scores
    live in [0, 1] like the cosine measure they are trained on; with "mse" the
    output is linear and is clipped at 0 only where it is consumed as a
    confidence."""

    def __init__(self, base: TinyModel, config: DapPolicyConfig):
        if not isinstance(base, TinyModel):
            raise TypeError("the policy needs a TinyModel base")
        self.base = base
        self.config = config
        self.vocab: Vocabulary = base.vocab
        for p in base.net.parameters():
            p.requires_grad_(False)
        d = base.config.embed_dim
        torch.manual_seed(config.seed)
        extra = nn.ModuleList(
            DecoderLayer(d, base.config.num_heads, base.config.hidden_dim)
            for _ in range(config.extra_decoder_layers)
        )
        extra_norm = nn.LayerNorm(d) if config.extra_decoder_layers else nn.Identity()
        # The head reads the adapted state together with confidence summaries
        # of the base's own next-token distribution (peak mass, normalized
        # entropy, end-of-sentence mass). All are functions of the prefix
        # alone, and they carry the diffuseness signal the divergence target
        # is built from far more directly than the raw state does.
        head = nn.Sequential(
            nn.Linear(d + 3, config.head_hidden_dim),
            nn.Tanh(),
            nn.Linear(config.head_hidden_dim, 1),
        )
        self.modules_ = nn.ModuleDict(
            {"extra": extra, "extra_norm": extra_norm, "head": head}
        ).to(torch.float64)
        self.train_log: list[float] = []

    def trainable_parameters(self):
        return self.modules_.parameters()

    # frozen-base plumbing

    def _base_grid(self, source, target):
        """Frozen-base bundle for a whole (target position, prefix length) grid.

        Every prefix is re-encoded in one batched pass (row j-1 holds the
        prefix of length j, padded out), so the bundle is honest for causal and
        bidirectional base encoders alike."""
        n = len(source)
        t_len = len(target)
        with torch.no_grad():
            src = torch.tensor(list(source), dtype=torch.long).repeat(n, 1)
            blocked = torch.arange(n).unsqueeze(0) > torch.arange(n).unsqueeze(1)
            src[blocked] = PAD_ID
            src_pad = src.eq(PAD_ID)
            memory = self.base.net.encode(src, src_pad)
            tgt_in = torch.tensor([BOS_ID, *target[:-1]], dtype=torch.long).repeat(n, 1)
            base_states = self.base.net.decode_states(memory, src_pad, tgt_in, None)
            probs = torch.softmax(self.base.net.logits(base_states), dim=-1)
            features = _confidence_features(probs)
        return memory, src_pad, base_states, features, t_len

    def _head_grid(self, bundle) -> torch.Tensor:
        """Raw head outputs over the grid, differentiable in the policy
        parameters only; shape (T, N)."""
        memory, src_pad, base_states, features, t_len = bundle
        x = base_states
        self_mask = causal_mask(t_len)
        for layer in self.modules_["extra"]:
            x = layer(x, memory, self_mask, None, src_pad)
        if self.config.extra_decoder_layers:
            x = self.modules_["extra_norm"](x)
        raw = self.modules_["head"](torch.cat([x, features], dim=-1)).squeeze(-1)
        return raw.transpose(0, 1)

    def _emission_values(self, raw: torch.Tensor) -> torch.Tensor:
        if self.config.loss_kind == "bce":
            return torch.sigmoid(raw)
        return torch.clamp(raw, min=0.0)

    def predicted_matrix(self, pair: SentencePair) -> np.ndarray:
        """Emission-surface scores for every (target position, prefix length)
        cell of a pair, shape (T, N)."""
        with torch.no_grad():
            raw = self._head_grid(self._base_grid(pair.source, pair.target))
            return self._emission_values(raw).numpy()

    def confidence(self, source_prefix, target_prefix, source_total_len=None) -> float:
        check_prefixes(source_prefix, target_prefix)
        with torch.no_grad():
            src = torch.tensor([list(source_prefix)], dtype=torch.long)
            memory = self.base.net.encode(src, None)
            tgt_in = torch.tensor([[BOS_ID, *target_prefix]], dtype=torch.long)
            states = self.base.net.decode_states(memory, None, tgt_in, None)
            probs = torch.softmax(self.base.net.logits(states[:, -1]), dim=-1)
            features = _confidence_features(probs)
            x = states
            self_mask = causal_mask(tgt_in.shape[1])
            for layer in self.modules_["extra"]:
                x = layer(x, memory, self_mask, None, None)
            if self.config.extra_decoder_layers:
                x = self.modules_["extra_norm"](x)
            raw = self.modules_["head"](torch.cat([x[:, -1], features], dim=-1)).reshape(())
            return float(self._emission_values(raw))


def train_policy(
    config: DapPolicyConfig,
    base_model: TinyModel,
    records,
    pairs,
    measure: str,
) -> DapPolicyModel:
    """Fit the predictor on divergence supervision. The base model is frozen:
    its parameter hash is checked to be identical before and after."""
    if measure not in MEASURES:
        raise ValueError(f"unknown measure {measure!r}")
    if config.loss_kind == "bce" and measure != "cosine":
        raise ValueError(
            "bce expects targets in [0, 1], which only the cosine measure guarantees"
        )
    records = list(records)
    if not records:
        raise ValueError("no supervision records")
    pair_index = {p.id: p for p in pairs}
    grouped: dict[int, list[SupervisionRecord]] = {}
    for r in records:
        pair = pair_index.get(r.pair_id)
        if pair is None:
            raise ValueError(f"supervision references unknown pair {r.pair_id}")
        if r.t > pair.n_target or r.j > pair.n_source:
            raise ValueError(
                f"supervision cell ({r.t},{r.j}) outside pair {r.pair_id}'s grid"
            )
        if config.loss_kind == "bce" and r.target_value > 1.0 + 1e-9:
            raise ValueError(f"bce target {r.target_value} above 1 (pair {r.pair_id})")
        grouped.setdefault(r.pair_id, []).append(r)

    torch.set_num_threads(1)
    base_hash = params_hash(base_model.net)
    policy = DapPolicyModel(base_model, config)
    opt = torch.optim.Adam(policy.trainable_parameters(), lr=config.learning_rate)
    rng = random.Random(f"{config.seed}-policy-batches")
    ids = sorted(grouped)
    cache: dict[int, tuple] = {}
    index_cache: dict[int, tuple] = {}
    for pid in ids:
        recs = grouped[pid]
        ts = torch.tensor([r.t - 1 for r in recs], dtype=torch.long)
        js = torch.tensor([r.j - 1 for r in recs], dtype=torch.long)
        vals = torch.tensor([r.target_value for r in recs], dtype=torch.float64)
        index_cache[pid] = (ts, js, vals)

    policy.modules_.train()
    for epoch in range(1, config.epochs + 1):
        rng.shuffle(ids)
        epoch_loss = 0.0
        epoch_n = 0
        for start in range(0, len(ids), config.batch_size):
            chunk = ids[start : start + config.batch_size]
            opt.zero_grad()
            loss_sum = None
            n_entries = 0
            for pid in chunk:
                pair = pair_index[pid]
                bundle = cache.get(pid)
                if bundle is None:
                    bundle = policy._base_grid(pair.source, pair.target)
                    cache[pid] = bundle
                raw = policy._head_grid(bundle)
                ts, js, vals = index_cache[pid]
                pred = raw[ts, js]
                if config.loss_kind == "mse":
                    contrib = torch.sum((pred - vals) ** 2)
                else:
                    contrib = nn.functional.binary_cross_entropy_with_logits(
                        pred, vals, reduction="sum"
                    )
                loss_sum = contrib if loss_sum is None else loss_sum + contrib
                n_entries += len(vals)
            loss = loss_sum / n_entries
            loss.backward()
            opt.step()
            epoch_loss += float(loss_sum.detach())
            epoch_n += n_entries
        mean = epoch_loss / epoch_n
        if not math.isfinite(mean):
            raise RuntimeError(f"policy training diverged at epoch {epoch}: loss={mean}")
        policy.train_log.append(mean)
    policy.modules_.eval()
    if params_hash(base_model.net) != base_hash:
        raise RuntimeError("base model parameters changed during policy training")
    return policy


def save_policy(policy: DapPolicyModel, path) -> None:
    state = policy.modules_.state_dict()
    payload = {
        "kind": POLICY_KIND,
        "config": asdict(policy.config),
        "vocab_fingerprint": policy.vocab.fingerprint(),
        "base_params_hash": params_hash(policy.base.net),
        "param_shapes": {name: tuple(t.shape) for name, t in state.items()},
        "state_dict": state,
        "train_log": list(policy.train_log),
    }
    torch.save(payload, path)


def load_policy(path, base_model: TinyModel) -> DapPolicyModel:
    payload = torch.load(path, weights_only=False)
    if payload.get("kind") != POLICY_KIND:
        raise ValueError(f"{path} is not a policy checkpoint")
    if payload["vocab_fingerprint"] != base_model.vocab.fingerprint():
        raise ValueError("policy checkpoint was built against a different vocabulary")
    if payload["base_params_hash"] != params_hash(base_model.net):
        raise ValueError("policy checkpoint was trained against a different base model")
    config = DapPolicyConfig(**payload["config"])
    policy = DapPolicyModel(base_model, config)
    policy.modules_.load_state_dict(payload["state_dict"])
    policy.modules_.eval()
    policy.train_log = list(payload.get("train_log", []))
    return policy
