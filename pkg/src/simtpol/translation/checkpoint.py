"""Self-describing model checkpoints bound to a vocabulary.

A checkpoint is a single file carrying the config, the vocabulary fingerprint,
a name -> shape table for every parameter, and the tensors themselves. Loading
against a vocabulary with a different fingerprint is an error.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict

import torch

from ..corpus import Vocabulary
from .tiny import TinyModel, TinyModelConfig

TRANSLATION_KIND = "tiny_translation"


def params_hash(module: torch.nn.Module) -> str:
    """SHA-256 over the module's parameters and buffers, walked in sorted name
    order over the raw tensor bytes. Any weight change changes the digest."""
    h = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        tensor = state[name].detach().cpu().contiguous()
        h.update(name.encode("utf-8"))
        h.update(str(tuple(tensor.shape)).encode("utf-8"))
        h.update(tensor.numpy().tobytes())
    return h.hexdigest()


def save_model(model: TinyModel, path) -> None:
    state = model.net.state_dict()
    payload = {
        "kind": TRANSLATION_KIND,
        "config": asdict(model.config),
        "vocab_fingerprint": model.vocab.fingerprint(),
        "param_shapes": {name: tuple(t.shape) for name, t in state.items()},
        "state_dict": state,
        "params_hash": params_hash(model.net),
        "train_log": list(model.train_log),
    }
    torch.save(payload, path)


def load_model(path, vocab: Vocabulary) -> TinyModel:
    payload = torch.load(path, weights_only=False)
    if payload.get("kind") != TRANSLATION_KIND:
        raise ValueError(f"{path} is not a translation checkpoint")
    if payload["vocab_fingerprint"] != vocab.fingerprint():
        raise ValueError("checkpoint was built against a different vocabulary")
    config = TinyModelConfig(**payload["config"])
    model = TinyModel(config, vocab)
    model.net.load_state_dict(payload["state_dict"])
    model.net.eval()
    model.train_log = list(payload.get("train_log", []))
    return model
