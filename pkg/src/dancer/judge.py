"""Autoencoder judge: pretraining, frozen sentence embeddings, cosine similarity."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, SimilarityError, TrainingError, UsageError
from .nncore import AdamState, EncoderDecoder, EncoderDecoderConfig, adam_step, backward, no_grad

log = logging.getLogger(__name__)

NORM_EPS = 1e-12


class JudgeModel:
    """Encoder-decoder whose parameters become read-only once frozen."""

    def __init__(self, network: EncoderDecoder, frozen: bool = False, history=None):
        self.network = network
        self.frozen = False
        self.history = list(history or [])
        if frozen:
            self.freeze()

    @property
    def config(self) -> EncoderDecoderConfig:
        return self.network.config

    def freeze(self) -> "JudgeModel":
        for p in self.network.parameters():
            p.data.flags.writeable = False
        self.frozen = True
        return self

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self.network.params.items():
            h.update(name.encode())
            h.update(p.data.tobytes())
        return h.hexdigest()

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"kind": "judge", "config": self.config.to_dict(), "frozen": self.frozen, "history": self.history}
        meta.update(extra or {})
        save_checkpoint(path, self.network.state_dict(), meta)

    @classmethod
    def load(cls, path) -> "JudgeModel":
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "judge":
            raise CheckpointError(f"{path}: not a judge checkpoint")
        net = EncoderDecoder(EncoderDecoderConfig.from_dict(meta["config"]), seed=None, init="zeros")
        net.load_state_dict(tensors)
        return cls(net, frozen=meta.get("frozen", True), history=meta.get("history"))


@dataclass(frozen=True)
class SentenceEmbedding:
    vector: np.ndarray
    source_ids: tuple


def _as_id_batch(examples) -> np.ndarray:
    return np.array([ex.ids if hasattr(ex, "ids") else ex for ex in examples], dtype=np.int64)


def pretrain_judge(
    train: Sequence,
    config: EncoderDecoderConfig,
    epochs: int,
    lr: float = 2e-4,
    batch: int = 50,
    seed: int = 0,
    init_seed: int | None = None,
    on_epoch=None,
) -> JudgeModel:
    """Teacher-forced self-reconstruction training; returns a frozen judge.

    ``on_epoch(epoch, mean_loss)`` is called after each epoch if given.
    """
    ids = _as_id_batch(train)
    net = EncoderDecoder(config, seed=seed if init_seed is None else init_seed)
    adam = AdamState(lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(ids))
        losses = []
        for start in range(0, len(ids), batch):
            rows = ids[order[start:start + batch]]
            loss = net.reconstruction_loss(rows)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"judge loss diverged at epoch {epoch}", checkpoint=net.state_dict())
            backward(loss)
            snapshot = net.state_dict()
            try:
                adam_step(adam, net.parameters())
            except TrainingError as exc:
                raise TrainingError(str(exc), checkpoint=snapshot) from exc
            losses.append(value * len(rows))
        mean_loss = float(np.sum(losses) / len(ids))
        history.append(mean_loss)
        log.debug("judge epoch %d loss %.4f", epoch, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return JudgeModel(net, frozen=True, history=history)


def reconstruction_accuracy(network: EncoderDecoder, examples, batch: int = 100) -> float:
    """Fraction of target positions (content + EOS) reproduced by greedy decoding."""
    ids = _as_id_batch(examples)
    steps = ids.shape[1] - 1
    correct = 0
    for start in range(0, len(ids), batch):
        rows = ids[start:start + batch]
        outs, _ = network.generate(rows, max_len=steps, greedy=True)
        for row, out in zip(rows, outs):
            target = row[1:]
            m = min(len(out), steps)
            correct += int(np.sum(out[:m] == target[:m]))
    return correct / (len(ids) * steps)


def encode_sentences(judge: JudgeModel, batch_ids) -> np.ndarray:
    if not judge.frozen:
        raise UsageError("judge must be frozen before it is used for embeddings")
    with no_grad():
        _, sentence = judge.network.encode(batch_ids)
    return sentence.data


def encode_sentence(judge: JudgeModel, ids) -> SentenceEmbedding:
    ids = tuple(int(i) for i in (ids.ids if hasattr(ids, "ids") else ids))
    return SentenceEmbedding(encode_sentences(judge, [ids])[0], ids)


def cosine_similarity(u, v) -> float:
    u = np.asarray(getattr(u, "vector", u), dtype=float)
    v = np.asarray(getattr(v, "vector", v), dtype=float)
    if u.shape != v.shape:
        raise SimilarityError(f"embedding widths differ: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < NORM_EPS or nv < NORM_EPS:
        raise SimilarityError("cosine similarity is undefined for a zero-norm embedding")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
