"""Multinomial naive Bayes target and its black-box confidence oracle.

Attack-side code never sees :class:`NBModel`; it receives an
:class:`OracleHandle` (or anything else with a ``classify`` method returning
a :class:`Confidence`) and pays one query per call.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import EncodedExample, Label
from .errors import CheckpointError, ConfigError, DataError, QueryError

SPAM_IDX, HAM_IDX = 0, 1


@dataclass(frozen=True)
class NBModel:
    log_prior: np.ndarray        # (2,), order spam, ham
    log_likelihood: np.ndarray   # (2, V)
    alpha: float
    vocab_size: int

    def __post_init__(self):
        for arr in (self.log_prior, self.log_likelihood):
            arr.flags.writeable = False

    def joint_log_scores(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        return self.log_prior + self.log_likelihood[:, ids].sum(axis=1)

    def save(self, path) -> None:
        save_checkpoint(
            path,
            {"log_prior": self.log_prior, "log_likelihood": self.log_likelihood},
            {"kind": "nb", "alpha": self.alpha, "vocab_size": self.vocab_size, "classes": ["spam", "ham"]},
        )

    @classmethod
    def load(cls, path) -> "NBModel":
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "nb":
            raise CheckpointError(f"{path}: not a naive Bayes checkpoint")
        return cls(tensors["log_prior"], tensors["log_likelihood"], float(meta["alpha"]), int(meta["vocab_size"]))


def train_nb(train: Sequence[EncodedExample], vocab_size: int, alpha: float = 1.0) -> NBModel:
    """Fit class priors (document frequencies) and Laplace-smoothed token likelihoods.

    Every id of every sequence is counted, special tokens included.
    """
    if not alpha > 0:
        raise ConfigError(f"Laplace smoothing alpha must be positive, got {alpha}")
    counts = np.zeros((2, vocab_size))
    docs = np.zeros(2)
    for ex in train:
        c = SPAM_IDX if ex.label is Label.SPAM else HAM_IDX
        ids = np.asarray(ex.ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
            raise DataError("training example contains an id outside the vocabulary")
        counts[c] += np.bincount(ids, minlength=vocab_size)
        docs[c] += 1
    if docs.min() == 0:
        raise DataError("naive Bayes training requires both spam and ham examples")
    smoothed = counts + alpha
    log_likelihood = np.log(smoothed) - np.log(smoothed.sum(axis=1, keepdims=True))
    log_prior = np.log(docs) - np.log(docs.sum())
    return NBModel(log_prior, log_likelihood, float(alpha), int(vocab_size))


@dataclass(frozen=True)
class Confidence:
    p_spam: float
    p_ham: float


def posterior(scores: np.ndarray, temperature: float = 1.0) -> Confidence:
    # Both probabilities come from the log-odds directly, so values like
    # 3.8e-14 keep full relative precision instead of being 1 - p_spam.
    d = (scores[SPAM_IDX] - scores[HAM_IDX]) / temperature
    return Confidence(float(expit(d)), float(expit(-d)))


class ConfidenceOracle(Protocol):
    def classify(self, ids) -> Confidence: ...


class OracleHandle:
    """Query-counting black-box view of a trained target.

    Parameters
    ----------
    model : NBModel
        Held privately; there is no accessor.
    temperature : float
        Divides the log-posterior before normalization. 1.0 reproduces the
        plain posterior; larger values flatten it.
    query_log : file-like, optional
        Receives one ``query_index<TAB>p_ham`` line per successful query.
    """

    def __init__(self, model: NBModel, temperature: float = 1.0, query_log=None, query_count: int = 0):
        if not temperature > 0:
            raise ConfigError("oracle temperature must be positive")
        self.__model = model
        self.__count = int(query_count)
        self.__lock = threading.Lock()
        self.temperature = float(temperature)
        self.query_log = query_log

    @property
    def query_count(self) -> int:
        return self.__count

    def reset_query_count(self, value: int = 0) -> None:
        with self.__lock:
            self.__count = int(value)

    def classify(self, ids) -> Confidence:
        with self.__lock:
            self.__count += 1
            index = self.__count
        ids = np.asarray(ids, dtype=np.int64).ravel()
        if ids.size and (ids.min() < 0 or ids.max() >= self.__model.vocab_size):
            raise QueryError(f"query {index}: token id outside [0, {self.__model.vocab_size})")
        conf = posterior(self.__model.joint_log_scores(ids), self.temperature)
        if self.query_log is not None:
            self.query_log.write(f"{index}\t{conf.p_ham!r}\n")
        return conf

    def __repr__(self):
        return f"OracleHandle(queries={self.__count}, temperature={self.temperature})"


def auc_roc(scores, positive) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC is undefined unless both classes are present")
    ranks = rankdata(scores, method="average")
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(model: NBModel, dataset: Sequence[EncodedExample]) -> dict:
    if not dataset:
        raise DataError("cannot evaluate on an empty dataset")
    log_odds = np.array([np.subtract(*model.joint_log_scores(ex.ids)) for ex in dataset])
    is_spam = np.array([ex.label is Label.SPAM for ex in dataset])
    predicted_spam = log_odds >= 0
    return {
        "accuracy": float(np.mean(predicted_spam == is_spam)),
        # log-odds rank identically to p_spam and do not saturate
        "auc_roc": auc_roc(log_odds, is_spam),
        "n": len(dataset),
    }

