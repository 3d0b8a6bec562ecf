"""REINFORCE attack runs: curriculum selection, training loop, logs, checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..checkpoint import load_checkpoint, save_checkpoint
from ..corpus import EncodedExample, Label, Vocabulary, read_encoded
from ..errors import CheckpointError, ConfigError, DancerError, SelectionError, TrainingError
from ..generator import (BaselineState, PolicyModel, compute_rewards, init_policy, reinforce_update,
                         sample_rewrites, score_episodes)
from ..judge import JudgeModel
from ..nncore import AdamState
from ..oracle import NBModel, OracleHandle
from .collapse import CollapseDetector, CollapseReport
from .config import SEED_PURPOSES, AttackConfig, derive_seed

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- curriculum

def select_low_confidence(examples: Sequence[EncodedExample], oracle, fraction: float = 0.10,
                          return_scores: bool = False):
    """Keep the ``floor(fraction * n)`` spam examples the target is least sure about.

    Items are ordered by ``p_spam`` ascending with ties kept in input order;
    at least one item is always returned. Costs one query per example.
    """
    if not examples:
        raise SelectionError("cannot select from an empty example list")
    if not 0 < fraction <= 1:
        raise SelectionError("fraction must lie in (0, 1]")
    if any(ex.label is not Label.SPAM for ex in examples):
        raise SelectionError("curriculum selection expects spam-labelled examples only")
    scores = np.array([oracle.classify(ex.ids).p_spam for ex in examples])
    order = np.argsort(scores, kind="stable")
    k = max(1, math.floor(fraction * len(examples) + 1e-9))
    chosen = [examples[i] for i in order[:k]]
    if return_scores:
        return chosen, scores[order[:k]]
    return chosen


# ----------------------------------------------------------------------- log

@dataclass
class BatchRecord:
    epoch: int
    batch: int
    mean_combined: float
    mean_q_minus: float
    mean_similarity: float
    baseline: float
    query_count: int
    episode_queries: int
    mean_distinct_ratio: float
    collapse_flagged: bool
    samples: list = field(default_factory=list)


@dataclass
class EpochRecord:
    epoch: int
    probe_mean_combined: float
    probe_mean_q_minus: float
    probe_mean_similarity: float
    eval_queries: int
    query_count: int


@dataclass
class TrainingLog:
    initial_queries: int = 0
    batches: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    def append_batch(self, rec: BatchRecord) -> None:
        if self.batches:
            last = self.batches[-1]
            if (rec.epoch, rec.batch) <= (last.epoch, last.batch):
                raise ValueError("batch records must have increasing (epoch, batch) keys")
            if rec.query_count < last.query_count:
                raise ValueError("oracle query count went backwards")
        self.batches.append(rec)

    def append_epoch(self, rec: EpochRecord) -> None:
        if self.epochs and rec.epoch <= self.epochs[-1].epoch:
            raise ValueError("epoch records must have increasing epoch numbers")
        self.epochs.append(rec)

    @property
    def total_recorded_queries(self) -> int:
        return (self.initial_queries + sum(b.episode_queries for b in self.batches)
                + sum(e.eval_queries for e in self.epochs))

    def to_dict(self) -> dict:
        return {
            "initial_queries": self.initial_queries,
            "batches": [asdict(b) for b in self.batches],
            "epochs": [asdict(e) for e in self.epochs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingLog":
        return cls(d.get("initial_queries", 0), [BatchRecord(**b) for b in d["batches"]],
                   [EpochRecord(**e) for e in d["epochs"]])

    def write(self, out_dir) -> list[str]:
        out_dir = Path(out_dir)
        cols = [f for f in BatchRecord.__dataclass_fields__ if f != "samples"]
        with open(out_dir / "training_log.tsv", "w", encoding="utf-8") as fh:
            fh.write("\t".join(cols) + "\n")
            for b in self.batches:
                fh.write("\t".join(str(getattr(b, c)) for c in cols) + "\n")
        with open(out_dir / "epochs.tsv", "w", encoding="utf-8") as fh:
            ecols = list(EpochRecord.__dataclass_fields__)
            fh.write("\t".join(ecols) + "\n")
            for e in self.epochs:
                fh.write("\t".join(str(getattr(e, c)) for c in ecols) + "\n")
        with open(out_dir / "training_log.json", "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
        return ["training_log.tsv", "epochs.tsv", "training_log.json"]


# ----------------------------------------------------------------------- run

@dataclass
class AttackResult:
    log: TrainingLog
    collapse: CollapseReport
    checkpoints: list
    policy: PolicyModel
    best_checkpoint: str | None
    best_epoch: int | None
    halted: bool
    artifacts: list = field(default_factory=list)


def _ids_array(examples) -> np.ndarray:
    return np.array([ex.ids for ex in examples], dtype=np.int64)


class AttackRun:
    """Stateful driver for one attack; checkpointable at epoch boundaries."""

    def __init__(self, policy: PolicyModel, oracle, judge: JudgeModel, attack_set: Sequence[EncodedExample],
                 config: AttackConfig, probe_set: Sequence[EncodedExample] | None = None,
                 vocab: Vocabulary | None = None, out_dir=None):
        if not attack_set:
            raise ConfigError("attack set is empty")
        self.policy = policy
        self.oracle = oracle
        self.judge = judge
        self.attack_set = list(attack_set)
        self.config = config
        self.probe_set = list(probe_set) if probe_set is not None else self.attack_set[:config.probe_size]
        self.vocab = vocab
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.adam = AdamState(lr=config.lr)
        self.baseline = BaselineState()
        self.detector = CollapseDetector(config.collapse_threshold, config.collapse_window)
        self.log = TrainingLog(initial_queries=oracle.query_count)
        self.epoch = 0
        self.halted = False
        self.batches_since_flag = 0
        self.best_score = -math.inf
        self.best_epoch = None
        self.checkpoints = []
        self.max_len = config.max_len or (len(self.attack_set[0].ids) - 1)

    # -- evaluation

    def evaluate_probe(self) -> EpochRecord:
        before = self.oracle.query_count
        ids = _ids_array(self.probe_set)
        rewrites = self.policy.greedy_rewrites(ids, self.max_len)
        lam_adv, lam_sim = self.config.lambdas
        rewards = compute_rewards(ids, rewrites, self.oracle, self.judge, lam_adv, lam_sim)
        return EpochRecord(
            self.epoch,
            float(np.mean([r.combined for r in rewards])),
            float(np.mean([r.q_minus for r in rewards])),
            float(np.mean([r.similarity for r in rewards])),
            self.oracle.query_count - before,
            self.oracle.query_count,
        )

    def _text(self, ids) -> str:
        if self.vocab is None:
            return " ".join(map(str, ids))
        return " ".join(self.vocab.decode_ids(i for i in ids if i not in (0, 2, 3)))

    # -- training

    def _episode_seeds(self, epoch: int, batch: int, n: int) -> list[int]:
        return [derive_seed(self.config.seed, "sampling", epoch, batch, i) for i in range(n)]

    def train_epoch(self) -> None:
        epoch = self.epoch + 1
        cfg = self.config
        lam_adv, lam_sim = cfg.lambdas
        order = np.random.default_rng(derive_seed(cfg.seed, "sampling", epoch)).permutation(len(self.attack_set))
        n_batches = math.ceil(len(order) / cfg.batch_size)
        for b in range(n_batches):
            rows = [self.attack_set[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            ids = _ids_array(rows)
            before = self.oracle.query_count
            try:
                episodes = sample_rewrites(self.policy, ids, self._episode_seeds(epoch, b, len(rows)), self.max_len)
                score_episodes(episodes, self.oracle, self.judge, lam_adv, lam_sim)
                self.baseline, _ = reinforce_update(self.policy, episodes, self.baseline, self.adam)
            except DancerError as exc:
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}") from exc
            report = self.detector.update([ep.rewrite_ids[1:-1] for ep in episodes])
            samples = [{"input": self._text(ep.input_ids), "output": self._text(ep.rewrite_ids),
                        "q_minus": ep.reward.q_minus, "similarity": ep.reward.similarity}
                       for ep in episodes[:cfg.sample_dumps]]
            self.log.append_batch(BatchRecord(
                epoch, b,
                float(np.mean([ep.reward.combined for ep in episodes])),
                float(np.mean([ep.reward.q_minus for ep in episodes])),
                float(np.mean([ep.reward.similarity for ep in episodes])),
                self.baseline.value,
                self.oracle.query_count,
                self.oracle.query_count - before,
                report.batch_mean_ratio[-1],
                report.flagged,
                samples,
            ))
            if report.flagged:
                self.batches_since_flag += 1
                patience = cfg.collapse_window if cfg.collapse_patience is None else cfg.collapse_patience
                if cfg.halt_on_collapse and self.batches_since_flag > patience:
                    log.info("mode collapse flagged at batch %s; halting", report.first_flagged_batch)
                    self.halted = True
                    break
        self.epoch = epoch

    def run(self, epochs: int | None = None) -> AttackResult:
        """Train until ``epochs`` total epochs are done or collapse halts the run."""
        target = self.config.epochs if epochs is None else epochs
        if self.epoch == 0 and not self.log.epochs:
            self._end_epoch()
        while self.epoch < target and not self.halted:
            self.train_epoch()
            self._end_epoch()
        return AttackResult(self.log, self.detector.report(), list(self.checkpoints), self.policy,
                            self._best_path(), self.best_epoch, self.halted)

    def _end_epoch(self) -> None:
        rec = self.evaluate_probe()
        self.log.append_epoch(rec)
        if not self.detector.flagged and rec.probe_mean_combined > self.best_score:
            self.best_score = rec.probe_mean_combined
            self.best_epoch = self.epoch
            if self.out_dir is not None:
                self.save(self.out_dir / "best.ckpt")
        if self.out_dir is not None:
            path = self.out_dir / f"epoch_{self.epoch:03d}.ckpt"
            self.save(path)
            self.checkpoints.append(str(path))

    def _best_path(self):
        if self.out_dir is None or self.best_epoch is None:
            return None
        return str(self.out_dir / "best.ckpt")

    # -- checkpoints

    def save(self, path) -> None:
        tensors = {f"policy.{k}": v for k, v in self.policy.network.state_dict().items()}
        tensors.update(self.adam.state_arrays())
        meta = {
            "kind": "attack",
            "config": self.config.to_dict(),
            "policy_config": self.policy.config.to_dict(),
            "epoch": self.epoch,
            "seeds": {"master": self.config.seed,
                      "derivation": "SeedSequence(master, spawn_key=(purpose_index, *indices))",
                      "purposes": list(SEED_PURPOSES)},
            "adam": self.adam.hyper(),
            "baseline": asdict(self.baseline),
            "collapse": self.detector.state(),
            "log": self.log.to_dict(),
            "query_count": self.oracle.query_count,
            "halted": self.halted,
            "batches_since_flag": self.batches_since_flag,
            "best_score": None if self.best_epoch is None else self.best_score,
            "best_epoch": self.best_epoch,
        }
        save_checkpoint(path, tensors, meta)

    @classmethod
    def resume(cls, path, oracle, judge, attack_set, probe_set=None, vocab=None, out_dir=None,
               config: AttackConfig | None = None) -> "AttackRun":
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "attack":
            raise CheckpointError(f"{path}: not an attack checkpoint")
        saved = AttackConfig.from_dict(meta["config"])
        config = config or saved
        policy = init_policy(judge)
        policy.network.load_state_dict({k[len("policy."):]: v for k, v in tensors.items() if k.startswith("policy.")})
        run = cls(policy, oracle, judge, attack_set, config, probe_set, vocab, out_dir)
        run.adam = AdamState.restore(meta["adam"], tensors)
        run.baseline = BaselineState(**meta["baseline"])
        run.detector = CollapseDetector.from_state(meta["collapse"])
        run.log = TrainingLog.from_dict(meta["log"])
        run.epoch = meta["epoch"]
        run.halted = meta["halted"]
        run.batches_since_flag = meta["batches_since_flag"]
        run.best_epoch = meta["best_epoch"]
        run.best_score = -math.inf if meta["best_score"] is None else meta["best_score"]
        if hasattr(oracle, "reset_query_count"):
            oracle.reset_query_count(meta["query_count"])
        return run


def load_policy(path, judge: JudgeModel) -> PolicyModel:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "attack":
        raise CheckpointError(f"{path}: not an attack checkpoint")
    policy = init_policy(judge)
    policy.network.load_state_dict({k[len("policy."):]: v for k, v in tensors.items() if k.startswith("policy.")})
    return policy


# ------------------------------------------------------------- file-driven

def load_spam(path) -> list[EncodedExample]:
    return [ex for ex in read_encoded(path) if ex.label is Label.SPAM]


def example_keys(path, examples) -> list:
    """Identity of file-loaded examples: (resolved path, record index)."""
    p = str(Path(path).resolve())
    return [(p, i) for i in range(len(examples))]


def check_hygiene(attack_keys, eval_keys) -> None:
    shared = set(attack_keys) & set(eval_keys)
    if shared:
        raise ConfigError(f"{len(shared)} example(s) appear in both the attack set and the eval set")


def run_attack(config: AttackConfig, out_dir, resume_from=None) -> AttackResult:
    """Load artifacts named in ``config``, train, and write logs under ``out_dir``."""
    config.check_paths()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    oracle = OracleHandle(NBModel.load(config.target), temperature=config.oracle_temperature)
    judge = JudgeModel.load(config.judge).freeze()
    attack = load_spam(config.attack_set)
    if config.eval_set is not None:
        check_hygiene(example_keys(config.attack_set, attack), example_keys(config.eval_set, load_spam(config.eval_set)))
    vocab = Vocabulary.load(config.vocab) if config.vocab else None
    if config.curriculum == "low_confidence":
        attack = select_low_confidence(attack, oracle, config.fraction)
    if resume_from is not None:
        run = AttackRun.resume(resume_from, oracle, judge, attack, vocab=vocab, out_dir=out_dir, config=config)
    else:
        run = AttackRun(init_policy(judge), oracle, judge, attack, config, vocab=vocab, out_dir=out_dir)
    result = run.run()
    written = result.log.write(out_dir)
    with open(out_dir / "collapse_report.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(result.collapse), fh, indent=1)
    written.append("collapse_report.json")
    result.artifacts = written + [Path(p).name for p in result.checkpoints]
    if result.best_checkpoint:
        result.artifacts.append("best.ckpt")
    return result
