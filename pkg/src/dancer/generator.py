"""Rewriting policy trained with REINFORCE against the black-box target.

Reward for rewriting a spam input ``x`` into ``x'``::

    combined = lambda_adv * p_ham(x') + lambda_sim * cos(J(x), J(x'))

The gradient estimate is ``(combined - baseline) * grad sum_t log p(y_t | x, y_<t)``
with a global exponential moving average baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .corpus import EOS_ID, PAD_ID, SOS_ID
from .errors import ConfigError, DataError, InitializationError, SimilarityError, TrainingError, UsageError
from .judge import JudgeModel, cosine_similarity, encode_sentences
from .nncore import AdamState, EncoderDecoder, EncoderDecoderConfig, adam_step, backward
from .nncore import autograd as ag


class PolicyModel:
    def __init__(self, network: EncoderDecoder):
        self.network = network

    @property
    def config(self) -> EncoderDecoderConfig:
        return self.network.config

    def parameters(self):
        return self.network.parameters()

    def greedy_rewrites(self, batch_ids, max_len: int | None = None) -> list[tuple]:
        batch_ids = np.asarray(batch_ids, dtype=np.int64)
        length = batch_ids.shape[1] - 2
        outs, _ = self.network.generate(batch_ids, max_len or length + 1, greedy=True)
        return [rewrite_ids(o, length) for o in outs]


def init_policy(judge: JudgeModel, config: EncoderDecoderConfig | None = None) -> PolicyModel:
    """Copy the judge's weights into a fresh, independently trainable policy."""
    if not judge.frozen:
        raise UsageError("the judge must be frozen before initializing a policy from it")
    if config is not None and config != judge.config:
        raise InitializationError(f"policy config {config} does not match judge config {judge.config}")
    return PolicyModel(judge.network.copy())


# ------------------------------------------------------------------ episodes

@dataclass(frozen=True)
class RewardBreakdown:
    q_minus: float
    similarity: float
    lambda_adversarial: float
    lambda_similar: float
    combined: float


@dataclass
class EpisodeRecord:
    input_ids: tuple
    output_ids: np.ndarray
    step_logprobs: np.ndarray
    seed: int | None = None
    reward: RewardBreakdown | None = None
    baseline_at_update: float | None = None

    @property
    def rewrite_ids(self) -> tuple:
        return rewrite_ids(self.output_ids, len(self.input_ids) - 2)

    @property
    def log_prob(self) -> float:
        return float(np.sum(self.step_logprobs))


def rewrite_ids(generated, length: int) -> tuple:
    """Normalize raw decoder output to the corpus layout ``[SOS, L content, EOS]``.

    Everything before the first EOS is content; it is truncated or
    PAD-filled to ``length`` so the target sees the same shape it was
    trained on.
    """
    content = []
    for tok in generated:
        tok = int(tok)
        if tok == EOS_ID:
            break
        content.append(tok)
    content = content[:length] + [PAD_ID] * max(0, length - len(content))
    return (SOS_ID, *content, EOS_ID)


def sample_rewrites(policy: PolicyModel, batch_ids, seeds: Sequence[int], max_len: int | None = None,
                    greedy: bool = False) -> list[EpisodeRecord]:
    """Sample one rewrite per row; each row draws only from ``default_rng(seeds[i])``."""
    batch_ids = np.asarray(batch_ids, dtype=np.int64)
    if batch_ids.ndim == 1:
        batch_ids = batch_ids[None, :]
    if max_len is None:
        max_len = batch_ids.shape[1] - 1
    if max_len < 1:
        raise ConfigError("max_len must be at least 1")
    rngs = None if greedy else [np.random.default_rng(int(s)) for s in seeds]
    outs, logps = policy.network.generate(batch_ids, max_len, rngs=rngs, greedy=greedy)
    return [
        EpisodeRecord(tuple(int(i) for i in row), out, lp, None if greedy else int(seed))
        for row, out, lp, seed in zip(batch_ids, outs, logps, seeds if not greedy else [None] * len(outs))
    ]


def sample_rewrite(policy: PolicyModel, input_ids, rng_seed: int, max_len: int | None = None,
                   greedy: bool = False) -> EpisodeRecord:
    return sample_rewrites(policy, [input_ids], [rng_seed], max_len, greedy)[0]


# ------------------------------------------------------------------- rewards

def sweep_lambdas(lambda_adversarial: float) -> tuple[float, float]:
    """The sweep convention: similarity weight is ``1 - lambda_adversarial``."""
    if not 0.0 <= lambda_adversarial <= 1.0:
        raise ConfigError("lambda_adversarial must lie in [0, 1] under the sweep convention")
    return lambda_adversarial, 1.0 - lambda_adversarial


def _check_lambdas(lam_adv, lam_sim):
    if lam_adv < 0 or lam_sim < 0:
        raise ConfigError("reward weights must be non-negative")


def combine(q_minus: float, similarity: float, lam_adv: float, lam_sim: float) -> RewardBreakdown:
    return RewardBreakdown(q_minus, similarity, lam_adv, lam_sim, lam_adv * q_minus + lam_sim * similarity)


def compute_reward(x, x_prime, oracle, judge: JudgeModel, lam_adv: float, lam_sim: float) -> RewardBreakdown:
    """Score one rewrite: one oracle query plus two judge embeddings."""
    return compute_rewards([x], [x_prime], oracle, judge, lam_adv, lam_sim)[0]


def compute_rewards(xs, x_primes, oracle, judge: JudgeModel, lam_adv: float, lam_sim: float) -> list[RewardBreakdown]:
    """Batched :func:`compute_reward`; consumes exactly ``len(x_primes)`` queries."""
    _check_lambdas(lam_adv, lam_sim)
    xs = np.asarray(xs, dtype=np.int64)
    x_primes = np.asarray(x_primes, dtype=np.int64)
    rewards = []
    emb_x = encode_sentences(judge, xs)
    emb_xp = encode_sentences(judge, x_primes)
    for i, xp in enumerate(x_primes):
        try:
            q_minus = oracle.classify(xp).p_ham
        except DataError as exc:
            raise type(exc)(f"episode {i}: {exc}") from exc
        try:
            sim = cosine_similarity(emb_x[i], emb_xp[i])
        except SimilarityError:
            sim = 0.0
        rewards.append(combine(q_minus, sim, lam_adv, lam_sim))
    return rewards


def score_episodes(episodes: Sequence[EpisodeRecord], oracle, judge, lam_adv, lam_sim) -> None:
    rewards = compute_rewards([e.input_ids for e in episodes], [e.rewrite_ids for e in episodes],
                              oracle, judge, lam_adv, lam_sim)
    for ep, r in zip(episodes, rewards):
        ep.reward = r


# ------------------------------------------------------------------ baseline

@dataclass(frozen=True)
class BaselineState:
    value: float = 0.0
    decay: float = 0.99
    initialized: bool = False


def update_baseline(state: BaselineState, batch_mean_reward: float) -> BaselineState:
    r = float(batch_mean_reward)
    if not np.isfinite(r):
        raise TrainingError(f"non-finite reward {r} passed to the baseline")
    if not state.initialized:
        return replace(state, value=r, initialized=True)
    return replace(state, value=state.decay * state.value + (1.0 - state.decay) * r)


# ------------------------------------------------------------------- update

@dataclass
class UpdateStats:
    loss: float
    mean_reward: float
    mean_advantage: float
    stepped: bool


def reinforce_update(policy: PolicyModel, episodes: Sequence[EpisodeRecord], baseline: BaselineState,
                     adam: AdamState) -> tuple[BaselineState, UpdateStats]:
    """One policy-gradient step on a scored batch.

    Advantages use the baseline as it stood before this batch (0 before the
    first batch); the baseline absorbs the batch mean afterwards. Log
    probabilities are recomputed through the network for the recorded
    tokens, up to and including EOS. A batch whose advantages are all
    exactly zero has an identically zero gradient and skips the optimizer
    so that Adam momentum cannot move the parameters.
    """
    if not episodes:
        raise UsageError("reinforce_update needs at least one episode")
    if any(ep.reward is None for ep in episodes):
        raise UsageError("every episode must be scored before the update")
    ref = baseline.value if baseline.initialized else 0.0
    rewards = np.array([ep.reward.combined for ep in episodes])
    if not np.all(np.isfinite(rewards)):
        raise TrainingError("non-finite reward in batch", episodes=list(episodes))
    advantages = rewards - ref
    for ep in episodes:
        ep.baseline_at_update = ref

    loss_value, stepped = 0.0, False
    if np.any(advantages != 0.0):
        net = policy.network
        lengths = np.array([len(ep.output_ids) for ep in episodes])
        outputs = np.full((len(episodes), int(lengths.max())), PAD_ID, dtype=np.int64)
        for row, ep in zip(outputs, episodes):
            row[:len(ep.output_ids)] = ep.output_ids
        inputs = np.array([ep.input_ids for ep in episodes], dtype=np.int64)
        net.zero_grad()
        seq_logp = net.sequence_log_prob(inputs, outputs, lengths)
        loss = ag.sum(seq_logp * (-advantages / len(episodes)))
        loss_value = float(loss.data)
        if not np.isfinite(loss_value):
            raise TrainingError("non-finite policy-gradient loss", checkpoint=net.state_dict(), episodes=list(episodes))
        backward(loss)
        adam_step(adam, net.parameters())
        stepped = True
    new_baseline = update_baseline(baseline, float(rewards.mean()))
    return new_baseline, UpdateStats(loss_value, float(rewards.mean()), float(advantages.mean()), stepped)
