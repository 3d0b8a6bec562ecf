"""Synthetic spam/ham corpora and id sequences for desk-scale experiments.

Messages mix four token pools: class-exclusive tokens (planted, never seen
in the other class), class-leaning tokens (more frequent in one class but
present in both), and a shared neutral pool.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EOS_ID, PAD_ID, SOS_ID, Label, RawExample

NEUTRAL = (
    "the to and of a you for is in this that on it with be are please at "
    "have will your we from as all can our an get if by has more one new "
    "time just now about them out any here there what when which would"
).split()

SPAM_LEANING = (
    "free offer click money cash prize winner save price deal order buy "
    "online discount limited best credit pills software unsubscribe"
).split()

HAM_LEANING = (
    "meeting schedule report attached thanks regards project team review "
    "call forecast contract agenda gas power desk monday notes"
).split()

SPAM_EXCLUSIVE = tuple(f"spamtok{i}" for i in range(10))
HAM_EXCLUSIVE = tuple(f"hamtok{i}" for i in range(10))


@dataclass
class CorpusRecipe:
    """Per-token pool probabilities; the neutral pool takes the remainder."""

    p_exclusive: float = 0.08
    p_own_leaning: float = 0.25
    p_other_leaning: float = 0.05
    min_len: int = 6
    max_len: int = 16
    min_exclusive: int = 0
    n_exclusive: int = 10


def _pools(label: Label, n_exclusive: int):
    if label is Label.SPAM:
        return SPAM_EXCLUSIVE[:n_exclusive], SPAM_LEANING, HAM_LEANING
    return HAM_EXCLUSIVE[:n_exclusive], HAM_LEANING, SPAM_LEANING


def make_message(label: Label, rng: np.random.Generator, recipe: CorpusRecipe) -> str:
    exclusive, own, other = _pools(label, recipe.n_exclusive)
    length = int(rng.integers(recipe.min_len, recipe.max_len + 1))
    cut1 = recipe.p_exclusive
    cut2 = cut1 + recipe.p_own_leaning
    cut3 = cut2 + recipe.p_other_leaning
    words = ["subject:"]
    for _ in range(length - 1):
        u = rng.random()
        if u < cut1 and exclusive:
            pool = exclusive
        elif u < cut2:
            pool = own
        elif u < cut3:
            pool = other
        else:
            pool = NEUTRAL
        words.append(pool[int(rng.integers(len(pool)))])
    # planted tokens land in random content positions
    for _ in range(recipe.min_exclusive - sum(w in exclusive for w in words)):
        pos = 1 + int(rng.integers(length - 1))
        words[pos] = exclusive[int(rng.integers(len(exclusive)))]
    return " ".join(words)


def make_spam_ham_corpus(n_spam: int, n_ham: int, seed: int = 0, recipe: CorpusRecipe | None = None) -> list[RawExample]:
    recipe = recipe or CorpusRecipe()
    rng = np.random.default_rng(seed)
    labels = [Label.SPAM] * n_spam + [Label.HAM] * n_ham
    return [RawExample(make_message(lab, rng, recipe), lab) for lab in labels]


def planted_corpus(n_per_class: int = 500, seed: int = 0) -> list[RawExample]:
    """Every message carries at least one of 10 class-exclusive tokens."""
    return make_spam_ham_corpus(n_per_class, n_per_class, seed, CorpusRecipe(min_exclusive=1))


def overlapping_corpus(n_per_class: int = 300, seed: int = 0) -> list[RawExample]:
    """Weakly separated classes: no exclusive tokens, heavy pool sharing."""
    recipe = CorpusRecipe(p_exclusive=0.0, p_own_leaning=0.2, p_other_leaning=0.08, n_exclusive=0)
    return make_spam_ham_corpus(n_per_class, n_per_class, seed, recipe)


def random_sequences(n: int, vocab_size: int, length: int, seed: int = 0, min_content: int | None = None) -> np.ndarray:
    """``(n, length + 2)`` id array: SOS, random content ids, PAD tail, EOS."""
    rng = np.random.default_rng(seed)
    min_content = length // 2 if min_content is None else min_content
    out = np.full((n, length + 2), PAD_ID, dtype=np.int64)
    out[:, 0] = SOS_ID
    out[:, -1] = EOS_ID
    for row in out:
        k = int(rng.integers(min_content, length + 1))
        row[1:1 + k] = rng.integers(4, vocab_size, size=k)
    return out
