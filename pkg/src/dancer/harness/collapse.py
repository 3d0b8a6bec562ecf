from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..corpus import SPECIAL_TOKENS, Vocabulary


def _is_special(tok) -> bool:
    if isinstance(tok, str):
        return tok in SPECIAL_TOKENS
    return int(tok) in Vocabulary.special_ids


def distinct_token_ratio(tokens) -> float:
    """Distinct non-special tokens over total non-special tokens.

    An output made only of special tokens counts as one symbol repeated
    ``len(tokens)`` times.
    """
    tokens = list(tokens)
    content = [t if isinstance(t, str) else int(t) for t in tokens if not _is_special(t)]
    if not content:
        return 1.0 / max(len(tokens), 1)
    return len(set(content)) / len(content)


@dataclass
class CollapseReport:
    per_sample_ratio: list
    batch_mean_ratio: list
    flagged: bool
    first_flagged_batch: int | None
    consecutive_low: int


@dataclass
class CollapseDetector:
    """Sticky mode-collapse flag over a stream of output batches.

    The flag is raised once the batch-mean distinct-token ratio has stayed
    below ``threshold`` for ``window`` consecutive batches, and never cleared.
    """

    threshold: float = 0.2
    window: int = 5
    batch_means: list = field(default_factory=list)
    consecutive_low: int = 0
    flagged: bool = False
    first_flagged_batch: int | None = None

    def update(self, sample_batch) -> CollapseReport:
        ratios = [distinct_token_ratio(s) for s in sample_batch]
        if not ratios:
            raise ValueError("collapse detection needs a non-empty batch")
        mean = float(np.mean(ratios))
        self.batch_means.append(mean)
        self.consecutive_low = self.consecutive_low + 1 if mean < self.threshold else 0
        if not self.flagged and self.consecutive_low >= self.window:
            self.flagged = True
            self.first_flagged_batch = len(self.batch_means) - 1
        return self.report(ratios)

    def report(self, per_sample=()) -> CollapseReport:
        return CollapseReport(list(per_sample), list(self.batch_means), self.flagged,
                              self.first_flagged_batch, self.consecutive_low)

    def state(self) -> dict:
        return {
            "threshold": self.threshold,
            "window": self.window,
            "batch_means": list(self.batch_means),
            "consecutive_low": self.consecutive_low,
            "flagged": self.flagged,
            "first_flagged_batch": self.first_flagged_batch,
        }

    @classmethod
    def from_state(cls, state: dict) -> "CollapseDetector":
        return cls(**state)


def detect_mode_collapse(sample_batch, threshold=0.2, window=5, detector: CollapseDetector | None = None):
    """Feed one batch of outputs (token strings or ids) to ``detector``.

    Returns ``(report, detector)``; pass the detector back in for the next
    batch of the same run.
    """
    detector = detector or CollapseDetector(threshold, window)
    return detector.update(sample_batch), detector
