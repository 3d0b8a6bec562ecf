"""Two harness tools on their own: the low-confidence curriculum and the collapse detector.

    python demos/curriculum_and_collapse.py
"""

import numpy as np

from dancer.corpus import Label, preprocess
from dancer.harness import detect_mode_collapse, select_low_confidence
from dancer.oracle import OracleHandle, train_nb
from dancer.synthetic import overlapping_corpus

splits, vocab = preprocess(overlapping_corpus(300, seed=0), k_per_class=3000, length=12, seed=0)
oracle = OracleHandle(train_nb(splits.train, vocab.size))
spam = [ex for ex in splits.validation if ex.label is Label.SPAM]

chosen, scores = select_low_confidence(spam, oracle, 0.10, return_scores=True)
print(f"curriculum: {len(chosen)} of {len(spam)} validation spam, {oracle.query_count} queries")
print(f"p_spam of selected: {scores[0]:.3f} .. {scores[len(chosen) - 1]:.3f}; median of all {np.median(scores):.3f}")
for ex in chosen[:3]:
    print("  ", " ".join(vocab.decode_ids(ex.ids[1:-1])))

# a degenerate generator drifts toward repeated punctuation
print("\ncollapse detector, threshold 0.2, window 5")
rng = np.random.default_rng(0)
words = [vocab.decode(i) for i in range(4, vocab.size)]
detector = None
for b in range(10):
    repeat = min(1.0, b / 4)
    batch = []
    for _ in range(8):
        out = [w if rng.random() > repeat else ")" for w in rng.choice(words, 30)]
        batch.append(out)
    rep, detector = detect_mode_collapse(batch, 0.2, 5, detector)
    print(f"batch {b}  mean distinct ratio {rep.batch_mean_ratio[-1]:.3f}  flagged {rep.flagged}")
