"""Held-out evaluation of a trained policy: metrics table and readable samples."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..corpus import EOS_ID, PAD_ID, SOS_ID, Vocabulary
from ..errors import DataError
from ..generator import compute_rewards

METRIC_COLUMNS = ("index", "q_minus_before", "q_minus_after", "delta", "similarity", "misclassified")


@dataclass
class AttackReport:
    rows: list
    aggregates: dict
    samples: list = field(default_factory=list)
    files: list = field(default_factory=list)


def _text(ids, vocab: Vocabulary | None) -> str:
    content = [i for i in ids if i not in (SOS_ID, EOS_ID, PAD_ID)]
    if vocab is None:
        return " ".join(map(str, content))
    return " ".join(vocab.decode_ids(content))


def format_sample(original: str, rewrite: str, q_before: float, q_after: float) -> str:
    return (f"Input (C_ham={q_before:.3g}): {original}\n"
            f"Generated adversarial output (C_ham={q_after:.3g}): {rewrite}\n")


def report(log, oracle, judge, eval_set: Sequence, policy, lambdas=(0.5, 0.5), vocab: Vocabulary | None = None,
           out_dir=None, n_samples: int = 5, emit_csv: bool = False, batch: int = 100) -> AttackReport:
    """Greedy-rewrite every eval example and compare target confidence before/after.

    Costs two oracle queries per example. ``log`` (a TrainingLog or None)
    contributes run-level context to the aggregates only.
    """
    if not eval_set:
        raise DataError("report needs a non-empty eval set")
    lam_adv, lam_sim = lambdas
    ids = np.array([getattr(ex, "ids", ex) for ex in eval_set], dtype=np.int64)
    rewrites = []
    for start in range(0, len(ids), batch):
        rewrites.extend(policy.greedy_rewrites(ids[start:start + batch]))
    before = [oracle.classify(x).p_ham for x in ids]
    rewards = compute_rewards(ids, rewrites, oracle, judge, lam_adv, lam_sim)

    rows = []
    for i, (qb, r) in enumerate(zip(before, rewards)):
        rows.append({
            "index": i,
            "q_minus_before": qb,
            "q_minus_after": r.q_minus,
            "delta": r.q_minus - qb,
            "similarity": r.similarity,
            "misclassified": r.q_minus > 0.5,
        })
    qa = np.array([r["q_minus_after"] for r in rows])
    qb = np.array(before)
    aggregates = {
        "n": len(rows),
        "mean_q_minus_before": float(qb.mean()),
        "mean_q_minus_after": float(qa.mean()),
        "mean_delta": float((qa - qb).mean()),
        "fraction_increased": float(np.mean(qa > qb)),
        "mean_similarity": float(np.mean([r["similarity"] for r in rows])),
        "misclassification_rate": float(np.mean(qa > 0.5)),
    }
    if log is not None and getattr(log, "batches", None):
        aggregates["training_batches"] = len(log.batches)
        aggregates["collapse_flagged"] = bool(log.batches[-1].collapse_flagged)

    # most-improved examples first, mirroring hand-picked excerpts
    order = np.argsort(-(qa - qb), kind="stable")[:n_samples]
    samples = [format_sample(_text(ids[i], vocab), _text(rewrites[i], vocab), qb[i], qa[i]) for i in order]

    result = AttackReport(rows, aggregates, samples)
    if out_dir is not None:
        result.files = write_report(result, out_dir, emit_csv)
    return result


def write_report(result: AttackReport, out_dir, emit_csv: bool = False) -> list[str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.tsv", "w", encoding="utf-8") as fh:
        fh.write("\t".join(METRIC_COLUMNS) + "\n")
        for row in result.rows:
            fh.write("\t".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in METRIC_COLUMNS) + "\n")
        fh.write("\n# aggregate\n")
        for k, v in result.aggregates.items():
            fh.write(f"{k}\t{v}\n")
    with open(out_dir / "samples.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(result.samples))
    files = ["metrics.tsv", "samples.txt"]
    if emit_csv:
        with open(out_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
            writer.writeheader()
            writer.writerows(result.rows)
        files.append("metrics.csv")
    return files
