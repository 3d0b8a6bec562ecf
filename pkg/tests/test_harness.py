import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dancer.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from dancer.corpus import PAD_ID, EncodedExample, Label, write_encoded
from dancer.errors import CheckpointError, ConfigError, SelectionError
from dancer.generator import init_policy
from dancer.harness import (AttackConfig, AttackRun, CollapseDetector, TrainingLog, derive_seed, detect_mode_collapse,
                            distinct_token_ratio, report, run_attack, select_low_confidence)
from dancer.harness.attack import BatchRecord, load_policy
from dancer.harness.config import parse_config_text
from dancer.oracle import Confidence

COLLAPSED = "! ! ! ) ) ) ) ) ) ) ) ) ) ) ) ) ) ) ) ) ) ) ) ) ) ) ) ) ) )".split()


class TableOracle:
    """Answers from a fixed p_spam table keyed by the example's first content id."""

    def __init__(self, p_spam):
        self.p_spam = p_spam
        self.query_count = 0

    def classify(self, ids):
        self.query_count += 1
        p = self.p_spam[ids[1]]
        return Confidence(p, 1.0 - p)


def scored_spam(scores):
    return [EncodedExample((2, i, 3), Label.SPAM) for i in range(len(scores))], TableOracle(list(scores))


# curriculum

def test_selects_171_of_1717_lowest():
    scores = np.random.default_rng(0).random(1717)
    examples, oracle = scored_spam(scores)
    chosen = select_low_confidence(examples, oracle, 0.10)
    assert len(chosen) == 171
    assert [ex.ids[1] for ex in chosen] == sorted(range(1717), key=lambda i: scores[i])[:171]
    assert oracle.query_count == 1717


def test_selection_small_cases():
    examples, oracle = scored_spam([0.99, 0.90, 0.50])
    assert [ex.ids[1] for ex in select_low_confidence(examples, oracle, 0.34)] == [2]
    examples, oracle = scored_spam([0.3, 0.1, 0.3, 0.1])
    chosen, scores = select_low_confidence(examples, oracle, 1.0, return_scores=True)
    assert [ex.ids[1] for ex in chosen] == [1, 3, 0, 2] and list(scores) == [0.1, 0.1, 0.3, 0.3]
    with pytest.raises(SelectionError):
        select_low_confidence([], oracle)
    with pytest.raises(SelectionError):
        select_low_confidence([EncodedExample((2, 0, 3), Label.HAM)], oracle)


# collapse

def test_collapse_ratio_examples():
    assert distinct_token_ratio(COLLAPSED) == pytest.approx(2 / 30)
    assert distinct_token_ratio([f"t{i}" for i in range(30)]) == 1.0
    assert distinct_token_ratio(["a", "b"] * 15) == pytest.approx(2 / 30)
    assert distinct_token_ratio([PAD_ID] * 10) == pytest.approx(1 / 10)
    assert distinct_token_ratio(["<SOS>", "x", "x", "<PAD>"]) == 0.5


def test_collapse_flags_within_window_and_sticks():
    detector = None
    flags = []
    for _ in range(5):
        report, detector = detect_mode_collapse([COLLAPSED] * 10, 0.2, 5, detector)
        flags.append(report.flagged)
    assert flags == [False] * 4 + [True] and report.first_flagged_batch == 4
    for _ in range(3):
        report, detector = detect_mode_collapse([[f"t{i}" for i in range(30)]] * 10, 0.2, 5, detector)
        assert report.flagged and report.first_flagged_batch == 4


def test_low_streak_must_be_consecutive():
    d = CollapseDetector(0.2, 3)
    for batch in ([COLLAPSED], [COLLAPSED], [["a", "b", "c"]], [COLLAPSED], [COLLAPSED]):
        d.update(batch)
    assert not d.flagged and d.consecutive_low == 2
    assert CollapseDetector.from_state(d.state()).state() == d.state()


@given(st.lists(st.lists(st.integers(0, 12), min_size=1, max_size=30), min_size=1, max_size=8))
def test_collapse_ratio_bounds(batch):
    report, _ = detect_mode_collapse(batch)
    assert all(0 < r <= 1 for r in report.per_sample_ratio)
    assert 0 < report.batch_mean_ratio[-1] <= 1


# config and seeds

def test_config_text_formats():
    flat = parse_config_text('# run\n[attack]\nlambda_adversarial = 0.8\ncurriculum = "low_confidence"\n'
                             "dims = [32, 64]\nhalt_on_collapse = false\ntarget = models/nb.ckpt\n")
    assert flat == {"lambda_adversarial": 0.8, "curriculum": "low_confidence", "dims": [32, 64],
                    "halt_on_collapse": False, "target": "models/nb.ckpt"}
    assert parse_config_text('{"epochs": 3}') == {"epochs": 3}
    with pytest.raises(ConfigError):
        parse_config_text("epochs 3")
    with pytest.raises(ConfigError):
        parse_config_text("{bad json")


def test_attack_config_validation():
    assert AttackConfig(lambda_adversarial=0.9).lambdas == pytest.approx((0.9, 0.1))
    assert AttackConfig(lambda_adversarial=0.9, lambda_similar=0.5).lambdas == (0.9, 0.5)
    for bad in ({"fraction": 0.0}, {"fraction": 1.5}, {"curriculum": "easy"}, {"lr": 0.0},
                {"lambda_adversarial": -0.1}, {"epochs": -1}):
        with pytest.raises(ConfigError):
            AttackConfig(**bad)
    with pytest.raises(ConfigError):
        AttackConfig.from_dict({"epochs": 1, "epoch": 2})
    with pytest.raises(ConfigError):
        AttackConfig(target="/nonexistent/target.ckpt", judge="x", attack_set="y").check_paths()
    assert AttackConfig.from_dict(AttackConfig(seed=5).to_dict()) == AttackConfig(seed=5)


def test_derived_seeds():
    assert derive_seed(7, "sampling", 1, 2) == derive_seed(7, "sampling", 1, 2)
    seeds = {derive_seed(7, p) for p in ("split", "init", "judge", "sampling", "probe")}
    assert len(seeds) == 5
    assert derive_seed(7, "sampling", 1, 2) != derive_seed(7, "sampling", 2, 1)
    assert derive_seed(7, "split") != derive_seed(8, "split")
    assert all(0 <= s < 2 ** 63 for s in seeds)
    with pytest.raises(ConfigError):
        derive_seed(7, "other")


# checkpoint container

def test_checkpoint_layout_is_readable_independently(tmp_path):
    tensors = {"w": np.arange(6, dtype=np.float64).reshape(2, 3), "ids": np.array([1, -2], dtype=np.int64),
               "half": np.array([0.5], dtype=np.float32), "flags": np.array([1, 0, 1], dtype=np.uint8)}
    save_checkpoint(tmp_path / "c.ckpt", tensors, {"epoch": 3, "note": "x"})
    raw = (tmp_path / "c.ckpt").read_bytes()
    assert raw[:8] == b"DSQ1\x00\x00\x00\x01" == MAGIC
    hlen = struct.unpack("<Q", raw[8:16])[0]
    assert json.loads(raw[16:16 + hlen]) == {"epoch": 3, "note": "x"}
    mlen = struct.unpack("<Q", raw[16 + hlen:24 + hlen])[0]
    manifest = json.loads(raw[24 + hlen:24 + hlen + mlen])
    base = 24 + hlen + mlen
    w = next(e for e in manifest if e["name"] == "w")
    assert w["dtype"] == "f64" and w["shape"] == [2, 3]
    assert np.array_equal(np.frombuffer(raw, "<f8", 6, base + w["offset"]).reshape(2, 3), tensors["w"])
    back, meta = load_checkpoint(tmp_path / "c.ckpt")
    assert list(back) == list(tensors) and meta["epoch"] == 3
    assert all(np.array_equal(back[k], tensors[k]) and back[k].dtype == tensors[k].dtype for k in tensors)
    assert not list(tmp_path.glob("*.tmp"))


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"NOTACKPT" + b"\0" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "short.ckpt").write_bytes(MAGIC + b"\x05")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.ckpt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "c.ckpt", {"z": np.array([1j])})


# training log

def batch(epoch, b, queries):
    return BatchRecord(epoch, b, 0.0, 0.0, 0.0, 0.0, queries, 1, 1.0, False)


def test_training_log_is_monotone():
    log = TrainingLog()
    log.append_batch(batch(1, 0, 10))
    log.append_batch(batch(1, 1, 12))
    with pytest.raises(ValueError):
        log.append_batch(batch(1, 1, 14))
    with pytest.raises(ValueError):
        log.append_batch(batch(2, 0, 11))
    assert TrainingLog.from_dict(json.loads(json.dumps(log.to_dict()))) == log


# attack runs

def attack_files(desk, tmp_path, **overrides):
    write_encoded(tmp_path / "attack.txt", desk.spam["validation"])
    write_encoded(tmp_path / "eval.txt", desk.spam["test"])
    values = dict(target=str(desk.root / "target.ckpt"), judge=str(desk.root / "judge.ckpt"),
                  attack_set=str(tmp_path / "attack.txt"), eval_set=str(tmp_path / "eval.txt"),
                  vocab=str(desk.root / "vocab.txt"), epochs=2, batch_size=2, lr=5e-3, seed=11, probe_size=3)
    values.update(overrides)
    return AttackConfig(**values)


def test_zero_epoch_run_is_a_no_op(desk, tmp_path):
    result = run_attack(attack_files(desk, tmp_path, epochs=0), tmp_path / "out")
    assert result.log.batches == [] and len(result.log.epochs) == 1
    init = init_policy(desk.judge)
    assert all(np.array_equal(result.policy.network.params[k].data, p.data) for k, p in init.network.params.items())


def test_run_writes_artifacts_and_accounts_queries(desk, tmp_path):
    result = run_attack(attack_files(desk, tmp_path), tmp_path / "out")
    out = tmp_path / "out"
    for name in ("training_log.tsv", "epochs.tsv", "training_log.json", "collapse_report.json",
                 "epoch_000.ckpt", "epoch_002.ckpt", "best.ckpt"):
        assert (out / name).exists(), name
    n = len(desk.spam["validation"])
    assert [b.episode_queries for b in result.log.batches if b.epoch == 1] == [2] * (n // 2) + [1] * (n % 2)
    final = result.log.epochs[-1].query_count
    assert final == result.log.total_recorded_queries == 2 * n + 3 * 3
    qs = [b.query_count for b in result.log.batches]
    assert qs == sorted(qs)
    policy = load_policy(out / "best.ckpt", desk.judge)
    assert policy.config == desk.config


def test_same_seed_same_log(desk, tmp_path):
    a = run_attack(attack_files(desk, tmp_path), tmp_path / "a").log.to_dict()
    b = run_attack(attack_files(desk, tmp_path), tmp_path / "b").log.to_dict()
    c = run_attack(attack_files(desk, tmp_path, seed=12), tmp_path / "c").log.to_dict()
    assert a == b and a != c


def test_resume_matches_uninterrupted(desk, tmp_path):
    config = attack_files(desk, tmp_path, epochs=3)
    full = run_attack(config, tmp_path / "full")
    resumed = run_attack(config, tmp_path / "resumed", resume_from=tmp_path / "full" / "epoch_001.ckpt")
    assert resumed.log.to_dict() == full.log.to_dict()
    assert all(np.array_equal(resumed.policy.network.params[k].data, p.data)
               for k, p in full.policy.network.params.items())


def test_hygiene_rejects_shared_examples(desk, tmp_path):
    config = attack_files(desk, tmp_path)
    config.eval_set = config.attack_set
    with pytest.raises(ConfigError):
        run_attack(config, tmp_path / "out")


def test_low_confidence_curriculum_run(desk, tmp_path):
    result = run_attack(attack_files(desk, tmp_path, curriculum="low_confidence", fraction=0.5, epochs=1),
                        tmp_path / "out")
    n = len(desk.spam["validation"])
    assert result.log.initial_queries == n
    assert sum(b.episode_queries for b in result.log.batches) == n // 2


def test_collapse_halts_run(desk, tmp_path):
    # a threshold of 1.0 treats every batch with any repeat as collapsed
    config = AttackConfig(epochs=5, batch_size=2, lr=1e-3, collapse_threshold=1.0, collapse_window=1,
                          collapse_patience=1, probe_size=2)
    run = AttackRun(init_policy(desk.judge), desk.oracle(), desk.judge, desk.spam["train"], config)
    result = run.run()
    assert result.halted and result.collapse.flagged
    assert len(result.log.batches) == result.collapse.first_flagged_batch + 2
    flags = [b.collapse_flagged for b in result.log.batches]
    assert flags == sorted(flags)


# report

class FixedPolicy:
    def __init__(self, fn):
        self.fn = fn

    def greedy_rewrites(self, batch_ids, max_len=None):
        return [self.fn(tuple(int(i) for i in row)) for row in batch_ids]


def test_identity_rewrites_report_no_change(desk, tmp_path):
    oracle = desk.oracle()
    spam = desk.spam["test"]
    result = report(None, oracle, desk.judge, spam, FixedPolicy(lambda x: x), vocab=desk.vocab,
                    out_dir=tmp_path, emit_csv=True)
    assert all(r["delta"] == 0.0 and r["similarity"] == pytest.approx(1.0, abs=1e-9) for r in result.rows)
    assert oracle.query_count == 2 * len(spam)
    assert sorted(result.files) == ["metrics.csv", "metrics.tsv", "samples.txt"]
    text = (tmp_path / "samples.txt").read_text()
    assert "Input (C_ham=" in text and "Generated adversarial output (C_ham=" in text
    header = (tmp_path / "metrics.tsv").read_text().splitlines()[0].split("\t")
    assert header == ["index", "q_minus_before", "q_minus_after", "delta", "similarity", "misclassified"]


def test_deleting_spam_only_token_raises_q_minus(desk):
    exclusive = {desk.vocab.encode(f"spamtok{i}") for i in range(10)}

    def delete(x):
        content = [t for t in x[1:-1] if t not in exclusive]
        return (x[0], *content, *[PAD_ID] * (len(x) - 2 - len(content)), x[-1])

    spam = [ex for ex in desk.spam["test"] if exclusive & set(ex.ids)]
    assert spam
    result = report(None, desk.oracle(), desk.judge, spam, FixedPolicy(delete))
    assert all(r["q_minus_after"] > r["q_minus_before"] for r in result.rows)


def test_attack_run_creates_its_output_directory(desk, tmp_path):
    config = AttackConfig(epochs=1, batch_size=4, lr=1e-3, probe_size=2)
    out = tmp_path / "nested" / "run"
    AttackRun(init_policy(desk.judge), desk.oracle(), desk.judge, desk.spam["train"][:4], config, out_dir=out).run()
    assert (out / "best.ckpt").exists() and (out / "epoch_001.ckpt").exists()
