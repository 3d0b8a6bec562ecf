import io
import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dancer.corpus import EncodedExample, Label
from dancer.errors import ConfigError, DataError, QueryError
from dancer.oracle import NBModel, OracleHandle, auc_roc, evaluate, train_nb

# ids for the hand-checked toy corpus: buy, pills, now, meeting
BUY, PILLS, NOW, MEETING = range(4)
TOY = [
    EncodedExample((BUY, PILLS), Label.SPAM),
    EncodedExample((BUY, NOW), Label.SPAM),
    EncodedExample((MEETING, NOW), Label.HAM),
]


def brute_force_posterior(docs, vocab_size, query, alpha=1):
    """Exact rational posterior P(spam | query) by direct counting."""
    joint = {}
    for label in Label:
        class_docs = [d for d, lab in docs if lab is label]
        tokens = [t for d in class_docs for t in d]
        p = Fraction(len(class_docs), len(docs))
        for t in query:
            p *= Fraction(tokens.count(t) + alpha, len(tokens) + alpha * vocab_size)
        joint[label] = p
    return joint[Label.SPAM] / (joint[Label.SPAM] + joint[Label.HAM])


def test_toy_likelihoods_and_prior():
    m = train_nb(TOY, vocab_size=4)
    assert np.exp(m.log_likelihood[0, BUY]) == pytest.approx(3 / 8, abs=1e-15)
    assert np.exp(m.log_likelihood[1, NOW]) == pytest.approx(2 / 6, abs=1e-15)
    assert np.exp(m.log_prior[0]) == pytest.approx(2 / 3, abs=1e-15)


def test_toy_posterior():
    conf = OracleHandle(train_nb(TOY, 4)).classify([BUY, PILLS])
    expected = (2 / 3 * 3 / 8 * 2 / 8) / (2 / 3 * 3 / 8 * 2 / 8 + 1 / 3 * 1 / 6 * 1 / 6)
    assert expected == pytest.approx(0.8709677419354839)
    assert conf.p_spam == pytest.approx(expected, abs=1e-12)
    assert conf.p_spam + conf.p_ham == pytest.approx(1.0, abs=1e-12)


def random_toy_corpus(rng):
    vocab = int(rng.integers(2, 7))
    n_docs = int(rng.integers(2, 6))
    labels = [Label.SPAM, Label.HAM] + [Label(rng.choice(["spam", "ham"])) for _ in range(n_docs - 2)]
    docs = [(tuple(int(t) for t in rng.integers(0, vocab, size=rng.integers(1, 5))), lab) for lab in labels]
    return docs, vocab


def test_matches_brute_force_on_random_corpora():
    rng = np.random.default_rng(2024)
    for _ in range(25):
        docs, vocab = random_toy_corpus(rng)
        handle = OracleHandle(train_nb([EncodedExample(d, lab) for d, lab in docs], vocab))
        for _ in range(4):
            query = tuple(int(t) for t in rng.integers(0, vocab, size=rng.integers(0, 6)))
            assert handle.classify(query).p_spam == pytest.approx(float(brute_force_posterior(docs, vocab, query)),
                                                                  abs=1e-12)


def test_symmetric_corpus():
    docs = [EncodedExample((0, 0, 1), "spam"), EncodedExample((2, 2, 3), "ham")]
    m = train_nb(docs, 4)
    assert m.log_prior[0] == m.log_prior[1]
    assert OracleHandle(m).classify([0, 2]).p_spam == pytest.approx(0.5, abs=1e-12)


def test_model_normalization_and_errors():
    m = train_nb(TOY, 4, alpha=0.5)
    assert np.exp(m.log_prior).sum() == pytest.approx(1, abs=1e-12)
    assert np.allclose(np.exp(m.log_likelihood).sum(axis=1), 1, atol=1e-9)
    with pytest.raises(DataError):
        train_nb(TOY[:2], 4)
    with pytest.raises(ConfigError):
        train_nb(TOY, 4, alpha=0)
    with pytest.raises(ValueError):
        m.log_likelihood[0, 0] = 0.0


def test_query_counting_and_log():
    log = io.StringIO()
    handle = OracleHandle(train_nb(TOY, 4), query_log=log)
    handle.classify([BUY])
    handle.classify([NOW, MEETING])
    with pytest.raises(QueryError):
        handle.classify([7])
    assert handle.query_count == 3
    lines = log.getvalue().splitlines()
    assert [l.split("\t")[0] for l in lines] == ["1", "2"]
    assert float(lines[0].split("\t")[1]) == handle.classify([BUY]).p_ham


def test_handle_does_not_expose_model():
    handle = OracleHandle(train_nb(TOY, 4))
    public = [a for a in dir(handle) if not a.startswith("_")]
    assert set(public) == {"classify", "query_count", "query_log", "reset_query_count", "temperature"}
    assert not any(isinstance(getattr(handle, a), NBModel) for a in public)
    assert "log_likelihood" not in repr(handle)


def test_tiny_confidences_keep_precision():
    m = train_nb(TOY, 4)
    conf = OracleHandle(m).classify([BUY, PILLS] * 60)
    d = np.subtract(*m.joint_log_scores([BUY, PILLS] * 60))
    assert conf.p_ham == pytest.approx(np.exp(-d) / (1 + np.exp(-d)), rel=1e-12)
    assert 0 < conf.p_ham < 1e-20


def test_temperature_flattens():
    m = train_nb(TOY, 4)
    hot = OracleHandle(m, temperature=4.0).classify([BUY, PILLS])
    cold = OracleHandle(m).classify([BUY, PILLS])
    assert 0.5 < hot.p_spam < cold.p_spam


@settings(max_examples=50)
@given(st.lists(st.integers(0, 3), max_size=10), st.randoms(use_true_random=False))
def test_permutation_invariance(ids, rand):
    handle = OracleHandle(train_nb(TOY, 4))
    shuffled = list(ids)
    rand.shuffle(shuffled)
    assert handle.classify(shuffled).p_spam == pytest.approx(handle.classify(ids).p_spam, abs=1e-12)


@settings(max_examples=50)
@given(st.lists(st.integers(0, 3), max_size=10))
def test_spam_leaning_token_raises_p_spam(ids):
    m = train_nb(TOY, 4)
    handle = OracleHandle(m)
    leaning = [t for t in range(4) if m.log_likelihood[0, t] > m.log_likelihood[1, t]]
    for t in leaning:
        before = handle.classify(ids).p_spam
        after = handle.classify(ids + [t]).p_spam
        # saturated posteriors cannot move in float64
        assert after > before or before == 1.0


def test_auc_examples():
    assert auc_roc([0.9, 0.8, 0.3], [True, True, False]) == 1.0
    assert auc_roc([0.4, 0.4, 0.4, 0.4], [True, False, True, False]) == 0.5
    with pytest.raises(DataError):
        auc_roc([0.1, 0.2], [True, True])


def test_auc_matches_pair_counting():
    rng = np.random.default_rng(5)
    for _ in range(10):
        scores = rng.integers(0, 5, size=30).astype(float)
        pos = rng.random(30) < 0.5
        pairs = [(1.0 if a > b else 0.5 if a == b else 0.0)
                 for a, b in itertools.product(scores[pos], scores[~pos])]
        assert auc_roc(scores, pos) == pytest.approx(np.mean(pairs), abs=1e-12)


def test_evaluate_and_checkpoint_roundtrip(tmp_path):
    m = train_nb(TOY, 4)
    metrics = evaluate(m, TOY)
    assert metrics == {"accuracy": 1.0, "auc_roc": 1.0, "n": 3}
    m.save(tmp_path / "nb.ckpt")
    back = NBModel.load(tmp_path / "nb.ckpt")
    assert np.array_equal(back.log_likelihood, m.log_likelihood) and back.alpha == 1.0
