import types

import pytest

from dancer.corpus import Label, preprocess, write_splits
from dancer.judge import pretrain_judge
from dancer.nncore import EncoderDecoderConfig
from dancer.oracle import OracleHandle, train_nb
from dancer.synthetic import planted_corpus


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """A small but complete pipeline: split files, target and judge checkpoints."""
    root = tmp_path_factory.mktemp("desk")
    splits, vocab = preprocess(planted_corpus(40, seed=3), k_per_class=50, length=8, seed=0)
    write_splits(root, splits, vocab)
    target = train_nb(splits.train, vocab.size)
    target.save(root / "target.ckpt")
    config = EncoderDecoderConfig(vocab_size=vocab.size, embed_dim=8, hidden_dim=8, max_len=8)
    judge = pretrain_judge(splits.train, config, epochs=3, lr=0.01, batch=16, seed=0)
    judge.save(root / "judge.ckpt")
    spam = {name: [ex for ex in part if ex.label is Label.SPAM] for name, part in splits.parts().items()}
    return types.SimpleNamespace(root=root, splits=splits, vocab=vocab, target=target, judge=judge,
                                 config=config, spam=spam, oracle=lambda: OracleHandle(target))
