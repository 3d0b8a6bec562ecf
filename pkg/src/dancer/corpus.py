"""Corpus ingestion, vocabulary restriction and fixed-length encoding.

Messages are lowercased, split on whitespace, restricted to the union of the
``k`` most frequent tokens of each class, and normalized to ``L`` content
positions bracketed by start/end markers::

    [SOS, t1, ..., tL, EOS]

Out-of-vocabulary tokens become ``<UNK>``; short messages are right-padded
with ``<PAD>``.
"""

from __future__ import annotations

import enum
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, IngestionError, SplitError

PAD, UNK, SOS, EOS = "<PAD>", "<UNK>", "<SOS>", "<EOS>"
SPECIAL_TOKENS = (PAD, UNK, SOS, EOS)
PAD_ID, UNK_ID, SOS_ID, EOS_ID = 0, 1, 2, 3


class Label(str, enum.Enum):
    SPAM = "spam"
    HAM = "ham"

    @classmethod
    def parse(cls, value) -> "Label":
        if isinstance(value, Label):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise DataError(f"unknown label {value!r}; expected 'spam' or 'ham'") from None


@dataclass(frozen=True)
class RawExample:
    text: str
    label: Label

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise DataError("example text is empty after trimming whitespace")
        object.__setattr__(self, "label", Label.parse(self.label))


@dataclass(frozen=True)
class EncodedExample:
    ids: tuple
    label: Label

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        object.__setattr__(self, "label", Label.parse(self.label))

    def __len__(self):
        return len(self.ids)


class Vocabulary:
    """Bidirectional token/id map. Ids 0-3 are PAD, UNK, SOS, EOS."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens = list(SPECIAL_TOKENS)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        for tok in tokens:
            if tok in self.index:
                raise DataError(f"duplicate or reserved token {tok!r}")
            if not tok or any(c.isspace() for c in tok):
                raise DataError(f"invalid vocabulary token {tok!r}")
            self.index[tok] = len(self.tokens)
            self.tokens.append(tok)

    pad_id, unk_id, sos_id, eos_id = PAD_ID, UNK_ID, SOS_ID, EOS_ID
    special_ids = frozenset((PAD_ID, UNK_ID, SOS_ID, EOS_ID))

    def __len__(self):
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def decode(self, token_id: int) -> str:
        return self.tokens[int(token_id)]

    def decode_ids(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[int(i)] for i in ids]

    def corpus_tokens(self) -> list[str]:
        return self.tokens[len(SPECIAL_TOKENS):]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:4]) != SPECIAL_TOKENS:
            raise DataError(f"{path}: first four lines must be {', '.join(SPECIAL_TOKENS)}")
        return cls(lines[4:])


def tokenize(text) -> list[str]:
    """Lowercase and split on any run of whitespace.

    ``bytes`` input is decoded as strict UTF-8.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IngestionError(f"invalid UTF-8 input: {exc}") from exc
    return text.lower().split()


def build_vocabulary(train: Sequence[RawExample], k_per_class: int = 3000) -> Vocabulary:
    """Union of the ``k_per_class`` most frequent tokens within each class.

    Frequency ties are broken lexicographically so the result does not
    depend on corpus order.
    """
    if k_per_class <= 0:
        raise ConfigError("k_per_class must be positive")
    if not train:
        raise DataError("cannot build a vocabulary from an empty training set")
    counts = {Label.SPAM: Counter(), Label.HAM: Counter()}
    for ex in train:
        counts[ex.label].update(tokenize(ex.text))
    missing = [lab.value for lab, c in counts.items() if not c]
    if missing:
        raise DataError(f"training set has no tokens for class(es): {', '.join(missing)}")

    chosen = set()
    for counter in counts.values():
        ranked = sorted(
            (tok for tok in counter if tok not in SPECIAL_TOKENS),
            key=lambda tok: (-counter[tok], tok),
        )
        chosen.update(ranked[:k_per_class])
    return Vocabulary(sorted(chosen))


def normalize_and_encode(tokens: Sequence[str], vocab: Vocabulary, length: int = 30) -> tuple:
    content = [vocab.encode(t) for t in tokens[:length]]
    content += [PAD_ID] * (length - len(content))
    return (SOS_ID, *content, EOS_ID)


def encode_example(example: RawExample, vocab: Vocabulary, length: int = 30) -> EncodedExample:
    return EncodedExample(normalize_and_encode(tokenize(example.text), vocab, length), example.label)


def decode(ids: Iterable[int], vocab: Vocabulary, strip_special: bool = False) -> list[str]:
    toks = vocab.decode_ids(ids)
    if strip_special:
        toks = [t for t in toks if t not in (PAD, SOS, EOS)]
    return toks


def check_encoded(example: EncodedExample, vocab_size: int, length: int) -> None:
    ids = example.ids
    if len(ids) != length + 2:
        raise DataError(f"encoded example has length {len(ids)}, expected {length + 2}")
    if ids[0] != SOS_ID or ids[-1] != EOS_ID:
        raise DataError("encoded example must start with SOS and end with EOS")
    if any(i < 0 or i >= vocab_size for i in ids):
        raise DataError("encoded example contains an id outside the vocabulary")


@dataclass
class DatasetSplits:
    train: list
    validation: list
    test: list
    split_seed: int
    class_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.class_counts:
            self.class_counts = {
                name: {lab.value: sum(1 for ex in part if ex.label is lab) for lab in Label}
                for name, part in self.parts().items()
            }

    def parts(self) -> dict:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def map(self, fn) -> "DatasetSplits":
        return DatasetSplits(
            [fn(ex) for ex in self.train],
            [fn(ex) for ex in self.validation],
            [fn(ex) for ex in self.test],
            self.split_seed,
        )


def split_dataset(examples: Sequence, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplits:
    """Seeded shuffle followed by a contiguous partition.

    Train receives ``floor(r_train * n)``, validation ``floor(r_val * n)``
    and test the remainder.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(examples)
    if n < 3:
        raise SplitError(f"need at least 3 examples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [examples[i] for i in order]
    # epsilon absorbs products like 0.57 * 100 = 56.99999999999999
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = min(math.floor(ratios[1] * n + 1e-9), n - n_train)
    return DatasetSplits(
        shuffled[:n_train],
        shuffled[n_train:n_train + n_val],
        shuffled[n_train + n_val:],
        seed,
    )


def _read_utf8(path: Path) -> str:
    try:
        return path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise IngestionError(f"{path}: invalid UTF-8 ({exc})") from exc


def load_directory(root) -> list[RawExample]:
    """Read ``root/spam/*.txt`` and ``root/ham/*.txt``, one message per file."""
    root = Path(root)
    examples = []
    for label in Label:
        sub = root / label.value
        if not sub.is_dir():
            raise IngestionError(f"{root}: missing '{label.value}/' subdirectory")
        for path in sorted(sub.rglob("*.txt")):
            text = _read_utf8(path)
            if text.strip():
                examples.append(RawExample(text, label))
    return examples


def load_tsv(path) -> list[RawExample]:
    """Read ``label<TAB>text`` lines; blank lines are skipped."""
    path = Path(path)
    examples = []
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, 1):
            try:
                line = raw.decode("utf-8").rstrip("\r\n")
            except UnicodeDecodeError as exc:
                raise IngestionError(f"{path}:{lineno}: invalid UTF-8 ({exc})") from exc
            if not line.strip():
                continue
            label, sep, text = line.partition("\t")
            if not sep or not text.strip():
                raise IngestionError(f"{path}:{lineno}: expected 'label<TAB>text'")
            try:
                examples.append(RawExample(text, Label.parse(label)))
            except DataError as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}") from exc
    return examples


def load_corpus(path, fmt: str) -> list[RawExample]:
    if fmt == "dirs":
        return load_directory(path)
    if fmt == "tsv":
        return load_tsv(path)
    raise ConfigError(f"unknown corpus format {fmt!r} (expected 'dirs' or 'tsv')")


def write_encoded(path, examples: Iterable[EncodedExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(f"{ex.label.value}\t{','.join(map(str, ex.ids))}\n")


def read_encoded(path) -> list[EncodedExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            label, sep, ids = line.partition("\t")
            if not sep:
                raise DataError(f"{path}:{lineno}: expected 'label<TAB>id,id,...'")
            try:
                out.append(EncodedExample(tuple(int(i) for i in ids.split(",")), label))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return out


def preprocess(examples: Sequence[RawExample], k_per_class=3000, length=30, seed=0, ratios=(0.8, 0.1, 0.1)):
    """Split, build the vocabulary on train only, then encode every split."""
    splits = split_dataset(examples, ratios, seed)
    vocab = build_vocabulary(splits.train, k_per_class)
    return splits.map(lambda ex: encode_example(ex, vocab, length)), vocab


def write_splits(out_dir, splits: DatasetSplits, vocab: Vocabulary) -> list[str]:
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, part in splits.parts().items():
        write_encoded(out_dir / f"{name}.txt", part)
        written.append(f"{name}.txt")
    vocab.save(out_dir / "vocab.txt")
    written.append("vocab.txt")
    return written
