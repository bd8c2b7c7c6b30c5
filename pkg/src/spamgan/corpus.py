"""Vocabulary, fixed-length token sequences and labeled/unlabeled dataset splits."""

from __future__ import annotations

import csv
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

PAD, START, END, UNK = "<pad>", "<start>", "<end>", "<unk>"
RESERVED = (PAD, START, END, UNK)
PAD_ID, START_ID, END_ID, UNK_ID = 0, 1, 2, 3

NONSPAM, SPAM = 0, 1
CLASS_NAMES = ("nonspam", "spam")

LABELED, UNLABELED, GENERATED = "labeled-set", "unlabeled-set", "generated"

_TOKEN_RE = re.compile(r"<(?:start|end|unk|pad)>|\w+|[^\w\s]", re.UNICODE)
_LABEL_ALIASES = {
    "spam": SPAM,
    "deceptive": SPAM,
    "1": SPAM,
    "nonspam": NONSPAM,
    "non-spam": NONSPAM,
    "truthful": NONSPAM,
    "0": NONSPAM,
}


class CorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, then split on whitespace with punctuation marks as separate tokens."""
    return _TOKEN_RE.findall(text.lower())


def parse_label(value) -> int:
    key = str(value).strip().lower()
    if key not in _LABEL_ALIASES:
        raise CorpusError(f"unknown class label {value!r}")
    return _LABEL_ALIASES[key]


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[: len(RESERVED)]) != RESERVED:
            raise CorpusError("reserved tokens must occupy ids 0..3")
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise CorpusError("duplicate tokens in vocabulary")
        object.__setattr__(self, "index", index)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line for line in lines if line))


def build_vocabulary(texts: Iterable[str], target_size: int) -> Vocabulary:
    """Keep the ``target_size - 4`` most frequent words; ties go to the lexicographically smaller word."""
    if target_size < len(RESERVED) + 1:
        raise CorpusError("target_size must be at least 5")
    counts = Counter()
    for text in texts:
        counts.update(t for t in tokenize(text) if t not in RESERVED)
    if not counts:
        raise CorpusError("empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    words = [w for w, _ in ranked[: target_size - len(RESERVED)]]
    return Vocabulary(RESERVED + tuple(words))


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    mask: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_ids(cls, ids: Sequence[int]) -> "TokenSequence":
        ids = tuple(int(i) for i in ids)
        return cls(ids, tuple(i != PAD_ID for i in ids))

    def validate(self, length: Optional[int] = None) -> None:
        ids, mask = self.ids, self.mask
        if length is not None and len(ids) != length:
            raise CorpusError(f"sequence length {len(ids)} != {length}")
        if len(mask) != len(ids):
            raise CorpusError("mask length differs from ids length")
        if not ids or ids[0] != START_ID:
            raise CorpusError("sequence must begin with <start>")
        if ids.count(END_ID) > 1:
            raise CorpusError("more than one <end>")
        if END_ID in ids:
            end = ids.index(END_ID)
            if any(i != PAD_ID for i in ids[end + 1 :]):
                raise CorpusError("non-pad token after <end>")
            if PAD_ID in ids[:end]:
                raise CorpusError("<pad> before <end>")
        n_content = sum(mask)
        if any(mask[n_content:]) or not all(mask[:n_content]):
            raise CorpusError("mask is not a prefix of trues")
        if any(m == (i == PAD_ID) for i, m in zip(ids, mask)):
            raise CorpusError("mask disagrees with <pad> positions")
        if PAD_ID in ids and END_ID not in ids:
            raise CorpusError("padding without <end>")

    @property
    def n_content(self) -> int:
        return sum(self.mask)


def encode(text: str, vocab: Vocabulary, T: int) -> TokenSequence:
    if T < 3:
        raise CorpusError("T must be at least 3")
    body = [vocab.id_of(tok) for tok in tokenize(text)]
    ids = [START_ID] + body + [END_ID]
    # truncation keeps <start> and the first T-1 content tokens; <end> may be lost
    ids = ids[:T]
    ids += [PAD_ID] * (T - len(ids))
    return TokenSequence.from_ids(ids)


def decode(seq, vocab: Vocabulary, keep_unk: bool = True) -> str:
    ids = seq.ids if isinstance(seq, TokenSequence) else seq
    words = []
    for i in ids:
        i = int(i)
        if not 0 <= i < vocab.size:
            raise CorpusError(f"token id {i} outside vocabulary of size {vocab.size}")
        if i == UNK_ID:
            if keep_unk:
                words.append(UNK)
        elif i not in (PAD_ID, START_ID, END_ID):
            words.append(vocab.tokens[i])
    return " ".join(words)


def stack(seqs: Sequence[TokenSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Batch sequences into ``(ids, mask)`` arrays of shape ``(n, T)``."""
    ids = np.array([s.ids for s in seqs], dtype=np.int64)
    mask = np.array([s.mask for s in seqs], dtype=bool)
    return ids, mask


@dataclass(frozen=True)
class Example:
    sequence: TokenSequence
    label: Optional[int] = None
    source: str = LABELED
    text: Optional[str] = None

    def __post_init__(self):
        if self.source == LABELED and self.label is None:
            raise CorpusError("labeled example without label")
        if self.source == UNLABELED and self.label is not None:
            raise CorpusError("unlabeled example carries a label")
        if self.label is not None and self.label not in (NONSPAM, SPAM):
            raise CorpusError(f"label {self.label!r} not in {{0, 1}}")


@dataclass(frozen=True)
class DatasetBundle:
    labeled_train: tuple
    labeled_test: tuple
    unlabeled: tuple
    vocabulary: Optional[Vocabulary]
    split_seed: int
    test_fraction: float = 0.2
    labeled_fraction: float = 1.0
    unlabeled_fraction: float = 1.0

    def manifest(self) -> dict:
        def per_class(examples):
            return {CLASS_NAMES[c]: sum(e.label == c for e in examples) for c in (NONSPAM, SPAM)}

        return {
            "split_seed": self.split_seed,
            "test_fraction": self.test_fraction,
            "labeled_fraction": self.labeled_fraction,
            "unlabeled_fraction": self.unlabeled_fraction,
            "counts": {
                "labeled_train": len(self.labeled_train),
                "labeled_test": len(self.labeled_test),
                "unlabeled": len(self.unlabeled),
                "labeled_train_per_class": per_class(self.labeled_train),
                "labeled_test_per_class": per_class(self.labeled_test),
            },
            "vocab_size": self.vocabulary.size if self.vocabulary else None,
        }


def _allocate(counts: Sequence[int], total: int) -> list[int]:
    # largest-remainder apportionment of `total` across classes proportional to counts
    n = sum(counts)
    exact = [total * c / n for c in counts]
    alloc = [int(np.floor(x)) for x in exact]
    order = sorted(range(len(counts)), key=lambda i: (-(exact[i] - alloc[i]), i))
    for i in order[: total - sum(alloc)]:
        alloc[i] += 1
    return alloc


def _check_fraction(name: str, value: float) -> None:
    if not 0.0 < value <= 1.0:
        raise CorpusError(f"{name} must lie in (0, 1], got {value}")


def split_and_subsample(
    labeled: Sequence[Example],
    test_fraction: float = 0.2,
    labeled_fraction: float = 1.0,
    unlabeled: Sequence[Example] = (),
    unlabeled_fraction: float = 1.0,
    seed: int = 0,
    vocabulary: Optional[Vocabulary] = None,
) -> DatasetBundle:
    """Stratified test split first, then subsample the train side only.

    The test split depends only on ``(labeled, test_fraction, seed)`` so every
    labeled fraction shares one test set. ``unlabeled_fraction=0`` is allowed
    and drops the unlabeled pool entirely.
    """
    if not labeled:
        raise CorpusError("labeled set is empty")
    _check_fraction("test_fraction", test_fraction)
    _check_fraction("labeled_fraction", labeled_fraction)
    if unlabeled_fraction:
        _check_fraction("unlabeled_fraction", unlabeled_fraction)

    rng = np.random.default_rng(seed)
    by_class = [[e for e in labeled if e.label == c] for c in (NONSPAM, SPAM)]
    shuffled = [[group[i] for i in rng.permutation(len(group))] for group in by_class]
    counts = [len(g) for g in shuffled]
    n_test = _allocate(counts, int(round(test_fraction * sum(counts))))
    test = [e for g, k in zip(shuffled, n_test) for e in g[:k]]
    train_pool = [g[k:] for g, k in zip(shuffled, n_test)]

    pool_counts = [len(g) for g in train_pool]
    n_train = _allocate(pool_counts, int(round(labeled_fraction * sum(pool_counts))))
    train = [e for g, k in zip(train_pool, n_train) for e in g[:k]]
    if not train:
        raise CorpusError("fractions leave zero training examples")
    train = [train[i] for i in rng.permutation(len(train))]

    unl = list(unlabeled)
    n_unl = int(round(unlabeled_fraction * len(unl)))
    unl = [unl[i] for i in np.sort(rng.permutation(len(unl))[:n_unl])]

    return DatasetBundle(
        labeled_train=tuple(train),
        labeled_test=tuple(test),
        unlabeled=tuple(unl),
        vocabulary=vocabulary,
        split_seed=seed,
        test_fraction=test_fraction,
        labeled_fraction=labeled_fraction,
        unlabeled_fraction=unlabeled_fraction,
    )


def read_labeled_file(path, delimiter: Optional[str] = None) -> list[tuple[str, int]]:
    """Read ``(text, label)`` rows from a delimited file with a ``text,label`` header."""
    path = Path(path)
    if delimiter is None:
        delimiter = "\t" if path.suffix.lower() in (".tsv", ".tab") else ","
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if not reader.fieldnames or not {"text", "label"} <= set(reader.fieldnames):
            raise CorpusError(f"{path}: expected columns 'text' and 'label'")
        return [(row["text"], parse_label(row["label"])) for row in reader]


def read_unlabeled_file(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def make_examples(texts, labels, vocab: Vocabulary, T: int) -> list[Example]:
    if labels is None:
        return [Example(encode(t, vocab, T), None, UNLABELED, t) for t in texts]
    return [Example(encode(t, vocab, T), int(c), LABELED, t) for t, c in zip(texts, labels)]


def save_bundle(bundle: DatasetBundle, directory) -> None:
    """Write ``vocab.txt``, ``manifest.json`` and ``dataset.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if bundle.vocabulary is not None:
        bundle.vocabulary.save(directory / "vocab.txt")
    (directory / "manifest.json").write_text(
        json.dumps(bundle.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    def rows(examples):
        return [{"ids": list(e.sequence.ids), "label": e.label, "text": e.text} for e in examples]

    payload = {
        "labeled_train": rows(bundle.labeled_train),
        "labeled_test": rows(bundle.labeled_test),
        "unlabeled": rows(bundle.unlabeled),
        "split_seed": bundle.split_seed,
        "fractions": [bundle.test_fraction, bundle.labeled_fraction, bundle.unlabeled_fraction],
    }
    (directory / "dataset.json").write_text(json.dumps(payload), encoding="utf-8")


def load_bundle(directory) -> DatasetBundle:
    directory = Path(directory)
    vocab = Vocabulary.load(directory / "vocab.txt")
    payload = json.loads((directory / "dataset.json").read_text(encoding="utf-8"))

    def examples(rows, source):
        return tuple(
            Example(TokenSequence.from_ids(r["ids"]), r["label"], source, r.get("text"))
            for r in rows
        )

    test_f, lab_f, unl_f = payload["fractions"]
    return DatasetBundle(
        labeled_train=examples(payload["labeled_train"], LABELED),
        labeled_test=examples(payload["labeled_test"], LABELED),
        unlabeled=examples(payload["unlabeled"], UNLABELED),
        vocabulary=vocab,
        split_seed=payload["split_seed"],
        test_fraction=test_f,
        labeled_fraction=lab_f,
        unlabeled_fraction=unl_f,
    )


def load_corpus(labeled_path, unlabeled_path, vocab_size: int, T: int):
    """Read the labeled (and optional unlabeled) files, build the vocabulary over
    every text and encode both sets. Returns ``(labeled, unlabeled, vocabulary)``."""
    rows = read_labeled_file(labeled_path)
    if not rows:
        raise CorpusError(f"{labeled_path}: empty corpus")
    texts = [t for t, _ in rows]
    extra = read_unlabeled_file(unlabeled_path) if unlabeled_path else []
    vocab = build_vocabulary(texts + extra, vocab_size)
    labeled = make_examples(texts, [c for _, c in rows], vocab, T)
    return labeled, make_examples(extra, None, vocab, T), vocab
