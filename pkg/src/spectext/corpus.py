"""Labeled text corpora as signals over a word vocabulary.

Documents are normalized token sequences with an integer class label.
A Vocabulary fixes the node order used everywhere downstream: position
in the word list == row index in graphs, Laplacians and signals.
"""

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .exceptions import DataError
from .fileio import atomic_write_text

logger = logging.getLogger(__name__)

SignalMode = Literal["raw-count", "log-normalized"]

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def tokenize(raw_text: str) -> list[str]:
    """Lowercase, split on runs of non-alphanumeric characters, drop empties."""
    return [t for t in _TOKEN_SPLIT.split(raw_text.lower()) if t]


@dataclass(frozen=True)
class Document:
    tokens: tuple[str, ...]
    label: int

    def __post_init__(self):
        if not self.tokens:
            raise DataError("document has no tokens after normalization")
        if self.label < 0:
            raise DataError(f"negative class label {self.label}")

    @classmethod
    def from_text(cls, text: str, label: int) -> "Document":
        return cls(tokens=tuple(tokenize(text)), label=label)


@dataclass(frozen=True)
class Vocabulary:
    """Ordered list of unique words; order defines the graph node order."""

    words: tuple[str, ...]
    index: dict[str, int] = field(compare=False)

    @classmethod
    def from_words(cls, words) -> "Vocabulary":
        words = tuple(words)
        index = {w: i for i, w in enumerate(words)}
        if len(index) != len(words):
            raise DataError("vocabulary contains duplicate words")
        return cls(words=words, index=index)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index


def build_vocabulary(docs: list[Document], max_size: int) -> Vocabulary:
    """The max_size most frequent tokens, by descending count then lexicographic."""
    if not docs:
        raise DataError("cannot build a vocabulary from zero documents")
    if max_size < 1:
        raise DataError(f"max_size must be positive, got {max_size}")
    counts = Counter()
    for doc in docs:
        counts.update(doc.tokens)
    if not counts:
        raise DataError("no distinct tokens in corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary.from_words(w for w, _ in ranked[:max_size])


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    vocabulary: Vocabulary
    num_classes: int
    signal_mode: SignalMode = "log-normalized"

    def __post_init__(self):
        labels = {d.label for d in self.documents}
        if not labels:
            raise DataError("corpus has no documents")
        if max(labels) >= self.num_classes:
            raise DataError("document label outside [0, num_classes)")
        missing = set(range(self.num_classes)) - labels
        if missing:
            raise DataError(f"classes {sorted(missing)} have no documents")

    @classmethod
    def from_documents(cls, docs, max_vocab: int = 1000,
                       signal_mode: SignalMode = "log-normalized") -> "Corpus":
        docs = tuple(docs)
        vocab = build_vocabulary(list(docs), max_vocab)
        num_classes = max(d.label for d in docs) + 1
        return cls(documents=docs, vocabulary=vocab, num_classes=num_classes,
                   signal_mode=signal_mode)

    def class_counts(self) -> np.ndarray:
        counts = np.zeros(self.num_classes, dtype=np.int64)
        for d in self.documents:
            counts[d.label] += 1
        return counts


def to_signal(doc: Document, vocab: Vocabulary, mode: SignalMode) -> np.ndarray:
    """Bag-of-words vector over the vocabulary; out-of-vocabulary tokens ignored."""
    if len(vocab) == 0:
        raise DataError("empty vocabulary")
    counts = np.zeros(len(vocab), dtype=np.float64)
    index = vocab.index
    for tok in doc.tokens:
        pos = index.get(tok)
        if pos is not None:
            counts[pos] += 1.0
    if mode == "raw-count":
        return counts
    if mode == "log-normalized":
        return np.log1p(counts)
    raise DataError(f"unknown signal mode {mode!r}")


def signal_matrix(corpus: Corpus, vocab: Vocabulary, mode: SignalMode | None = None,
                  drop_empty: bool = False):
    """Stack document signals into an (n_docs, |V|) matrix plus a label vector.

    With drop_empty, documents that are entirely out-of-vocabulary (zero
    signal) are removed and counted in the log; zero rows carry no gradient
    and silently skew class balance if kept in training sets.
    Returns (signals, labels, kept_indices).
    """
    if mode is None:
        mode = corpus.signal_mode
    rows = [to_signal(d, vocab, mode) for d in corpus.documents]
    X = np.asarray(rows, dtype=np.float64)
    y = np.asarray([d.label for d in corpus.documents], dtype=np.int64)
    kept = np.arange(len(corpus.documents))
    if drop_empty:
        nonzero = X.any(axis=1)
        dropped = int((~nonzero).sum())
        if dropped:
            logger.warning("dropped %d all-out-of-vocabulary documents", dropped)
        X, y, kept = X[nonzero], y[nonzero], kept[nonzero]
    return X, y, kept


def with_vocabulary(corpus: Corpus, vocab: Vocabulary) -> Corpus:
    """The same documents viewed over a different (e.g. union) vocabulary."""
    return Corpus(documents=corpus.documents, vocabulary=vocab,
                  num_classes=corpus.num_classes, signal_mode=corpus.signal_mode)


def stratified_holdout(labels: np.ndarray, fraction: float, rng):
    """Deterministic per-class holdout; returns (main_idx, held_idx)."""
    main, held = [], []
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        idx = idx[rng.permutation(len(idx))]
        take = int(round(fraction * len(idx)))
        held.extend(idx[:take])
        main.extend(idx[take:])
    return (np.sort(np.asarray(main, dtype=np.int64)),
            np.sort(np.asarray(held, dtype=np.int64)))


def _principal_axis_scores(X: np.ndarray) -> np.ndarray:
    """Projection of each row onto the dominant variance axis of X.

    Power iteration with a fixed start vector keeps the result bit-stable
    across runs; the sign of the axis is pinned by the largest component.
    """
    centered = X - X.mean(axis=0, keepdims=True)
    n_features = X.shape[1]
    v = np.ones(n_features) + 1e-3 * np.arange(n_features) / max(1, n_features)
    v /= np.linalg.norm(v)
    for _ in range(60):
        w = centered.T @ (centered @ v)
        norm = np.linalg.norm(w)
        if norm < 1e-12:
            break
        v = w / norm
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return centered @ v


def synthesize_pair(base: Corpus, overlap: float, seed: int):
    """Sample two corpora from base that share a fraction `overlap` of documents.

    Per class, a seeded shuffle sets aside round(overlap * n) documents as a
    pool common to both corpora. The remaining private documents are split
    along their dominant variance axis, so the two halves emphasize different
    regions of the base corpus: low overlap therefore yields structurally
    dissimilar pairs, not just two more samples of the same distribution.
    """
    if not 0.0 <= overlap <= 1.0:
        raise DataError(f"overlap must lie in [0, 1], got {overlap}")
    if base.num_classes < 2:
        raise DataError("base corpus needs at least 2 classes")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))

    docs_a: list[Document] = []
    docs_b: list[Document] = []
    for cls in range(base.num_classes):
        class_docs = [d for d in base.documents if d.label == cls]
        order = rng.permutation(len(class_docs))
        shared_count = int(round(overlap * len(class_docs)))
        shared = [class_docs[i] for i in order[:shared_count]]
        private = [class_docs[i] for i in order[shared_count:]]
        if shared_count == 0 and len(private) < 2:
            raise DataError(
                f"class {cls}: overlap {overlap} leaves too few documents to "
                f"populate both corpora"
            )
        if private:
            counts = np.asarray(
                [to_signal(d, base.vocabulary, "log-normalized") for d in private]
            )
            scores = _principal_axis_scores(counts)
            ranks = np.argsort(scores, kind="stable")
            half = len(private) // 2
            side_a = [private[i] for i in ranks[:half]]
            side_b = [private[i] for i in ranks[half:]]
        else:
            side_a, side_b = [], []
        docs_a.extend(shared + side_a)
        docs_b.extend(shared + side_b)

    max_vocab = len(base.vocabulary)
    corpus_a = Corpus.from_documents(docs_a, max_vocab=max_vocab,
                                     signal_mode=base.signal_mode)
    corpus_b = Corpus.from_documents(docs_b, max_vocab=max_vocab,
                                     signal_mode=base.signal_mode)
    return corpus_a, corpus_b


def load_corpus_jsonl(path: str, max_vocab: int = 1000,
                      signal_mode: SignalMode = "log-normalized") -> Corpus:
    """Read one JSON record per line with fields {"label": int, "text": str}."""
    docs = []
    skipped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                label = int(record["label"])
                text = record["text"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad corpus record: {exc}") from exc
            tokens = tuple(tokenize(text))
            if not tokens:
                skipped += 1
                continue
            docs.append(Document(tokens=tokens, label=label))
    if skipped:
        logger.warning("%s: skipped %d documents with no tokens", path, skipped)
    if not docs:
        raise DataError(f"{path}: no usable documents")
    return Corpus.from_documents(docs, max_vocab=max_vocab, signal_mode=signal_mode)


def save_corpus_jsonl(corpus: Corpus, path: str) -> None:
    lines = [
        json.dumps({"label": d.label, "text": " ".join(d.tokens)}, sort_keys=True)
        for d in corpus.documents
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_vocabulary(path: str) -> Vocabulary:
    """Plain text, one word per line; line order is the node order."""
    with open(path, "r", encoding="utf-8") as fh:
        words = [line.rstrip("\n") for line in fh if line.strip()]
    return Vocabulary.from_words(words)


def save_vocabulary(vocab: Vocabulary, path: str) -> None:
    atomic_write_text(path, "\n".join(vocab.words) + "\n")
