"""Deterministic synthetic text corpora for experiments and tests.

The generator builds a two-class topic corpus from a procedurally derived
word inventory. Each class owns a set of class-typical words plus two
"dialects" (latent sub-vocabularies); documents mix dialect, class and
corpus-wide common words. The dialect axis is what makes low-overlap
synthetic pairs genuinely dissimilar: splitting documents along their
dominant variance direction separates dialects, not just random halves.
"""

from itertools import product

import numpy as np

from .corpus import Corpus, Document

_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"


def _word_inventory(count: int) -> list[str]:
    """Deterministic pronounceable pseudo-words, all distinct."""
    syllables = [c + v for c, v in product(_CONSONANTS, _VOWELS)]
    combos = [a + b for a, b in product(syllables, syllables)]
    stride = 2893  # coprime with len(combos); spreads picks over the space
    if count > len(combos):
        raise ValueError(f"inventory supports at most {len(combos)} words")
    return [combos[(i * stride + 17) % len(combos)] for i in range(count)]


def _ranked_distribution(size: int) -> np.ndarray:
    weights = 1.0 / (np.arange(size) + 3.0)
    return weights / weights.sum()


def two_topic_corpus(n_docs: int = 2400, seed: int = 13,
                     doc_length: tuple[int, int] = (18, 36),
                     common_words: int = 100, class_words: int = 50,
                     dialect_words: int = 70,
                     common_weight: float = 0.40, class_weight: float = 0.15,
                     label_noise: float = 0.0, max_vocab: int = 500,
                     signal_mode: str = "log-normalized") -> Corpus:
    """Sample a balanced two-class corpus with latent per-class dialects.

    Documents cycle through the four (class, dialect) cells, so class and
    dialect counts stay balanced for any n_docs. Token draws follow a
    mildly skewed rank distribution inside each word group. With
    label_noise > 0, each label flips with that probability, putting a
    ceiling on attainable accuracy.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(71,)))
    total_words = common_words + 2 * class_words + 4 * dialect_words
    inventory = _word_inventory(total_words)
    cursor = 0

    def take(k):
        nonlocal cursor
        chunk = inventory[cursor:cursor + k]
        cursor += k
        return chunk

    common = take(common_words)
    per_class = [take(class_words) for _ in range(2)]
    per_dialect = [[take(dialect_words) for _ in range(2)] for _ in range(2)]

    dialect_weight = 1.0 - common_weight - class_weight
    if dialect_weight <= 0.0:
        raise ValueError("common_weight + class_weight must be < 1")

    # One token distribution over the full inventory per (class, dialect) cell.
    index = {w: i for i, w in enumerate(inventory)}
    cell_dists = {}
    for cls in range(2):
        for dia in range(2):
            dist = np.zeros(total_words)
            for words, weight in ((common, common_weight),
                                  (per_class[cls], class_weight),
                                  (per_dialect[cls][dia], dialect_weight)):
                ranked = _ranked_distribution(len(words)) * weight
                for w, p in zip(words, ranked):
                    dist[index[w]] += p
            cell_dists[(cls, dia)] = dist / dist.sum()

    docs = []
    lo, hi = doc_length
    for i in range(n_docs):
        cls = i % 2
        dia = (i // 2) % 2
        length = int(rng.integers(lo, hi + 1))
        tokens = rng.choice(total_words, size=length, p=cell_dists[(cls, dia)])
        label = cls
        if label_noise > 0.0 and rng.random() < label_noise:
            label = 1 - label
        docs.append(Document(tokens=tuple(inventory[t] for t in tokens),
                             label=label))
    return Corpus.from_documents(docs, max_vocab=max_vocab,
                                 signal_mode=signal_mode)


def block_toy_corpus(docs_per_class: int = 40, seed: int = 5) -> Corpus:
    """Tiny two-class corpus whose word groups are class-exclusive.

    Words a0..a5 appear only in class-0 documents and b0..b5 only in
    class-1 documents, which makes the corpus linearly separable and gives
    supervised graph estimation an unambiguous block structure to find.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(72,)))
    groups = [[f"a{i}" for i in range(6)], [f"b{i}" for i in range(6)]]
    docs = []
    for cls in range(2):
        words = groups[cls]
        for _ in range(docs_per_class):
            length = int(rng.integers(6, 14))
            tokens = rng.choice(len(words), size=length)
            docs.append(Document(tokens=tuple(words[t] for t in tokens),
                                 label=cls))
    return Corpus.from_documents(docs, max_vocab=50, signal_mode="log-normalized")
