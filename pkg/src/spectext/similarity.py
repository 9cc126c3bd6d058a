"""Structural similarity between graphs and distributional similarity
between corpora.

Graph similarity propagates node affinities through the random-walk-with-
restart operator [I + eps^2 D - eps A]^-1 of each graph, takes the rooted
Euclidean (Matusita) distance between the two affinity matrices, and maps
it to (0, 1] via 1 / (1 + d). Identical graphs score exactly 1; the score
decays toward 0 as structures diverge.
"""

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Vocabulary
from .exceptions import DataError
from .graph import Graph
from .spectral import laplacian


@dataclass(frozen=True)
class AffinityMatrix:
    matrix: np.ndarray
    epsilon: float


def rwr_affinity(g: Graph, epsilon: float = 0.1) -> AffinityMatrix:
    """All-pairs node affinities via the direct restart-walk inverse."""
    lap = laplacian(g, kind="rwr", epsilon=epsilon)
    return AffinityMatrix(matrix=lap.matrix, epsilon=epsilon)


def _union_vocabulary(v1: Vocabulary, v2: Vocabulary) -> Vocabulary:
    extra = [w for w in v2.words if w not in v1]
    return Vocabulary.from_words(list(v1.words) + extra)


def _embed(g: Graph, union: Vocabulary) -> np.ndarray:
    n = len(union)
    adjacency = np.zeros((n, n), dtype=np.float64)
    idx = np.asarray([union.index[w] for w in g.vocabulary.words], dtype=np.int64)
    adjacency[np.ix_(idx, idx)] = g.adjacency
    return adjacency


def graph_sim(g1: Graph, g2: Graph, epsilon: float = 0.1) -> float:
    """Affinity-based structural similarity in [0, 1]; 1 iff identical.

    Graphs over different vocabularies are first embedded into their union
    with zero padding, so the affinity matrices compare the same node set.
    Tiny negative affinities from inverse round-off are clamped at zero
    before the square root.
    """
    union = _union_vocabulary(g1.vocabulary, g2.vocabulary)
    a1 = _embed(g1, union)
    a2 = _embed(g2, union)
    if np.array_equal(a1, a2):
        return 1.0
    s1 = _padded_affinity(a1, union, epsilon)
    s2 = _padded_affinity(a2, union, epsilon)
    diff = np.sqrt(np.maximum(s1, 0.0)) - np.sqrt(np.maximum(s2, 0.0))
    distance = float(np.sqrt(np.sum(diff * diff)))
    return 1.0 / (1.0 + distance)


def _padded_affinity(adjacency: np.ndarray, union: Vocabulary,
                     epsilon: float) -> np.ndarray:
    g = Graph(vocabulary=union, adjacency=adjacency)
    return rwr_affinity(g, epsilon=epsilon).matrix


def aggregate_log_counts(corpus: Corpus, vocab: Vocabulary) -> np.ndarray:
    """Per-word ln(1 + total count) over the given vocabulary."""
    counts = np.zeros(len(vocab), dtype=np.float64)
    index = vocab.index
    for doc in corpus.documents:
        for tok in doc.tokens:
            pos = index.get(tok)
            if pos is not None:
                counts[pos] += 1.0
    return np.log1p(counts)


def corpus_corr(c1: Corpus, c2: Corpus) -> float:
    """Pearson correlation of the two corpora's log-scaled word counts.

    Both corpora are mapped onto the union of their vocabularies so the
    vectors are comparable entry by entry.
    """
    union = _union_vocabulary(c1.vocabulary, c2.vocabulary)
    v1 = aggregate_log_counts(c1, union)
    v2 = aggregate_log_counts(c2, union)
    if np.array_equal(v1, v2):
        if not v1.any() or np.all(v1 == v1[0]):
            raise DataError(
                "correlation undefined: a corpus has zero word-count variance"
            )
        return 1.0
    d1 = v1 - v1.mean()
    d2 = v2 - v2.mean()
    n1 = float(np.sqrt(np.sum(d1 * d1)))
    n2 = float(np.sqrt(np.sum(d2 * d2)))
    if n1 == 0.0 or n2 == 0.0:
        raise DataError("correlation undefined: a corpus has zero word-count variance")
    return float(np.dot(d1, d2) / (n1 * n2))
