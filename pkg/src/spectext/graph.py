"""Weighted undirected word graphs built from corpora.

Two estimators are provided: co-occurrence counting within a sliding
window over each document, and a supervised estimator that trains a
small fully connected classifier and turns distances between its
first-layer weight columns into Gaussian edge weights.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Vocabulary, build_vocabulary, signal_matrix
from .exceptions import DataError, NumericError
from .fileio import atomic_write_text

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Graph:
    """Symmetric non-negative adjacency over a vocabulary; zero diagonal."""

    vocabulary: Vocabulary
    adjacency: np.ndarray

    def __post_init__(self):
        n = len(self.vocabulary)
        a = self.adjacency
        if a.shape != (n, n):
            raise DataError(f"adjacency shape {a.shape} != vocabulary size {n}")
        if not np.allclose(a, a.T):
            raise DataError("adjacency is not symmetric")
        if np.any(np.diag(a) != 0.0):
            raise DataError("adjacency has nonzero diagonal entries")
        if np.any(a < 0.0):
            raise DataError("adjacency has negative weights")

    @property
    def num_nodes(self) -> int:
        return len(self.vocabulary)

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency, k=1)))

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)


def cooccurrence_graph(corpus: Corpus, window: int = 5,
                       normalize: bool = False) -> Graph:
    """Edge weight = number of within-window co-occurrences of two words.

    Every ordered token pair at distance < window contributes one count to
    the symmetric entry for its word pair; pairs of identical words are
    skipped so the diagonal stays zero. With normalize, counts are rescaled
    by the pair's degrees, (D^-1 A + A D^-1) / 2, keeping symmetry.
    """
    if window < 1:
        raise DataError(f"window must be >= 1, got {window}")
    index = corpus.vocabulary.index
    n = len(corpus.vocabulary)
    adjacency = np.zeros((n, n), dtype=np.float64)
    for doc in corpus.documents:
        positions = [index.get(t) for t in doc.tokens]
        for t, i in enumerate(positions):
            if i is None:
                continue
            for off in range(1, window):
                if t + off >= len(positions):
                    break
                j = positions[t + off]
                if j is None or j == i:
                    continue
                adjacency[i, j] += 1.0
                adjacency[j, i] += 1.0
    if not adjacency.any():
        raise DataError("co-occurrence estimation produced zero edges")
    if normalize:
        degree = adjacency.sum(axis=1)
        inv = np.divide(1.0, degree, out=np.zeros_like(degree), where=degree > 0)
        adjacency = (inv[:, None] * adjacency + adjacency * inv[None, :]) / 2.0
    return Graph(vocabulary=corpus.vocabulary, adjacency=adjacency)


def _train_softmax_mlp(X, y, num_classes, hidden_units, epochs, seed, lr=0.05):
    """Full-batch AdaGrad training of a one-hidden-layer softmax classifier.

    Returns the trained first-layer weight matrix, shape (hidden, features).
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(21,)))
    n, d = X.shape
    w1 = rng.uniform(-1.0, 1.0, size=(hidden_units, d)) / np.sqrt(d)
    b1 = np.zeros(hidden_units)
    w2 = rng.uniform(-1.0, 1.0, size=(num_classes, hidden_units)) / np.sqrt(hidden_units)
    b2 = np.zeros(num_classes)
    params = [w1, b1, w2, b2]
    accum = [np.zeros_like(p) for p in params]
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0

    for _ in range(epochs):
        hidden = np.maximum(X @ w1.T + b1, 0.0)
        logits = hidden @ w2.T + b2
        logits -= logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        probs = expl / expl.sum(axis=1, keepdims=True)
        loss = -np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-12)))
        if not np.isfinite(loss):
            raise NumericError("supervised graph estimation diverged (non-finite loss)")
        dlogits = (probs - onehot) / n
        dw2 = dlogits.T @ hidden
        db2 = dlogits.sum(axis=0)
        dhidden = (dlogits @ w2) * (hidden > 0)
        dw1 = dhidden.T @ X
        db1 = dhidden.sum(axis=0)
        for p, a, g in zip(params, accum, [dw1, db1, dw2, db2]):
            a += g * g
            p -= lr * g / (np.sqrt(a) + 1e-8)
    return w1


def feature_affinity(features: np.ndarray, neighbors: int | None = 16) -> np.ndarray:
    """Gaussian affinities between feature rows, sparsified to nearest neighbors.

    The weight between rows i and j is exp(-||f_i - f_j||^2 / 2 sigma^2) with
    sigma the median pairwise distance, so identical features score exactly 1
    before sparsification. Each row keeps its `neighbors` strongest weights
    (union over both endpoints); pass None to keep the dense matrix.
    """
    sq_norms = (features * features).sum(axis=1)
    sq_dist = sq_norms[:, None] + sq_norms[None, :] - 2.0 * (features @ features.T)
    np.maximum(sq_dist, 0.0, out=sq_dist)
    n = sq_dist.shape[0]
    upper = np.sqrt(sq_dist[np.triu_indices(n, k=1)])
    sigma = float(np.median(upper)) if upper.size else 1.0
    if sigma <= 0.0:
        sigma = 1.0
    weights = np.exp(-sq_dist / (2.0 * sigma * sigma))
    np.fill_diagonal(weights, 0.0)
    if neighbors is None:
        return (weights + weights.T) / 2.0

    k = min(neighbors, n - 1)
    keep = np.zeros_like(weights, dtype=bool)
    if k > 0:
        top = np.argsort(-weights, axis=1, kind="stable")[:, :k]
        rows = np.repeat(np.arange(n), k)
        keep[rows, top.ravel()] = True
        keep |= keep.T
    adjacency = np.where(keep, weights, 0.0)
    return (adjacency + adjacency.T) / 2.0


def supervised_graph(corpus: Corpus, hidden_units: int = 32, epochs: int = 200,
                     seed: int = 0, neighbors: int = 16) -> Graph:
    """Train a small classifier and connect words whose learned features agree.

    The edge weight between words i and j comes from the Gaussian affinity of
    columns i and j of the trained first-layer weight matrix (see
    `feature_affinity`); nearest-neighbor sparsification keeps the graph
    density comparable to co-occurrence estimation.
    """
    if corpus.num_classes < 2:
        raise DataError("supervised graph estimation needs a corpus with >= 2 classes")
    X, y, _ = signal_matrix(corpus, corpus.vocabulary, drop_empty=True)
    if X.shape[0] == 0:
        raise DataError("no usable documents for supervised graph estimation")
    w1 = _train_softmax_mlp(X, y, corpus.num_classes, hidden_units, epochs, seed)
    adjacency = feature_affinity(w1.T, neighbors=neighbors)
    if not adjacency.any():
        raise DataError("supervised graph estimation produced zero edges")
    return Graph(vocabulary=corpus.vocabulary, adjacency=adjacency)


def connected_components(adjacency: np.ndarray) -> list[list[int]]:
    """Connected components by breadth-first search, in first-seen node order."""
    n = adjacency.shape[0]
    seen = np.zeros(n, dtype=bool)
    components = []
    for start in range(n):
        if seen[start]:
            continue
        queue = [start]
        seen[start] = True
        members = []
        while queue:
            node = queue.pop()
            members.append(node)
            for nbr in np.nonzero(adjacency[node])[0]:
                if not seen[nbr]:
                    seen[nbr] = True
                    queue.append(int(nbr))
        components.append(sorted(members))
    return components


def ensure_connected(g: Graph) -> Graph:
    """Restrict to the largest connected component (ties: lowest node index)."""
    components = connected_components(g.adjacency)
    if len(components) == 1:
        return g
    best = max(components, key=lambda c: (len(c), -min(c)))
    dropped = g.num_nodes - len(best)
    logger.warning("graph not connected: dropping %d of %d nodes", dropped,
                   g.num_nodes)
    idx = np.asarray(best, dtype=np.int64)
    vocab = Vocabulary.from_words(g.vocabulary.words[i] for i in best)
    return Graph(vocabulary=vocab, adjacency=g.adjacency[np.ix_(idx, idx)])


def align_union(g_source: Graph, corpus_target: Corpus,
                reestimate_window: int | None = None):
    """Embed the source graph into the union of source and target vocabularies.

    The union keeps the source node order and appends target-only words by
    descending target frequency. Source edge weights are preserved exactly;
    entries touching target-only words stay zero unless a re-estimation
    window is given, in which case those entries (and only those) are filled
    from target co-occurrence counts. Returns (graph, union_vocabulary).
    """
    target_vocab = build_vocabulary(list(corpus_target.documents),
                                    max_size=len(corpus_target.vocabulary))
    new_words = [w for w in target_vocab.words if w not in g_source.vocabulary]
    union = Vocabulary.from_words(list(g_source.vocabulary.words) + new_words)
    n_source = g_source.num_nodes
    n_union = len(union)
    adjacency = np.zeros((n_union, n_union), dtype=np.float64)
    adjacency[:n_source, :n_source] = g_source.adjacency
    if reestimate_window is not None and n_union > n_source:
        target_on_union = Corpus(documents=corpus_target.documents,
                                 vocabulary=union,
                                 num_classes=corpus_target.num_classes,
                                 signal_mode=corpus_target.signal_mode)
        try:
            estimated = cooccurrence_graph(target_on_union, window=reestimate_window)
        except DataError:
            estimated = None
        if estimated is not None:
            fill = estimated.adjacency.copy()
            fill[:n_source, :n_source] = 0.0  # source block stays authoritative
            adjacency += fill
    return Graph(vocabulary=union, adjacency=adjacency), union


def save_graph_json(g: Graph, path: str) -> None:
    """JSON with the strict upper triangle only: {"n", "vocab", "edges"}."""
    rows, cols = np.nonzero(np.triu(g.adjacency, k=1))
    edges = [[int(i), int(j), float(g.adjacency[i, j])] for i, j in zip(rows, cols)]
    payload = {"n": g.num_nodes, "vocab": list(g.vocabulary.words), "edges": edges}
    atomic_write_text(path, json.dumps(payload, sort_keys=True) + "\n")


def load_graph_json(path: str) -> Graph:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        n = int(payload["n"])
        vocab = Vocabulary.from_words(payload["vocab"])
        edges = payload["edges"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: bad graph file: {exc}") from exc
    if len(vocab) != n:
        raise DataError(f"{path}: vocab length {len(vocab)} != n {n}")
    adjacency = np.zeros((n, n), dtype=np.float64)
    for i, j, w in edges:
        if not 0 <= i < j < n:
            raise DataError(f"{path}: edge ({i},{j}) outside the strict upper triangle")
        adjacency[i, j] = adjacency[j, i] = float(w)
    return Graph(vocabulary=vocab, adjacency=adjacency)
