"""Transfer of trained spectral layers to a related corpus.

A transferred model copies the source model's graph-convolution layers
bit for bit and re-initializes only the fully connected head for the
target label set. Because the source basis is reused as-is, the whole
transfer path performs zero eigendecompositions; reports record the
decomposition count so that saving is checkable rather than assumed.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, stratified_holdout, with_vocabulary
from .exceptions import ConfigError, DataError
from .graph import align_union, cooccurrence_graph, ensure_connected, supervised_graph
from .network import (FullyConnectedLayer, SpectralConvNet, TrainConfig,
                      TrainingReport, build_model, evaluate, train)
from .similarity import corpus_corr, graph_sim
from .spectral import (SpectralBasis, decomposition_count, eigendecompose,
                       laplacian)

EXPERIMENT_COLUMNS = ["source", "target", "sim", "corr", "fraction", "seed",
                      "epoch", "split", "loss", "accuracy", "seconds",
                      "eig_count"]


@dataclass
class TransferPlan:
    source_model: SpectralConvNet
    source_basis: SpectralBasis
    target_corpus: Corpus  # already aligned to the union vocabulary
    finetune_fraction: float
    finetune_config: TrainConfig
    frozen: frozenset | None = None  # None freezes every conv layer
    head_init: str = "reinit"  # or "copy-hidden"

    def frozen_layers(self) -> frozenset:
        if self.frozen is None:
            return frozenset(self.source_model.conv_ids())
        return self.frozen

    def validate(self) -> None:
        if not 0.0 < self.finetune_fraction <= 1.0:
            raise ConfigError(
                f"finetune fraction must lie in (0, 1], got {self.finetune_fraction}"
            )
        if self.head_init not in ("reinit", "copy-hidden"):
            raise ConfigError(f"unknown head_init {self.head_init!r}")
        known = set(self.source_model.layer_ids())
        unknown = self.frozen_layers() - known
        if unknown:
            raise ConfigError(f"frozen set names unknown layers: {sorted(unknown)}")
        if len(self.target_corpus.vocabulary) != self.source_basis.num_nodes:
            raise DataError(
                "target corpus is not aligned to the source basis: "
                f"{len(self.target_corpus.vocabulary)} words vs "
                f"{self.source_basis.num_nodes} basis nodes; rebuild the source "
                "graph over the union vocabulary"
            )


def build_transfer_model(plan: TransferPlan) -> SpectralConvNet:
    """Copy the source conv stack; fresh fully connected head for the target.

    With the default "reinit" strategy the hidden head layers keep their
    source widths but draw new weights; "copy-hidden" keeps the trained
    hidden layers and replaces only the output layer, which is the more
    literal fine-tuning reading and is markedly more robust when the
    fine-tune subset is tiny. The output layer is always zero-initialized
    for the target class count. No eigendecomposition happens here: the
    source basis is shared by reference.
    """
    plan.validate()
    source = plan.source_model
    rng = np.random.default_rng(np.random.SeedSequence(
        entropy=plan.finetune_config.seed, spawn_key=(51,)))
    model = source.copy()
    model.num_classes = plan.target_corpus.num_classes
    fan_in = source.conv_layers[-1].out_maps * source.num_nodes
    fc_layers = []
    for layer in source.fc_layers[:-1]:
        units = layer.weights.shape[0]
        if plan.head_init == "copy-hidden":
            fc_layers.append(FullyConnectedLayer(weights=layer.weights.copy(),
                                                 bias=layer.bias.copy()))
        else:
            weights = rng.uniform(-1.0, 1.0, size=(units, fan_in)) / np.sqrt(fan_in)
            fc_layers.append(FullyConnectedLayer(weights=weights,
                                                 bias=np.zeros(units)))
        fan_in = units
    fc_layers.append(FullyConnectedLayer(
        weights=np.zeros((plan.target_corpus.num_classes, fan_in)),
        bias=np.zeros(plan.target_corpus.num_classes)))
    model.fc_layers = fc_layers
    return model


def select_finetune_subset(labels: np.ndarray, fraction: float, rng) -> np.ndarray:
    """Deterministic stratified choice of a fraction of document indices.

    Every class contributes at least one document so that tiny fractions
    cannot silently drop a class; errors out when the fraction rounds to
    zero documents overall.
    """
    total = int(round(fraction * labels.shape[0]))
    if total == 0:
        raise DataError(
            f"fraction {fraction} of {labels.shape[0]} documents selects nothing"
        )
    chosen = []
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        take = max(1, int(round(fraction * len(idx))))
        order = rng.permutation(len(idx))
        chosen.extend(idx[order[:take]])
    return np.sort(np.asarray(chosen, dtype=np.int64))


def finetune(model: SpectralConvNet, plan: TransferPlan) -> TrainingReport:
    """Train only the unfrozen layers on the sampled target subset."""
    plan.validate()
    labels = np.asarray([d.label for d in plan.target_corpus.documents])
    rng = np.random.default_rng(np.random.SeedSequence(
        entropy=plan.finetune_config.seed, spawn_key=(52,)))
    subset = select_finetune_subset(labels, plan.finetune_fraction, rng)
    docs = tuple(plan.target_corpus.documents[i] for i in subset)
    subset_corpus = Corpus(documents=docs,
                           vocabulary=plan.target_corpus.vocabulary,
                           num_classes=plan.target_corpus.num_classes,
                           signal_mode=plan.target_corpus.signal_mode)
    config = TrainConfig(
        epochs=plan.finetune_config.epochs,
        batch_size=plan.finetune_config.batch_size,
        learning_rate=plan.finetune_config.learning_rate,
        seed=plan.finetune_config.seed,
        val_fraction=0.0,
        frozen=plan.frozen_layers(),
        eig_count=0,
    )
    before = decomposition_count()
    report = train(model, subset_corpus, plan.source_basis, config)
    if decomposition_count() != before:
        raise AssertionError("transfer path performed an eigendecomposition")
    return report


@dataclass
class ExperimentConfig:
    """Knobs for the full source-train / transfer / fine-tune protocol."""

    source_name: str = "source"
    target_name: str = "target"
    graph_method: str = "coge"
    window: int = 5
    sge_hidden: int = 32
    sge_epochs: int = 200
    laplacian_kind: str = "basic"
    epsilon: float = 0.1
    arch: str = "GC4-FC32"
    parameterization: str = "auto"
    kernel_degree: int = 60
    pooling: bool = True
    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 32
    finetune_epochs: int = 60
    finetune_learning_rate: float = 0.05  # zero-init head needs a faster rate
    finetune_batch_size: int = 8  # small fractions need several steps per epoch
    head_init: str = "reinit"
    test_fraction: float = 0.25
    max_vocab: int = 1000


def _build_graph(corpus: Corpus, config: ExperimentConfig, seed: int):
    if config.graph_method == "coge":
        return cooccurrence_graph(corpus, window=config.window)
    if config.graph_method == "sge":
        return supervised_graph(corpus, hidden_units=config.sge_hidden,
                                epochs=config.sge_epochs, seed=seed)
    raise ConfigError(f"unknown graph method {config.graph_method!r}")


def _split_corpus(corpus: Corpus, fraction: float, seed: int, stream: int):
    labels = np.asarray([d.label for d in corpus.documents])
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(stream,)))
    main_idx, held_idx = stratified_holdout(labels, fraction, rng)
    main = tuple(corpus.documents[i] for i in main_idx)
    held = tuple(corpus.documents[i] for i in held_idx)
    return main, held


def _report_rows(report: TrainingReport, base: dict, prefix: str,
                 fraction) -> list[dict]:
    rows = []
    for r in report.rows:
        row = dict(base)
        row.update(fraction=fraction, epoch=r.epoch, split=f"{prefix}/{r.split}",
                   loss=r.loss, accuracy=r.accuracy, seconds=r.seconds,
                   eig_count=r.eig_count)
        rows.append(row)
    return rows


def _eval_row(model, corpus, base, prefix, fraction, epoch, eig_count) -> dict:
    started = time.perf_counter()
    result = evaluate(model, corpus)
    elapsed = time.perf_counter() - started
    row = dict(base)
    row.update(fraction=fraction, epoch=epoch, split=f"{prefix}/test",
               loss=result.mean_loss, accuracy=result.accuracy, seconds=elapsed,
               eig_count=eig_count)
    return row


def transfer_experiment(source: Corpus, target: Corpus, fractions: list[float],
                        seeds: list[int], config: ExperimentConfig) -> list[dict]:
    """Run the whole protocol and return plot-ready rows.

    Per seed: split both corpora, build the source graph, embed it in the
    union vocabulary, decompose once, train the source model, then for each
    fraction transfer + fine-tune and score on the target test split. The
    source model is trained once per seed and shared across fractions,
    which is observationally identical to retraining it per cell. Median
    rows (seed column "median") aggregate the per-seed test accuracies.
    """
    sim = graph_sim(ensure_connected(_build_graph(source, config, seed=0)),
                    ensure_connected(_build_graph(target, config, seed=0)),
                    epsilon=config.epsilon)
    corr = corpus_corr(source, target)
    base = {"source": config.source_name, "target": config.target_name,
            "sim": sim, "corr": corr, "seed": None}

    rows: list[dict] = []
    source_test_acc: list[float] = []
    transfer_test: dict[float, list[dict]] = {f: [] for f in fractions}
    for seed in seeds:
        seed_base = dict(base, seed=seed)
        src_train_docs, src_test_docs = _split_corpus(source, config.test_fraction,
                                                      seed, stream=61)
        tgt_train_docs, tgt_test_docs = _split_corpus(target, config.test_fraction,
                                                      seed, stream=62)
        graph_corpus = Corpus(documents=src_train_docs,
                              vocabulary=source.vocabulary,
                              num_classes=source.num_classes,
                              signal_mode=source.signal_mode)
        g = ensure_connected(_build_graph(graph_corpus, config, seed))
        g_union, union_vocab = align_union(g, target)
        before = decomposition_count()
        basis = eigendecompose(laplacian(g_union, kind=config.laplacian_kind,
                                         epsilon=config.epsilon))
        eig_spent = decomposition_count() - before

        def aligned(docs, template):
            return Corpus(documents=docs, vocabulary=union_vocab,
                          num_classes=template.num_classes,
                          signal_mode=template.signal_mode)

        model = build_model(config.arch, basis, num_classes=source.num_classes,
                            seed=seed, parameterization=config.parameterization,
                            kernel_degree=config.kernel_degree,
                            pooling=config.pooling)
        report = train(model, aligned(src_train_docs, source), basis,
                       TrainConfig(epochs=config.epochs,
                                   batch_size=config.batch_size,
                                   learning_rate=config.learning_rate,
                                   seed=seed, eig_count=eig_spent))
        rows.extend(_report_rows(report, seed_base, "source", fraction=""))
        source_row = _eval_row(model, aligned(src_test_docs, source), seed_base,
                               "source", fraction="", epoch=config.epochs - 1,
                               eig_count=eig_spent)
        rows.append(source_row)
        source_test_acc.append(source_row["accuracy"])

        for fraction in fractions:
            plan = TransferPlan(
                source_model=model, source_basis=basis,
                target_corpus=aligned(tgt_train_docs, target),
                finetune_fraction=fraction,
                finetune_config=TrainConfig(
                    epochs=config.finetune_epochs,
                    batch_size=config.finetune_batch_size,
                    learning_rate=config.finetune_learning_rate, seed=seed),
                head_init=config.head_init,
            )
            transferred = build_transfer_model(plan)
            ft_report = finetune(transferred, plan)
            rows.extend(_report_rows(ft_report, seed_base, "transfer", fraction))
            test_row = _eval_row(transferred, aligned(tgt_test_docs, target),
                                 seed_base, "transfer", fraction,
                                 epoch=config.finetune_epochs - 1, eig_count=0)
            rows.append(test_row)
            transfer_test[fraction].append(test_row)

    median_base = dict(base, seed="median")
    rows.append(dict(median_base, fraction="", epoch=config.epochs - 1,
                     split="source/test",
                     loss=float(np.median([r["loss"] for r in rows
                                           if r["split"] == "source/test"
                                           and r["seed"] != "median"])),
                     accuracy=float(np.median(source_test_acc)),
                     seconds=0.0, eig_count=0))
    for fraction in fractions:
        cells = transfer_test[fraction]
        rows.append(dict(median_base, fraction=fraction,
                         epoch=config.finetune_epochs - 1, split="transfer/test",
                         loss=float(np.median([r["loss"] for r in cells])),
                         accuracy=float(np.median([r["accuracy"] for r in cells])),
                         seconds=0.0, eig_count=0))
    return rows


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def experiment_csv(rows: list[dict], meta: dict | None = None) -> str:
    """Render experiment rows with a fixed column order and float repr."""
    lines = []
    if meta:
        for key in sorted(meta):
            lines.append(f"# {key}={meta[key]}")
    lines.append(",".join(EXPERIMENT_COLUMNS))
    for row in rows:
        lines.append(",".join(_format_cell(row.get(c)) for c in EXPERIMENT_COLUMNS))
    return "\n".join(lines) + "\n"
