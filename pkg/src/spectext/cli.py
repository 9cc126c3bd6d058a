"""Command-line driver for reproducible graph/text experiments.

Commands: build-graph, train, transfer, similarity, synth, evaluate.
Every command takes its parameters from flags, optionally backed by a
key=value config file (flags win). All randomness flows from --seed.
Outputs are written atomically under --out-dir with fixed names; volatile
values (wall-clock timings, creation timestamps) live in *.meta.json
sidecars and in the reports' seconds column, everything else is
byte-reproducible for a fixed seed.

Exit codes: 2 bad configuration, 3 bad or missing data, 4 numeric failure.
"""

import argparse
import datetime as _dt
import json
import os
import sys
import time

import numpy as np

from . import corpus as corpus_mod
from . import graph as graph_mod
from . import network as net_mod
from . import spectral as spectral_mod
from . import transfer as transfer_mod
from .exceptions import ConfigError, DataError, NumericError
from .fileio import atomic_write_text, write_json
from .similarity import corpus_corr, graph_sim

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DEFAULT_FRACTIONS = [0.01, 0.03, 0.05, 0.10]
DEFAULT_SEED_COUNT = 10


def _load_config_file(path: str) -> dict:
    """Flat key=value file; '#' starts a comment, blank lines ignored."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, value = line.split("=", 1)
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


class Resolver:
    """Merge explicit flags over config-file values over defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file_values = (_load_config_file(args.config)
                            if getattr(args, "config", None) else {})

    def get(self, name: str, default, convert):
        flag = getattr(self.args, name, None)
        if flag is not None:
            return flag
        if name in self.file_values:
            raw = self.file_values[name]
            try:
                return convert(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config value {name}={raw!r}: {exc}") from exc
        return default

    def get_bool(self, name: str, default: bool) -> bool:
        return self.get(name, default, _parse_bool)

    def get_list(self, name: str, default, convert):
        value = self.get(name, None, str)
        if value is None:
            return default
        if isinstance(value, list):
            return value
        return [convert(part) for part in str(value).split(",") if part.strip()]


def _parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file; flags win")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out-dir", default=None)


def _add_graph_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--graph-method", choices=["coge", "sge"], default=None)
    parser.add_argument("--window", type=int, default=None)
    parser.add_argument("--normalize", action=argparse.BooleanOptionalAction,
                        default=None)
    parser.add_argument("--sge-hidden", type=int, default=None)
    parser.add_argument("--sge-epochs", type=int, default=None)
    parser.add_argument("--max-vocab", type=int, default=None)


def _add_spectral_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--laplacian", choices=["basic", "rw", "rwr"], default=None)
    parser.add_argument("--epsilon", type=float, default=None)


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--arch", default=None)
    parser.add_argument("--kernel-degree", type=int, default=None)
    parser.add_argument("--parameterization", choices=["auto", "free", "polynomial"],
                        default=None)
    parser.add_argument("--pooling", action=argparse.BooleanOptionalAction,
                        default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--batch-size", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectext",
        description="Spectral graph convolution and transfer learning on text corpora",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="corpus -> graph + spectral basis cache")
    p.add_argument("--corpus", required=True)
    p.add_argument("--union-corpus", default=None,
                   help="align the graph to the union with this corpus's vocabulary")
    _add_graph_flags(p)
    _add_spectral_flags(p)
    _add_common(p)

    p = sub.add_parser("train", help="train a model on a prepared graph/basis")
    p.add_argument("--corpus", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--val-fraction", type=float, default=None)
    _add_train_flags(p)
    _add_common(p)

    p = sub.add_parser("transfer",
                       help="fine-tune a trained model on a target corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--graph", required=True, help="source graph (for similarity)")
    p.add_argument("--source-corpus", required=True)
    p.add_argument("--target-corpus", required=True)
    p.add_argument("--fractions", default=None,
                   help="comma-separated fine-tune fractions")
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.add_argument("--finetune-epochs", type=int, default=None)
    p.add_argument("--head-init", choices=["reinit", "copy-hidden"], default=None)
    _add_graph_flags(p)
    _add_spectral_flags(p)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("similarity", help="structural + distributional similarity")
    p.add_argument("--corpus-a", required=True)
    p.add_argument("--corpus-b", required=True)
    p.add_argument("--out", default=None, help="also write the JSON here")
    _add_graph_flags(p)
    _add_spectral_flags(p)
    _add_common(p)

    p = sub.add_parser("synth", help="synthesize an overlap-controlled corpus pair")
    p.add_argument("--corpus", required=True)
    p.add_argument("--overlap", type=float, required=True)
    _add_graph_flags(p)
    _add_spectral_flags(p)
    _add_common(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    _add_common(p)

    return parser


def _out_dir(res: Resolver) -> str:
    out = res.get("out_dir", ".", str)
    os.makedirs(out, exist_ok=True)
    return out


def _sidecar(path: str, payload: dict) -> None:
    payload = dict(payload)
    payload["created_utc"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    write_json(path, payload)


def _load_corpus(path: str, max_vocab: int):
    if not os.path.exists(path):
        raise DataError(f"corpus file not found: {path}")
    return corpus_mod.load_corpus_jsonl(path, max_vocab=max_vocab)


def _build_graph_from(corpus, res: Resolver, seed: int):
    method = res.get("graph_method", "coge", str)
    if method == "coge":
        return graph_mod.cooccurrence_graph(
            corpus,
            window=res.get("window", 5, int),
            normalize=res.get_bool("normalize", False),
        )
    if method == "sge":
        return graph_mod.supervised_graph(
            corpus,
            hidden_units=res.get("sge_hidden", 32, int),
            epochs=res.get("sge_epochs", 200, int),
            seed=seed,
        )
    raise ConfigError(f"unknown graph method {method!r}")


def cmd_build_graph(args) -> int:
    res = Resolver(args)
    out = _out_dir(res)
    seed = res.get("seed", 0, int)
    corpus = _load_corpus(args.corpus, res.get("max_vocab", 1000, int))
    g = graph_mod.ensure_connected(_build_graph_from(corpus, res, seed))
    if args.union_corpus:
        union_with = _load_corpus(args.union_corpus, res.get("max_vocab", 1000, int))
        g, _ = graph_mod.align_union(g, union_with)
    kind = res.get("laplacian", "basic", str)
    epsilon = res.get("epsilon", 0.1, float)
    lap = spectral_mod.laplacian(g, kind=kind, epsilon=epsilon)
    basis = spectral_mod.eigendecompose(lap)

    graph_mod.save_graph_json(g, os.path.join(out, "graph.json"))
    spectral_mod.save_basis(basis, os.path.join(out, "basis.bin"))
    corpus_mod.save_vocabulary(g.vocabulary, os.path.join(out, "vocab.txt"))
    print(f"nodes={g.num_nodes} edges={g.num_edges} "
          f"lambda_min={basis.eigenvalues[0]:.6g} "
          f"lambda_max={basis.eigenvalues[-1]:.6g}")
    return 0


def _report_csv(report, meta: dict) -> str:
    lines = [f"# {k}={meta[k]}" for k in sorted(meta)]
    lines.append("epoch,split,loss,accuracy,seconds,eig_count")
    for r in report.rows:
        lines.append(f"{r.epoch},{r.split},{r.loss!r},{r.accuracy!r},"
                     f"{r.seconds!r},{r.eig_count}")
    return "\n".join(lines) + "\n"


def _load_model_inputs(args, res: Resolver):
    g = graph_mod.load_graph_json(args.graph)
    basis = spectral_mod.load_basis(args.basis)
    if basis.num_nodes != g.num_nodes:
        raise DataError("basis and graph disagree on the node count")
    corpus = _load_corpus(args.corpus, res.get("max_vocab", 1000, int))
    aligned = corpus_mod.with_vocabulary(corpus, g.vocabulary)
    return g, basis, aligned


def cmd_train(args) -> int:
    res = Resolver(args)
    out = _out_dir(res)
    seed = res.get("seed", 0, int)
    g, basis, aligned = _load_model_inputs(args, res)
    arch = res.get("arch", "GC8-FC500", str)
    kernel_degree = res.get("kernel_degree", 60, int)
    lr = res.get("lr", 0.01, float)
    started = time.perf_counter()
    eig_before = spectral_mod.decomposition_count()
    model = net_mod.build_model(
        arch, basis, num_classes=aligned.num_classes, seed=seed,
        parameterization=res.get("parameterization", "auto", str),
        kernel_degree=kernel_degree,
        pooling=res.get_bool("pooling", True),
    )
    config = net_mod.TrainConfig(
        epochs=res.get("epochs", 50, int),
        batch_size=res.get("batch_size", 32, int),
        learning_rate=lr,
        seed=seed,
        val_fraction=res.get("val_fraction", 0.0, float),
        eig_count=spectral_mod.decomposition_count() - eig_before,
    )
    report = net_mod.train(model, aligned, basis, config)
    net_mod.save_checkpoint(model, os.path.join(out, "checkpoint.bin"))
    meta = {"arch": arch, "kernel_degree": kernel_degree, "learning_rate": lr,
            "epochs": config.epochs, "batch_size": config.batch_size,
            "seed": seed, "optimizer": "adagrad", "loss": "cross-entropy"}
    atomic_write_text(os.path.join(out, "report.csv"), _report_csv(report, meta))
    _sidecar(os.path.join(out, "report.meta.json"),
             {"total_seconds": time.perf_counter() - started, **meta})
    final = report.final("train")
    if final is not None:
        print(f"train_loss={final.loss:.6g} train_accuracy={final.accuracy:.4f}")
    else:
        print("no training epochs requested; checkpoint equals initialization")
    return 0


def cmd_evaluate(args) -> int:
    res = Resolver(args)
    _, basis, aligned = _load_model_inputs(args, res)
    model = net_mod.load_checkpoint(args.checkpoint, basis)
    result = net_mod.evaluate(model, aligned)
    payload = {"accuracy": result.accuracy, "mean_loss": result.mean_loss,
               "confusion": result.confusion.tolist()}
    text = json.dumps(payload, sort_keys=True)
    print(text)
    if args.out:
        atomic_write_text(args.out, text + "\n")
    return 0


def cmd_transfer(args) -> int:
    res = Resolver(args)
    out = _out_dir(res)
    seed = res.get("seed", 0, int)
    max_vocab = res.get("max_vocab", 1000, int)
    g_source = graph_mod.load_graph_json(args.graph)
    basis = spectral_mod.load_basis(args.basis)
    model = net_mod.load_checkpoint(args.checkpoint, basis)
    source_corpus = _load_corpus(args.source_corpus, max_vocab)
    target_corpus = _load_corpus(args.target_corpus, max_vocab)

    _, union_vocab = graph_mod.align_union(g_source, target_corpus)
    if len(union_vocab) != basis.num_nodes:
        raise DataError(
            f"target corpus adds {len(union_vocab) - basis.num_nodes} words "
            "beyond the basis; rebuild the source graph with --union-corpus "
            "so the basis covers the union vocabulary"
        )
    fractions = res.get_list("fractions", DEFAULT_FRACTIONS, float)
    seeds = res.get_list("seeds", [seed + i for i in range(DEFAULT_SEED_COUNT)], int)

    g_target = graph_mod.ensure_connected(
        _build_graph_from(target_corpus, res, seed))
    epsilon = res.get("epsilon", 0.1, float)
    sim = graph_sim(g_source, g_target, epsilon=epsilon)
    corr = corpus_corr(source_corpus, target_corpus)

    eig_before = spectral_mod.decomposition_count()
    base = {"source": os.path.basename(args.source_corpus),
            "target": os.path.basename(args.target_corpus),
            "sim": sim, "corr": corr}
    finetune_epochs = res.get("finetune_epochs", 60, int)
    batch_size = res.get("batch_size", 8, int)
    lr = res.get("lr", 0.05, float)
    head_init = res.get("head_init", "reinit", str)
    test_fraction = 0.25

    rows: list[dict] = []
    aligned_source = corpus_mod.with_vocabulary(source_corpus, union_vocab)
    src_eval = net_mod.evaluate(model, aligned_source)
    rows.append(dict(base, seed="", fraction="", epoch="", split="source/test",
                     loss=src_eval.mean_loss, accuracy=src_eval.accuracy,
                     seconds=0.0, eig_count=0))
    transfer_cells: dict[float, list[float]] = {f: [] for f in fractions}
    for run_seed in seeds:
        labels = np.asarray([d.label for d in target_corpus.documents])
        rng = np.random.default_rng(np.random.SeedSequence(entropy=run_seed,
                                                           spawn_key=(62,)))
        train_idx, test_idx = corpus_mod.stratified_holdout(labels, test_fraction,
                                                            rng)
        tgt_train = corpus_mod.Corpus(
            documents=tuple(target_corpus.documents[i] for i in train_idx),
            vocabulary=union_vocab, num_classes=target_corpus.num_classes,
            signal_mode=target_corpus.signal_mode)
        tgt_test = corpus_mod.Corpus(
            documents=tuple(target_corpus.documents[i] for i in test_idx),
            vocabulary=union_vocab, num_classes=target_corpus.num_classes,
            signal_mode=target_corpus.signal_mode)
        for fraction in fractions:
            plan = transfer_mod.TransferPlan(
                source_model=model, source_basis=basis, target_corpus=tgt_train,
                finetune_fraction=fraction,
                finetune_config=net_mod.TrainConfig(
                    epochs=finetune_epochs, batch_size=batch_size,
                    learning_rate=lr, seed=run_seed),
                head_init=head_init,
            )
            transferred = transfer_mod.build_transfer_model(plan)
            report = transfer_mod.finetune(transferred, plan)
            for r in report.rows:
                rows.append(dict(base, seed=run_seed, fraction=fraction,
                                 epoch=r.epoch, split=f"transfer/{r.split}",
                                 loss=r.loss, accuracy=r.accuracy,
                                 seconds=r.seconds, eig_count=0))
            result = net_mod.evaluate(transferred, tgt_test)
            rows.append(dict(base, seed=run_seed, fraction=fraction,
                             epoch=finetune_epochs - 1, split="transfer/test",
                             loss=result.mean_loss, accuracy=result.accuracy,
                             seconds=0.0, eig_count=0))
            transfer_cells[fraction].append(result.accuracy)
    for fraction in fractions:
        rows.append(dict(base, seed="median", fraction=fraction,
                         epoch=finetune_epochs - 1, split="transfer/test",
                         loss="", accuracy=float(np.median(transfer_cells[fraction])),
                         seconds=0.0, eig_count=0))
    if spectral_mod.decomposition_count() != eig_before:
        raise NumericError("transfer path unexpectedly performed decompositions")

    table = transfer_mod.experiment_csv(rows)
    atomic_write_text(os.path.join(out, "experiment.csv"), table)
    _sidecar(os.path.join(out, "experiment.meta.json"),
             {"sim": sim, "corr": corr, "fractions": fractions, "seeds": seeds,
              "finetune_epochs": finetune_epochs})
    print(f"sim={sim:.4f} corr={corr:.4f} cells={len(fractions) * len(seeds)}")
    return 0


def cmd_similarity(args) -> int:
    res = Resolver(args)
    seed = res.get("seed", 0, int)
    max_vocab = res.get("max_vocab", 1000, int)
    c1 = _load_corpus(args.corpus_a, max_vocab)
    c2 = _load_corpus(args.corpus_b, max_vocab)
    g1 = graph_mod.ensure_connected(_build_graph_from(c1, res, seed))
    g2 = graph_mod.ensure_connected(_build_graph_from(c2, res, seed))
    epsilon = res.get("epsilon", 0.1, float)
    union = set(g1.vocabulary.words) | set(g2.vocabulary.words)
    payload = {"sim": graph_sim(g1, g2, epsilon=epsilon),
               "corr": corpus_corr(c1, c2),
               "n_union": len(union), "epsilon": epsilon}
    text = json.dumps(payload, sort_keys=True)
    print(text)
    if args.out:
        atomic_write_text(args.out, text + "\n")
    return 0


def cmd_synth(args) -> int:
    res = Resolver(args)
    out = _out_dir(res)
    seed = res.get("seed", 0, int)
    overlap = res.get("overlap", None, float)
    if overlap is None:
        raise ConfigError("--overlap is required")
    base = _load_corpus(args.corpus, res.get("max_vocab", 1000, int))
    pair_a, pair_b = corpus_mod.synthesize_pair(base, overlap, seed)
    path_a = os.path.join(out, "pair_a.jsonl")
    path_b = os.path.join(out, "pair_b.jsonl")
    corpus_mod.save_corpus_jsonl(pair_a, path_a)
    corpus_mod.save_corpus_jsonl(pair_b, path_b)

    g1 = graph_mod.ensure_connected(_build_graph_from(pair_a, res, seed))
    g2 = graph_mod.ensure_connected(_build_graph_from(pair_b, res, seed))
    epsilon = res.get("epsilon", 0.1, float)
    sim = graph_sim(g1, g2, epsilon=epsilon)
    corr = corpus_corr(pair_a, pair_b)
    union = set(g1.vocabulary.words) | set(g2.vocabulary.words)
    _sidecar(os.path.join(out, "pair.meta.json"),
             {"overlap": overlap, "seed": seed, "sim": sim, "corr": corr,
              "n_union": len(union), "epsilon": epsilon,
              "docs_a": len(pair_a.documents), "docs_b": len(pair_b.documents)})
    print(f"docs_a={len(pair_a.documents)} docs_b={len(pair_b.documents)} "
          f"sim={sim:.4f} corr={corr:.4f}")
    return 0


_COMMANDS = {
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "similarity": cmd_similarity,
    "synth": cmd_synth,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
