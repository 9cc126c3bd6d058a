"""Spectral graph convolution and transfer learning on text corpora.

Pipeline: a labeled corpus becomes a word graph (co-occurrence counting or
a supervised estimator), the graph's Laplacian eigenvectors provide a
Fourier basis, a convolutional network learns diagonal spectral filters
over that basis, and a trained model transfers to a related corpus by
re-using its spectral layers and fine-tuning only the classifier head.
"""

from .corpus import (Corpus, Document, Vocabulary, build_vocabulary,
                     load_corpus_jsonl, save_corpus_jsonl, signal_matrix,
                     synthesize_pair, to_signal, tokenize, with_vocabulary)
from .exceptions import ConfigError, DataError, NumericError, SpectextError
from .graph import (Graph, align_union, cooccurrence_graph, ensure_connected,
                    load_graph_json, save_graph_json, supervised_graph)
from .network import (AdaGradState, EvalResult, FullyConnectedLayer,
                      GraphConvLayer, SpectralConvNet, TrainConfig,
                      TrainingReport, adagrad_step, backward, build_model,
                      conv_forward, evaluate, forward, load_checkpoint, loss,
                      parse_architecture, save_checkpoint, train)
from .similarity import AffinityMatrix, corpus_corr, graph_sim, rwr_affinity
from .spectral import (Laplacian, SpectralBasis, decomposition_count,
                       eigendecompose, gft, igft, laplacian, load_basis,
                       polynomial_multipliers, rwr_series, save_basis,
                       spectral_convolve, truncate_basis)
from .transfer import (ExperimentConfig, TransferPlan, build_transfer_model,
                       experiment_csv, finetune, transfer_experiment)

__version__ = "0.1.0"

__all__ = [
    "AdaGradState", "AffinityMatrix", "ConfigError", "Corpus", "DataError",
    "Document", "EvalResult", "ExperimentConfig", "FullyConnectedLayer",
    "Graph", "GraphConvLayer", "Laplacian", "NumericError", "SpectextError",
    "SpectralBasis", "SpectralConvNet", "TrainConfig", "TrainingReport",
    "TransferPlan", "Vocabulary", "adagrad_step", "align_union", "backward",
    "build_model", "build_transfer_model", "build_vocabulary", "conv_forward",
    "cooccurrence_graph", "corpus_corr", "decomposition_count",
    "eigendecompose", "ensure_connected", "evaluate", "experiment_csv",
    "finetune", "forward", "gft", "graph_sim", "igft", "laplacian",
    "load_basis", "load_checkpoint", "load_corpus_jsonl", "load_graph_json",
    "loss", "parse_architecture", "polynomial_multipliers", "rwr_affinity",
    "rwr_series", "save_basis", "save_checkpoint", "save_corpus_jsonl",
    "save_graph_json", "signal_matrix", "spectral_convolve",
    "supervised_graph", "synthesize_pair", "to_signal", "tokenize", "train",
    "transfer_experiment", "truncate_basis", "with_vocabulary",
]
