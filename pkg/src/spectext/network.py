"""Spectral convolutional network with manual backpropagation.

Each graph-convolution layer owns one diagonal spectral filter per
(input map, output map) pair: the output map j is

    x_j = relu( U sum_i diag(g_ij) U^T x_i )

where U holds the basis eigenvectors. Filters are parameterized either
directly (one multiplier per retained frequency) or as a degree-K
polynomial over the eigenvalues, which keeps the parameter count
independent of the graph size. The classifier head is a stack of fully
connected layers ending in a softmax; training minimizes cross-entropy
with AdaGrad updates.
"""

import re
import struct
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import Corpus, signal_matrix, stratified_holdout
from .exceptions import ConfigError, DataError, NumericError
from .fileio import atomic_write_bytes, payload_checksum
from .spectral import (SpectralBasis, basis_checksum, polynomial_multipliers,
                       truncate_basis)

_ARCH_TOKEN = re.compile(r"^(GC|FC)(\d+)(K?)$")

PROBABILITY_FLOOR = 1e-12


def parse_architecture(arch: str):
    """Split e.g. 'GC8-GC8-FC1K' into ([8, 8], [1000]).

    GCx is a graph convolution layer with x feature maps and FCy a fully
    connected hidden layer with y units ('1K' style suffixes allowed). All
    GC layers must precede all FC layers; the softmax output layer is
    implicit and sized by the number of classes.
    """
    conv_maps: list[int] = []
    fc_units: list[int] = []
    for token in arch.strip().split("-"):
        m = _ARCH_TOKEN.match(token.strip().upper())
        if not m:
            raise ConfigError(f"bad architecture token {token!r} in {arch!r}")
        kind, value, kilo = m.groups()
        units = int(value) * (1000 if kilo else 1)
        if units < 1:
            raise ConfigError(f"layer size must be positive in {arch!r}")
        if kind == "GC":
            if fc_units:
                raise ConfigError(f"GC after FC in {arch!r}")
            conv_maps.append(units)
        else:
            fc_units.append(units)
    if not conv_maps:
        raise ConfigError(f"architecture {arch!r} has no GC layer")
    return conv_maps, fc_units


@dataclass
class GraphConvLayer:
    in_maps: int
    out_maps: int
    basis_dim: int
    parameterization: str  # "free" or "polynomial"
    weights: np.ndarray  # (in, out, basis_dim) or (in, out, K+1)
    lambda_scale: float = 1.0

    @property
    def kernel_degree(self) -> int:
        if self.parameterization != "polynomial":
            raise ConfigError("kernel degree only defined for polynomial filters")
        return self.weights.shape[2] - 1

    def multipliers(self, basis: SpectralBasis) -> np.ndarray:
        """Per-pair frequency multipliers, shape (in_maps, out_maps, basis_dim)."""
        if self.parameterization == "free":
            return self.weights
        out = np.empty((self.in_maps, self.out_maps, self.basis_dim))
        for i in range(self.in_maps):
            for j in range(self.out_maps):
                out[i, j] = polynomial_multipliers(basis, self.weights[i, j],
                                                   lambda_scale=self.lambda_scale)
        return out


@dataclass
class FullyConnectedLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass
class SpectralConvNet:
    basis: SpectralBasis
    conv_layers: list[GraphConvLayer]
    fc_layers: list[FullyConnectedLayer]  # hidden layers then softmax output
    num_classes: int
    arch: str
    pooling: bool

    @property
    def num_nodes(self) -> int:
        return self.basis.num_nodes

    def conv_ids(self) -> list[str]:
        return [f"conv{k}" for k in range(len(self.conv_layers))]

    def fc_ids(self) -> list[str]:
        return [f"fc{k}" for k in range(len(self.fc_layers))]

    def layer_ids(self) -> list[str]:
        return self.conv_ids() + self.fc_ids()

    def parameters(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed by block name, in declaration order."""
        params: dict[str, np.ndarray] = {}
        for k, layer in enumerate(self.conv_layers):
            params[f"conv{k}.weights"] = layer.weights
        for k, layer in enumerate(self.fc_layers):
            params[f"fc{k}.weights"] = layer.weights
            params[f"fc{k}.bias"] = layer.bias
        return params

    def layer_basis(self, k: int) -> SpectralBasis:
        return truncate_basis(self.basis, self.conv_layers[k].basis_dim)

    def copy(self) -> "SpectralConvNet":
        return SpectralConvNet(
            basis=self.basis,
            conv_layers=[replace(l, weights=l.weights.copy())
                         for l in self.conv_layers],
            fc_layers=[FullyConnectedLayer(weights=l.weights.copy(),
                                           bias=l.bias.copy())
                       for l in self.fc_layers],
            num_classes=self.num_classes,
            arch=self.arch,
            pooling=self.pooling,
        )


def build_model(arch: str, basis: SpectralBasis, num_classes: int, seed: int = 0,
                parameterization: str = "auto", kernel_degree: int = 60,
                pooling: bool = True) -> SpectralConvNet:
    """Construct and initialize a model for the given basis and class count.

    Hidden weights draw from a uniform distribution scaled by 1/sqrt(fan_in);
    the softmax output layer starts at zero so an untrained model predicts
    the uniform distribution. With pooling, each successive conv layer keeps
    half the frequencies of the previous one (low-frequency truncation).
    The "auto" parameterization uses degree-`kernel_degree` polynomial
    filters whenever a layer retains more than kernel_degree + 1
    frequencies, and free multipliers otherwise.
    """
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    if parameterization not in ("auto", "free", "polynomial"):
        raise ConfigError(f"unknown parameterization {parameterization!r}")
    conv_maps, fc_units = parse_architecture(arch)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(31,)))
    n = basis.num_nodes

    conv_layers = []
    in_maps = 1
    dim = basis.dim
    for out_maps in conv_maps:
        mode = parameterization
        if mode == "auto":
            mode = "polynomial" if dim > kernel_degree + 1 else "free"
        if mode == "polynomial":
            if kernel_degree + 1 > dim:
                raise ConfigError(
                    f"kernel degree {kernel_degree} too large for basis dim {dim}"
                )
            width = kernel_degree + 1
            scale = float(np.max(np.abs(basis.eigenvalues[:dim])))
            lambda_scale = scale if scale > 0 else 1.0
        else:
            width = dim
            lambda_scale = 1.0
        fan_in = in_maps * (width if mode == "polynomial" else 1)
        weights = rng.uniform(-1.0, 1.0, size=(in_maps, out_maps, width))
        weights /= np.sqrt(fan_in)
        conv_layers.append(GraphConvLayer(in_maps=in_maps, out_maps=out_maps,
                                          basis_dim=dim, parameterization=mode,
                                          weights=weights,
                                          lambda_scale=lambda_scale))
        in_maps = out_maps
        if pooling:
            dim = max(1, dim // 2)

    fc_layers = []
    fan_in = conv_maps[-1] * n
    for units in fc_units:
        weights = rng.uniform(-1.0, 1.0, size=(units, fan_in)) / np.sqrt(fan_in)
        fc_layers.append(FullyConnectedLayer(weights=weights, bias=np.zeros(units)))
        fan_in = units
    fc_layers.append(FullyConnectedLayer(weights=np.zeros((num_classes, fan_in)),
                                         bias=np.zeros(num_classes)))
    return SpectralConvNet(basis=basis, conv_layers=conv_layers,
                           fc_layers=fc_layers, num_classes=num_classes,
                           arch=arch, pooling=pooling)


def conv_forward(layer: GraphConvLayer, basis: SpectralBasis,
                 x: np.ndarray) -> np.ndarray:
    """Apply one graph-convolution layer to a signal block of shape (N, in_maps)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != layer.in_maps:
        raise DataError(f"expected {layer.in_maps} input maps, got {x.shape[1]}")
    if basis.dim < layer.basis_dim:
        raise DataError("basis dimension below layer requirement")
    block = x.T[:, :, None]  # (in, N, 1)
    out, _, _ = _conv_block_forward(layer, truncate_basis(basis, layer.basis_dim),
                                    block)
    return out[:, :, 0].T


def _conv_block_forward(layer, basis, block):
    """Batched layer application; block shape (in_maps, N, B)."""
    u = basis.eigenvectors
    g = layer.multipliers(basis)
    coeffs = np.matmul(u.T[None, :, :], block)  # (in, d, B)
    mixed = np.einsum("idb,iod->odb", coeffs, g)
    pre = np.matmul(u[None, :, :], mixed)  # (out, N, B)
    return np.maximum(pre, 0.0), coeffs, pre


def _forward_pass(model: SpectralConvNet, batch: np.ndarray):
    """Run the full network on a batch of signals, shape (B, N).

    Returns (probs (B, C), cache) where cache holds the intermediates the
    backward pass needs.
    """
    if batch.shape[1] != model.num_nodes:
        raise DataError(
            f"signal length {batch.shape[1]} != {model.num_nodes} graph nodes"
        )
    block = batch.T[None, :, :]  # (1, N, B)
    conv_cache = []
    for k, layer in enumerate(model.conv_layers):
        basis = model.layer_basis(k)
        out, coeffs, pre = _conv_block_forward(layer, basis, block)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite activations in conv{k}")
        conv_cache.append((block, coeffs, pre))
        block = out

    n_out = block.shape[0] * block.shape[1]
    activation = block.reshape(n_out, block.shape[2])  # (maps*N, B)
    fc_cache = []
    last = len(model.fc_layers) - 1
    for k, layer in enumerate(model.fc_layers):
        z = layer.weights @ activation + layer.bias[:, None]
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite activations in fc{k}")
        fc_cache.append((activation, z))
        activation = z if k == last else np.maximum(z, 0.0)

    logits = activation - activation.max(axis=0, keepdims=True)
    unnorm = np.exp(logits)
    probs = unnorm / unnorm.sum(axis=0, keepdims=True)
    return probs.T, (conv_cache, fc_cache, probs)


def forward(model: SpectralConvNet, x: np.ndarray) -> np.ndarray:
    """Class probabilities for a single node signal."""
    probs, _ = _forward_pass(model, np.asarray(x, dtype=np.float64)[None, :])
    return probs[0]


def loss(probs: np.ndarray, label: int) -> float:
    """Cross-entropy of one prediction, with a probability floor against ln 0."""
    if not 0 <= label < probs.shape[0]:
        raise DataError(f"label {label} outside [0, {probs.shape[0]})")
    return float(-np.log(max(float(probs[label]), PROBABILITY_FLOOR)))


def _backward_pass(model: SpectralConvNet, cache, labels: np.ndarray):
    """Mean-over-batch gradients for every parameter block."""
    conv_cache, fc_cache, probs = cache
    batch_size = labels.shape[0]
    grads: dict[str, np.ndarray] = {}

    delta = probs.copy()  # (C, B)
    delta[labels, np.arange(batch_size)] -= 1.0
    delta /= batch_size

    last = len(model.fc_layers) - 1
    for k in range(last, -1, -1):
        activation, z = fc_cache[k]
        if k != last:
            delta = delta * (z > 0.0)
        grads[f"fc{k}.weights"] = delta @ activation.T
        grads[f"fc{k}.bias"] = delta.sum(axis=1)
        delta = model.fc_layers[k].weights.T @ delta

    out_maps = model.conv_layers[-1].out_maps
    delta_block = delta.reshape(out_maps, model.num_nodes, batch_size)
    for k in range(len(model.conv_layers) - 1, -1, -1):
        layer = model.conv_layers[k]
        basis = model.layer_basis(k)
        u = basis.eigenvectors
        block, coeffs, pre = conv_cache[k]
        delta_block = delta_block * (pre > 0.0)
        back = np.matmul(u.T[None, :, :], delta_block)  # (out, d, B)
        if layer.parameterization == "free":
            grads[f"conv{k}.weights"] = np.einsum("odb,idb->iod", back, coeffs)
        else:
            grad_g = np.einsum("odb,idb->iod", back, coeffs)
            t = basis.eigenvalues / layer.lambda_scale
            vander = t[None, :] ** np.arange(layer.kernel_degree + 1)[:, None]
            grads[f"conv{k}.weights"] = np.einsum("iod,kd->iok", grad_g, vander)
        g = layer.multipliers(basis)
        delta_coeffs = np.einsum("odb,iod->idb", back, g)
        delta_block = np.matmul(u[None, :, :], delta_coeffs)  # (in, N, B)

    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient in block {name}")
    return grads


def backward(model: SpectralConvNet, x: np.ndarray, label: int):
    """Analytic gradients of the single-sample loss for every parameter block."""
    batch = np.asarray(x, dtype=np.float64)[None, :]
    _, cache = _forward_pass(model, batch)
    return _backward_pass(model, cache, np.asarray([label]))


@dataclass
class AdaGradState:
    learning_rate: float = 0.01
    damping: float = 1e-8
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: SpectralConvNet, learning_rate: float = 0.01,
                  damping: float = 1e-8) -> "AdaGradState":
        return cls(learning_rate=learning_rate, damping=damping,
                   accumulators={k: np.zeros_like(v)
                                 for k, v in model.parameters().items()})


def adagrad_step(state: AdaGradState, params: dict[str, np.ndarray],
                 grads: dict[str, np.ndarray],
                 skip: frozenset = frozenset()) -> dict[str, np.ndarray]:
    """In-place AdaGrad update; blocks whose layer id is in `skip` are untouched."""
    for name, grad in grads.items():
        if name.split(".")[0] in skip:
            continue
        acc = state.accumulators[name]
        acc += grad * grad
        params[name] -= state.learning_rate * grad / (np.sqrt(acc) + state.damping)
    return params


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.01
    seed: int = 0
    val_fraction: float = 0.0
    frozen: frozenset = frozenset()
    eig_count: int = 0  # decompositions spent preparing this model's basis


@dataclass
class ReportRow:
    epoch: int
    split: str
    loss: float
    accuracy: float
    seconds: float
    eig_count: int


@dataclass
class TrainingReport:
    rows: list[ReportRow] = field(default_factory=list)
    aborted: bool = False

    def final(self, split: str) -> ReportRow | None:
        matching = [r for r in self.rows if r.split == split]
        return matching[-1] if matching else None


def train(model: SpectralConvNet, corpus: Corpus, basis: SpectralBasis,
          config: TrainConfig) -> TrainingReport:
    """Mini-batch AdaGrad training; deterministic for a fixed config seed.

    Frozen layers (by id, e.g. "conv0") receive no updates and stay
    bit-identical. A non-finite loss aborts training and restores the
    parameters from the end of the last finite epoch.
    """
    if basis.num_nodes != model.num_nodes:
        raise DataError("basis does not match the model")
    if len(corpus.vocabulary) != model.num_nodes:
        raise DataError(
            f"corpus vocabulary size {len(corpus.vocabulary)} != "
            f"{model.num_nodes} graph nodes"
        )
    unknown = set(config.frozen) - set(model.layer_ids())
    if unknown:
        raise ConfigError(f"frozen set names unknown layers: {sorted(unknown)}")

    report = TrainingReport()
    if config.epochs == 0:
        return report

    X, y, _ = signal_matrix(corpus, corpus.vocabulary, drop_empty=True)
    if X.shape[0] == 0:
        raise DataError("no trainable documents after out-of-vocabulary filtering")
    split_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(41,)))
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(42,)))
    if config.val_fraction > 0.0:
        train_idx, val_idx = stratified_holdout(y, config.val_fraction, split_rng)
    else:
        train_idx = np.arange(X.shape[0])
        val_idx = np.empty(0, dtype=np.int64)

    params = model.parameters()
    state = AdaGradState.for_model(model, learning_rate=config.learning_rate)
    snapshot = {k: v.copy() for k, v in params.items()}

    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        total_loss = 0.0
        total_correct = 0
        finite = True
        for lo in range(0, len(order), config.batch_size):
            chunk = order[lo:lo + config.batch_size]
            try:
                probs, cache = _forward_pass(model, X[chunk])
                batch_loss = float(-np.log(np.maximum(
                    probs[np.arange(len(chunk)), y[chunk]],
                    PROBABILITY_FLOOR)).mean())
                if not np.isfinite(batch_loss):
                    raise NumericError("non-finite batch loss")
                grads = _backward_pass(model, cache, y[chunk])
            except NumericError:
                finite = False
                break
            total_loss += batch_loss * len(chunk)
            total_correct += int((probs.argmax(axis=1) == y[chunk]).sum())
            adagrad_step(state, params, grads, skip=config.frozen)
        elapsed = time.perf_counter() - started
        if not finite:
            for k, v in params.items():
                v[...] = snapshot[k]
            report.aborted = True
            break
        for k, v in params.items():
            snapshot[k][...] = v
        report.rows.append(ReportRow(epoch=epoch, split="train",
                                     loss=total_loss / len(order),
                                     accuracy=total_correct / len(order),
                                     seconds=elapsed, eig_count=config.eig_count))
        if len(val_idx):
            val_loss, val_acc = _score(model, X[val_idx], y[val_idx])
            report.rows.append(ReportRow(epoch=epoch, split="val", loss=val_loss,
                                         accuracy=val_acc, seconds=elapsed,
                                         eig_count=config.eig_count))
    return report


def _score(model, X, y, batch_size: int = 256):
    total_loss = 0.0
    correct = 0
    for lo in range(0, X.shape[0], batch_size):
        chunk = slice(lo, lo + batch_size)
        probs, _ = _forward_pass(model, X[chunk])
        labels = y[chunk]
        picked = np.maximum(probs[np.arange(len(labels)), labels],
                            PROBABILITY_FLOOR)
        total_loss += float(-np.log(picked).sum())
        correct += int((probs.argmax(axis=1) == labels).sum())
    return total_loss / X.shape[0], correct / X.shape[0]


@dataclass
class EvalResult:
    accuracy: float
    mean_loss: float
    confusion: np.ndarray  # [true, predicted]


def evaluate(model: SpectralConvNet, corpus: Corpus) -> EvalResult:
    """Accuracy, mean loss and confusion matrix over a whole corpus."""
    if not corpus.documents:
        raise DataError("cannot evaluate on an empty corpus")
    X, y, _ = signal_matrix(corpus, corpus.vocabulary)
    confusion = np.zeros((model.num_classes, model.num_classes), dtype=np.int64)
    total_loss = 0.0
    for lo in range(0, X.shape[0], 256):
        chunk = slice(lo, lo + 256)
        probs, _ = _forward_pass(model, X[chunk])
        labels = y[chunk]
        predictions = probs.argmax(axis=1)
        picked = np.maximum(probs[np.arange(len(labels)), labels],
                            PROBABILITY_FLOOR)
        total_loss += float(-np.log(picked).sum())
        np.add.at(confusion, (labels, predictions), 1)
    accuracy = float(np.trace(confusion)) / X.shape[0]
    return EvalResult(accuracy=accuracy, mean_loss=total_loss / X.shape[0],
                      confusion=confusion)


_MAGIC = b"SCNV"
_VERSION = 1
_HEAD = struct.Struct("<4sII")  # magic, version, header length


def save_checkpoint(model: SpectralConvNet, path: str) -> None:
    """Binary checkpoint: JSON structure header, then raw parameter blocks.

    The header records the architecture string and the checksum of the
    spectral basis the model was trained against; loading verifies both.
    Parameter blocks are little-endian float64 in declaration order.
    """
    import json

    blocks = model.parameters()
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes()
                       for v in blocks.values())
    header = {
        "arch": model.arch,
        "num_classes": model.num_classes,
        "num_nodes": model.num_nodes,
        "pooling": model.pooling,
        "basis_checksum": basis_checksum(model.basis),
        "conv": [
            {
                "in_maps": l.in_maps,
                "out_maps": l.out_maps,
                "basis_dim": l.basis_dim,
                "parameterization": l.parameterization,
                "width": int(l.weights.shape[2]),
                "lambda_scale": l.lambda_scale,
            }
            for l in model.conv_layers
        ],
        "fc": [[int(l.weights.shape[0]), int(l.weights.shape[1])]
               for l in model.fc_layers],
        "payload_crc": payload_checksum(payload),
    }
    head_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    atomic_write_bytes(path, _HEAD.pack(_MAGIC, _VERSION, len(head_bytes))
                       + head_bytes + payload)


def load_checkpoint(path: str, basis: SpectralBasis) -> SpectralConvNet:
    import json

    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEAD.size:
        raise DataError(f"{path}: truncated checkpoint")
    magic, version, head_len = _HEAD.unpack_from(blob)
    if magic != _MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    if version != _VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[_HEAD.size:_HEAD.size + head_len].decode("utf-8"))
    payload = blob[_HEAD.size + head_len:]
    if payload_checksum(payload) != header["payload_crc"]:
        raise DataError(f"{path}: checkpoint payload checksum mismatch")
    if header["basis_checksum"] != basis_checksum(basis):
        raise DataError(
            f"{path}: checkpoint was trained against a different spectral basis"
        )
    if header["num_nodes"] != basis.num_nodes:
        raise DataError(f"{path}: node count does not match the basis")

    conv_layers = []
    offset = 0
    raw = np.frombuffer(payload, dtype="<f8")
    for meta in header["conv"]:
        shape = (meta["in_maps"], meta["out_maps"], meta["width"])
        size = int(np.prod(shape))
        weights = raw[offset:offset + size].reshape(shape).copy()
        offset += size
        conv_layers.append(GraphConvLayer(
            in_maps=meta["in_maps"], out_maps=meta["out_maps"],
            basis_dim=meta["basis_dim"],
            parameterization=meta["parameterization"], weights=weights,
            lambda_scale=meta["lambda_scale"]))
    fc_layers = []
    for out_dim, in_dim in header["fc"]:
        size = out_dim * in_dim
        weights = raw[offset:offset + size].reshape(out_dim, in_dim).copy()
        offset += size
        bias = raw[offset:offset + out_dim].copy()
        offset += out_dim
        fc_layers.append(FullyConnectedLayer(weights=weights, bias=bias))
    if offset != raw.shape[0]:
        raise DataError(f"{path}: checkpoint payload size mismatch")
    return SpectralConvNet(basis=basis, conv_layers=conv_layers,
                           fc_layers=fc_layers,
                           num_classes=header["num_classes"],
                           arch=header["arch"], pooling=header["pooling"])
