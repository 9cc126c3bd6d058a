"""Laplacians, graph Fourier bases, and spectral filtering.

Three Laplacian variants are supported:

    basic  D - A
    rw     I - D^-1 A
    rwr    [I + eps^2 D - eps A]^-1   (random walk with restart, direct inverse)

The rwr operator also admits the one-parameter approximation [I - eps A]^-1,
reachable through its truncated Neumann series (`rwr_series`). Both forms are
exposed because they genuinely differ; `laplacian` always computes the exact
direct inverse.

The rw and rwr matrices are not symmetric in general, so eigendecomposition
acts on a symmetrized stand-in: D^-1/2 (D - A) D^-1/2 for rw (similar to the
rw operator, identical spectrum) and (S + S^T)/2 for rwr, which only removes
inversion round-off since the exact inverse of a symmetric matrix is
symmetric. The basis records which operator it came from.

Node and frequency indices are 0-based throughout.
"""

import struct
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .exceptions import DataError, NumericError
from .fileio import atomic_write_bytes, payload_checksum
from .graph import Graph

LaplacianKind = Literal["basic", "rw", "rwr"]

_KIND_TAGS = {"basic": 0, "rw": 1, "rwr": 2}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}

# Count of eigendecompositions performed in this process. Transfer re-uses a
# source basis, and reports assert the re-use by showing a zero delta here.
_decompositions = 0


def decomposition_count() -> int:
    return _decompositions


@dataclass(frozen=True)
class Laplacian:
    kind: LaplacianKind
    matrix: np.ndarray
    degree: np.ndarray
    epsilon: float | None = None


@dataclass(frozen=True)
class SpectralBasis:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a Laplacian.

    Column l of `eigenvectors` is the frequency-l basis vector. The matrix
    may be rectangular (N x d) after truncation to the d lowest frequencies.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source_kind: LaplacianKind

    @property
    def num_nodes(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def dim(self) -> int:
        return self.eigenvectors.shape[1]


def laplacian(g: Graph, kind: LaplacianKind = "basic",
              epsilon: float | None = None) -> Laplacian:
    """Build the requested Laplacian variant from a graph."""
    adjacency = g.adjacency
    degree = g.degrees()
    n = adjacency.shape[0]
    if kind == "basic":
        matrix = np.diag(degree) - adjacency
        return Laplacian(kind="basic", matrix=matrix, degree=degree)
    if kind == "rw":
        if np.any(degree == 0.0):
            raise DataError("rw Laplacian undefined: graph has zero-degree nodes")
        matrix = np.eye(n) - adjacency / degree[:, None]
        return Laplacian(kind="rw", matrix=matrix, degree=degree)
    if kind == "rwr":
        if epsilon is None:
            epsilon = 0.1
        if not 0.0 < epsilon < 1.0:
            raise DataError(f"restart probability must lie in (0, 1), got {epsilon}")
        system = np.eye(n) + epsilon * epsilon * np.diag(degree) - epsilon * adjacency
        try:
            matrix = np.linalg.inv(system)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"rwr system is singular: {exc}") from exc
        if not np.all(np.isfinite(matrix)):
            raise NumericError("rwr inverse has non-finite entries")
        return Laplacian(kind="rwr", matrix=matrix, degree=degree, epsilon=epsilon)
    raise DataError(f"unknown Laplacian kind {kind!r}")


def spectral_radius_estimate(matrix: np.ndarray, iterations: int = 200) -> float:
    """Dominant |eigenvalue| of a symmetric matrix by power iteration."""
    n = matrix.shape[0]
    v = np.ones(n) + 1e-3 * np.arange(n) / max(1, n)
    v /= np.linalg.norm(v)
    value = 0.0
    for _ in range(iterations):
        w = matrix @ v
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            return 0.0
        v = w / norm
        new_value = float(abs(v @ (matrix @ v)))
        if abs(new_value - value) <= 1e-12 * max(1.0, new_value):
            return new_value
        value = new_value
    return value


def rwr_series(g: Graph, epsilon: float, terms: int) -> np.ndarray:
    """Truncated Neumann series I + eps A + (eps A)^2 + ... with `terms` powers.

    Converges to the dense inverse of (I - eps A) provided the spectral
    radius of eps A is below one, which is checked by power iteration.
    """
    if terms < 1:
        raise DataError(f"terms must be >= 1, got {terms}")
    radius = epsilon * spectral_radius_estimate(g.adjacency)
    if radius >= 1.0:
        raise NumericError(
            f"series diverges: spectral radius of eps*A is {radius:.4f} >= 1"
        )
    n = g.num_nodes
    scaled = epsilon * g.adjacency
    total = np.eye(n)
    power = np.eye(n)
    for _ in range(terms):
        power = power @ scaled
        total += power
    return total


def eigendecompose(lap: Laplacian) -> SpectralBasis:
    """Full symmetric eigendecomposition of the (symmetrized) operator.

    Eigenvalues ascend; each eigenvector's sign is fixed so its
    largest-magnitude entry (first such entry on ties) is positive, making
    repeated decompositions comparable on non-degenerate spectra.
    """
    global _decompositions
    if lap.kind == "basic":
        operator = lap.matrix
    elif lap.kind == "rw":
        if np.any(lap.degree <= 0.0):
            raise DataError("rw Laplacian has zero-degree nodes")
        scale = 1.0 / np.sqrt(lap.degree)
        operator = (np.diag(lap.degree) - _rw_to_adjacency(lap)) * np.outer(scale, scale)
    else:  # rwr: exact inverse of a symmetric matrix, clean up round-off
        operator = (lap.matrix + lap.matrix.T) / 2.0
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(operator)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed to converge: {exc}") from exc
    _decompositions += 1
    flip = eigenvectors[np.argmax(np.abs(eigenvectors), axis=0),
                        np.arange(eigenvectors.shape[1])] < 0.0
    eigenvectors = eigenvectors * np.where(flip, -1.0, 1.0)
    return SpectralBasis(eigenvalues=eigenvalues, eigenvectors=eigenvectors,
                         source_kind=lap.kind)


def _rw_to_adjacency(lap: Laplacian) -> np.ndarray:
    # L^rw = I - D^-1 A, so A = D (I - L^rw).
    return lap.degree[:, None] * (np.eye(lap.matrix.shape[0]) - lap.matrix)


def gft(basis: SpectralBasis, f: np.ndarray) -> np.ndarray:
    """Forward graph Fourier transform: coefficients U^T f."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] != basis.num_nodes:
        raise DataError(f"signal length {f.shape[0]} != {basis.num_nodes} nodes")
    return basis.eigenvectors.T @ f


def igft(basis: SpectralBasis, f_hat: np.ndarray) -> np.ndarray:
    """Inverse graph Fourier transform: node signal U f_hat."""
    f_hat = np.asarray(f_hat, dtype=np.float64)
    if f_hat.shape[0] != basis.dim:
        raise DataError(f"coefficient length {f_hat.shape[0]} != basis dim {basis.dim}")
    return basis.eigenvectors @ f_hat


def spectral_convolve(basis: SpectralBasis, f: np.ndarray,
                      g_hat: np.ndarray) -> np.ndarray:
    """Filter a node signal by per-frequency multipliers: U diag(g_hat) U^T f."""
    g_hat = np.asarray(g_hat, dtype=np.float64)
    if g_hat.shape[0] != basis.dim:
        raise DataError(f"multiplier length {g_hat.shape[0]} != basis dim {basis.dim}")
    return igft(basis, g_hat * gft(basis, f))


def polynomial_multipliers(basis: SpectralBasis, coefficients: np.ndarray,
                           lambda_scale: float = 1.0) -> np.ndarray:
    """Evaluate sum_k a_k lambda^k at every eigenvalue, by Horner's scheme.

    With lambda_scale, the polynomial is evaluated in lambda / lambda_scale;
    high-degree kernels need the rescaling to stay inside double range.
    """
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.ndim != 1 or coefficients.shape[0] < 1:
        raise DataError("coefficient vector must be one-dimensional and non-empty")
    if coefficients.shape[0] - 1 >= basis.dim:
        raise DataError(
            f"polynomial degree {coefficients.shape[0] - 1} must be < basis "
            f"dimension {basis.dim}"
        )
    lam = basis.eigenvalues / lambda_scale
    out = np.full(basis.dim, coefficients[-1], dtype=np.float64)
    for a_k in coefficients[-2::-1]:
        out = out * lam + a_k
    return out


def truncate_basis(basis: SpectralBasis, d: int) -> SpectralBasis:
    """Keep the d lowest-frequency eigenpairs; convolution then smooths to rank d."""
    if not 1 <= d <= basis.dim:
        raise DataError(f"truncation dimension {d} outside [1, {basis.dim}]")
    if d == basis.dim:
        return basis
    return SpectralBasis(eigenvalues=basis.eigenvalues[:d],
                         eigenvectors=basis.eigenvectors[:, :d],
                         source_kind=basis.source_kind)


_MAGIC = b"SPBC"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQII")  # magic, version, n, d, kind tag, checksum


def save_basis(basis: SpectralBasis, path: str) -> None:
    """Binary cache: header plus little-endian float64 eigenvalues and row-major U."""
    values = np.ascontiguousarray(basis.eigenvalues, dtype="<f8")
    vectors = np.ascontiguousarray(basis.eigenvectors, dtype="<f8")
    payload = values.tobytes() + vectors.tobytes()
    header = _HEADER.pack(_MAGIC, _VERSION, basis.num_nodes, basis.dim,
                          _KIND_TAGS[basis.source_kind], payload_checksum(payload))
    atomic_write_bytes(path, header + payload)


def load_basis(path: str) -> SpectralBasis:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise DataError(f"{path}: truncated basis cache")
    magic, version, n, d, tag, checksum = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise DataError(f"{path}: not a basis cache file")
    if version != _VERSION:
        raise DataError(f"{path}: unsupported basis cache version {version}")
    payload = blob[_HEADER.size:]
    if payload_checksum(payload) != checksum:
        raise DataError(f"{path}: basis cache checksum mismatch")
    expected = (d + n * d) * 8
    if len(payload) != expected:
        raise DataError(f"{path}: basis cache payload size mismatch")
    values = np.frombuffer(payload[:d * 8], dtype="<f8").copy()
    vectors = np.frombuffer(payload[d * 8:], dtype="<f8").reshape(n, d).copy()
    return SpectralBasis(eigenvalues=values, eigenvectors=vectors,
                         source_kind=_TAG_KINDS[tag])


def basis_checksum(basis: SpectralBasis) -> int:
    values = np.ascontiguousarray(basis.eigenvalues, dtype="<f8")
    vectors = np.ascontiguousarray(basis.eigenvectors, dtype="<f8")
    return payload_checksum(values.tobytes() + vectors.tobytes())
