"""Layer-averaged graph-convolution encoder over shared node embeddings.

One dense embedding table is the only learned parameter anywhere in the
model.  An encoder repeatedly multiplies the (already normalized)
adjacency of a view into the embeddings and averages the propagation
layers, including layer zero:

    X^0 = E,   X^l = A X^(l-1),   Z = mean(X^0 .. X^L)

There are no feature transforms or nonlinearities, so the whole map is
linear in E and its exact adjoint is the same recurrence with the
transposed adjacency.  Views over the social graphs consume only the user
slice of the table; the bipartite and joint views consume all rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sparse import DomainError, ShapeError, SparseMatrix, spmm, transpose

_CHECKPOINT_MAGIC = b"TRIREC-EMB-1\n"


@dataclass(eq=False)
class EmbeddingTable:
    """Shared bottom embeddings for all users and items."""

    weights: np.ndarray  # (n_users + n_items) x dim, float64
    n_users: int
    n_items: int
    dim: int
    seed: int

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        expected = (self.n_users + self.n_items, self.dim)
        if self.weights.shape != expected:
            raise ShapeError(f"weights must have shape {expected}")
        if not np.all(np.isfinite(self.weights)):
            raise DomainError("embedding weights must be finite")

    @property
    def user_weights(self) -> np.ndarray:
        return self.weights[: self.n_users]

    @property
    def item_weights(self) -> np.ndarray:
        return self.weights[self.n_users :]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(
            self.weights.copy(), self.n_users, self.n_items, self.dim, self.seed
        )


@dataclass(eq=False)
class EncodedView:
    """Output of one encoder pass, with per-layer activations kept for the
    backward pass."""

    embeddings: np.ndarray       # mean over layers
    layers: list                 # [X^0 .. X^L]
    rows: int                    # leading embedding rows consumed

    @property
    def n_layers(self) -> int:
        return len(self.layers) - 1


def init_embeddings(n_users: int, n_items: int, dim: int, seed: int) -> EmbeddingTable:
    """Uniform init in [-0.5/sqrt(dim), 0.5/sqrt(dim)], deterministic in seed."""
    if dim < 1:
        raise DomainError("embedding dimension must be positive")
    scale = 0.5 / np.sqrt(dim)
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-scale, scale, size=(n_users + n_items, dim))
    return EmbeddingTable(weights, n_users, n_items, dim, seed)


def encode(table: EmbeddingTable, view: SparseMatrix, n_layers: int) -> EncodedView:
    """Propagate embeddings over a view and average the layers.

    ``view`` must be square and match either the full table (bipartite or
    joint graphs) or the user slice (social graphs).
    """
    if n_layers < 0:
        raise DomainError("layer count must be non-negative")
    if view.n_rows != view.n_cols:
        raise ShapeError("views must be square adjacencies")
    total = table.weights.shape[0]
    if view.n_rows == total:
        base = table.weights
    elif view.n_rows == table.n_users:
        base = table.user_weights
    else:
        raise ShapeError(
            f"view of size {view.n_rows} matches neither all {total} rows "
            f"nor the {table.n_users} user rows"
        )
    layers = [base.copy()]
    for _ in range(n_layers):
        layers.append(spmm(view, layers[-1]))
    mean = sum(layers[1:], layers[0].copy()) / (n_layers + 1)
    return EncodedView(embeddings=mean, layers=layers, rows=view.n_rows)


def encode_backward(cache: EncodedView, grad: np.ndarray, view: SparseMatrix) -> np.ndarray:
    """Adjoint of :func:`encode`: gradient w.r.t. the consumed embedding rows.

    Uses the transposed adjacency, which for the symmetric views used in
    training equals the adjacency itself.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != cache.embeddings.shape:
        raise ShapeError("gradient shape must match the encoded output")
    if view.n_rows != cache.rows or view.n_cols != cache.rows:
        raise ShapeError("view does not match the cached encoding")
    adjoint = transpose(view)
    acc = grad.copy()
    total = grad.copy()
    for _ in range(cache.n_layers):
        acc = spmm(adjoint, acc)
        total += acc
    return total / (cache.n_layers + 1)


def save_embeddings(table: EmbeddingTable, path) -> None:
    """Write a checkpoint that round-trips bit-exactly."""
    header = {
        "n_users": table.n_users,
        "n_items": table.n_items,
        "dim": table.dim,
        "seed": table.seed,
    }
    payload = np.ascontiguousarray(table.weights, dtype="<f8").tobytes()
    with open(Path(path), "wb") as handle:
        handle.write(_CHECKPOINT_MAGIC)
        handle.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        handle.write(b"\n")
        handle.write(payload)


def load_embeddings(path) -> EmbeddingTable:
    with open(Path(path), "rb") as handle:
        magic = handle.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not an embedding checkpoint")
        header = json.loads(handle.readline().decode("utf-8"))
        raw = handle.read()
    rows = header["n_users"] + header["n_items"]
    weights = np.frombuffer(raw, dtype="<f8").reshape(rows, header["dim"]).copy()
    return EmbeddingTable(
        weights=weights,
        n_users=header["n_users"],
        n_items=header["n_items"],
        dim=header["dim"],
        seed=header["seed"],
    )
