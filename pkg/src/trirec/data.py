"""Dataset ingestion and cross-validation splitting.

Input files are plain whitespace-separated text, one record per line:

* ratings:  ``user item [rating]``  (rating defaults to 1)
* trust:    ``user user [weight]``  (weight is ignored)

These are the formats the public benchmark dumps ship in.  Some of those
dumps carry a leading header row; pass ``skip_lines=1`` to step over it.

The user index space is defined by the ratings file alone.  Trust edges
mentioning unknown users are dropped so the interaction matrix and the
social matrix always share one index space.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .sparse import SparseMatrix


class ParseError(ValueError):
    """A malformed input line; carries the 1-based line number."""

    def __init__(self, path, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = path
        self.line_number = line_number


class DatasetError(ValueError):
    """The parsed dataset is unusable (e.g. empty)."""


class SplitError(ValueError):
    """A cross-validation split cannot be formed."""


@dataclass(eq=False)
class InteractionGraph:
    """Binary user-item interactions plus the external-id mappings."""

    n_users: int
    n_items: int
    matrix: SparseMatrix
    user_ids: tuple
    item_ids: tuple

    def __post_init__(self):
        if len(self.user_ids) != self.n_users or len(self.item_ids) != self.n_items:
            raise DatasetError("id maps must match the declared dimensions")
        if self.matrix.shape != (self.n_users, self.n_items):
            raise DatasetError("interaction matrix shape mismatch")
        if self.matrix.nnz and not np.all(self.matrix.values == 1.0):
            raise DatasetError("interaction matrix must be binary")

    @property
    def n_interactions(self) -> int:
        return self.matrix.nnz

    @cached_property
    def user_index(self) -> dict:
        return {uid: idx for idx, uid in enumerate(self.user_ids)}

    @cached_property
    def item_index(self) -> dict:
        return {iid: idx for idx, iid in enumerate(self.item_ids)}

    @cached_property
    def interaction_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(users, items) index arrays in row-major matrix order, read-only."""
        counts = np.diff(self.matrix.row_offsets)
        users = np.repeat(np.arange(self.n_users), counts)
        items = self.matrix.col_indices.copy()
        users.setflags(write=False)
        items.setflags(write=False)
        return users, items

    def interaction_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Copies of :attr:`interaction_arrays`, safe to mutate."""
        users, items = self.interaction_arrays
        return users.copy(), items.copy()

    @cached_property
    def item_sets(self) -> tuple[frozenset, ...]:
        """Per-user sets of interacted item indices."""
        offsets, cols = self.matrix.row_offsets, self.matrix.col_indices
        return tuple(
            frozenset(cols[offsets[u] : offsets[u + 1]].tolist())
            for u in range(self.n_users)
        )

    def with_matrix(self, matrix: SparseMatrix) -> "InteractionGraph":
        """Same universe of users/items, different interaction set."""
        return InteractionGraph(
            n_users=self.n_users,
            n_items=self.n_items,
            matrix=matrix,
            user_ids=self.user_ids,
            item_ids=self.item_ids,
        )


@dataclass(eq=False)
class SocialNetwork:
    """Symmetric, zero-diagonal binary user-user relations."""

    n_users: int
    matrix: SparseMatrix

    def __post_init__(self):
        if self.matrix.shape != (self.n_users, self.n_users):
            raise DatasetError("social matrix must be square over the user space")

    @property
    def n_relations(self) -> int:
        return self.matrix.nnz

    @classmethod
    def empty(cls, n_users: int) -> "SocialNetwork":
        return cls(n_users, SparseMatrix.zeros((n_users, n_users)))


@dataclass(eq=False)
class FoldSplit:
    """One train/test split of a k-fold partition over interactions."""

    train: InteractionGraph
    test: list  # (user index, item index) held-out positives
    fold_id: int
    seed: int


def _open_lines(path):
    if isinstance(path, io.StringIO):
        return path
    return open(Path(path), "r", encoding="utf-8")


def load_interactions(path, rating_threshold=None, skip_lines: int = 0) -> InteractionGraph:
    """Parse a ratings file into a binarized interaction graph.

    Records with a rating below ``rating_threshold`` are dropped (when a
    threshold is given); everything kept becomes a 1.  Duplicate pairs
    collapse to one entry.  Ids are assigned in order of first appearance
    among the kept records.
    """
    user_index: dict = {}
    item_index: dict = {}
    user_ids: list = []
    item_ids: list = []
    pairs: set = set()
    with _open_lines(path) as handle:
        for line_number, raw in enumerate(handle, 1):
            if line_number <= skip_lines:
                continue
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) == 2:
                rating = 1.0
            elif len(parts) == 3:
                try:
                    rating = float(parts[2])
                except ValueError:
                    raise ParseError(path, line_number, f"bad rating {parts[2]!r}") from None
            else:
                raise ParseError(path, line_number, f"expected 2 or 3 fields, got {len(parts)}")
            if rating_threshold is not None and rating < rating_threshold:
                continue
            user, item = parts[0], parts[1]
            if user not in user_index:
                user_index[user] = len(user_ids)
                user_ids.append(user)
            if item not in item_index:
                item_index[item] = len(item_ids)
                item_ids.append(item)
            pairs.add((user_index[user], item_index[item]))
    if not pairs:
        raise DatasetError(f"no interactions parsed from {path}")
    rows, cols = zip(*sorted(pairs))
    matrix = SparseMatrix.from_coo(
        rows, cols, np.ones(len(pairs)), shape=(len(user_ids), len(item_ids))
    )
    return InteractionGraph(
        n_users=len(user_ids),
        n_items=len(item_ids),
        matrix=matrix,
        user_ids=tuple(user_ids),
        item_ids=tuple(item_ids),
    )


def load_social(path, users, skip_lines: int = 0) -> SocialNetwork:
    """Parse a trust file into a symmetrized, self-loop-free social network.

    ``users`` is an id-to-index mapping (or an :class:`InteractionGraph`);
    edges touching users outside it are dropped.
    """
    if isinstance(users, InteractionGraph):
        index = users.user_index
    else:
        index = dict(users)
    n_users = len(index)
    edges: set = set()
    with _open_lines(path) as handle:
        for line_number, raw in enumerate(handle, 1):
            if line_number <= skip_lines:
                continue
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise ParseError(path, line_number, f"expected 2 or 3 fields, got {len(parts)}")
            a, b = parts[0], parts[1]
            if a == b:
                continue
            ia = index.get(a)
            ib = index.get(b)
            if ia is None or ib is None:
                continue
            edges.add((ia, ib))
            edges.add((ib, ia))
    if edges:
        rows, cols = zip(*sorted(edges))
        values = np.ones(len(edges))
    else:
        rows, cols, values = (), (), ()
    matrix = SparseMatrix.from_coo(rows, cols, values, shape=(n_users, n_users))
    return SocialNetwork(n_users=n_users, matrix=matrix)


def interactions_from_pairs(pairs: Iterable, n_users=None, n_items=None) -> InteractionGraph:
    """Build a graph from (user index, item index) integer pairs."""
    pairs = [(int(u), int(i)) for u, i in pairs]
    if not pairs:
        raise DatasetError("no interactions given")
    users = max(u for u, _ in pairs) + 1 if n_users is None else int(n_users)
    items = max(i for _, i in pairs) + 1 if n_items is None else int(n_items)
    unique = sorted(set(pairs))
    rows = [u for u, _ in unique]
    cols = [i for _, i in unique]
    matrix = SparseMatrix.from_coo(rows, cols, np.ones(len(unique)), shape=(users, items))
    return InteractionGraph(
        n_users=users,
        n_items=items,
        matrix=matrix,
        user_ids=tuple(range(users)),
        item_ids=tuple(range(items)),
    )


def social_from_pairs(pairs: Iterable, n_users: int) -> SocialNetwork:
    """Build a social network from (user index, user index) integer pairs."""
    edges = set()
    for a, b in pairs:
        a, b = int(a), int(b)
        if a == b:
            continue
        edges.add((a, b))
        edges.add((b, a))
    if edges:
        rows, cols = zip(*sorted(edges))
        values = np.ones(len(edges))
    else:
        rows, cols, values = (), (), ()
    return SocialNetwork(
        n_users=n_users,
        matrix=SparseMatrix.from_coo(rows, cols, values, shape=(n_users, n_users)),
    )


def kfold_split(graph: InteractionGraph, k: int, seed: int) -> list[FoldSplit]:
    """Partition the interactions into k near-equal test folds.

    Every interaction lands in exactly one test fold; the matching train
    graph keeps the full user/item universe, so users whose interactions
    are all held out simply have an empty training row.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    total = graph.n_interactions
    if total == 0:
        raise DatasetError("cannot split an empty graph")
    if k > total:
        raise SplitError(f"cannot split {total} interactions into {k} folds")
    users, items = graph.interaction_pairs()
    order = np.random.default_rng(seed).permutation(total)
    base, extra = divmod(total, k)
    folds = []
    start = 0
    for fold_id in range(k):
        size = base + (1 if fold_id < extra else 0)
        test_idx = order[start : start + size]
        start += size
        test_mask = np.zeros(total, dtype=bool)
        test_mask[test_idx] = True
        train_matrix = SparseMatrix.from_coo(
            users[~test_mask],
            items[~test_mask],
            np.ones(total - size),
            shape=graph.matrix.shape,
        )
        test_pairs = sorted(zip(users[test_mask].tolist(), items[test_mask].tolist()))
        folds.append(
            FoldSplit(
                train=graph.with_matrix(train_matrix),
                test=test_pairs,
                fold_id=fold_id,
                seed=seed,
            )
        )
    return folds
