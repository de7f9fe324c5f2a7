"""Full-ranking Top-N evaluation and cross-validated reporting.

Scoring is the dot product of the final user and item representations.
For each evaluated user, every item she did not train on is ranked; the
truncated list is scored with precision, recall and NDCG (binary gains,
log2 discount).  Metrics are macro-averaged over users with at least one
held-out item, then averaged over folds.  Reports carry percentages.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

_CHUNK = 256


@dataclass(frozen=True)
class EvalReport:
    """Per-fold and averaged ranking metrics, in percent."""

    per_fold: tuple      # ((precision, recall, ndcg), ...) per fold
    mean: tuple          # averaged over folds
    cutoff: int

    def format(self) -> str:
        lines = [f"cutoff={self.cutoff}", f"folds={len(self.per_fold)}"]
        header = f"fold\tprecision@{self.cutoff}\trecall@{self.cutoff}\tndcg@{self.cutoff}"
        lines.append(header)
        for fold_id, row in enumerate(self.per_fold, 1):
            lines.append(f"{fold_id}\t" + "\t".join(f"{v:.3f}" for v in row))
        lines.append("mean\t" + "\t".join(f"{v:.3f}" for v in self.mean))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.format(), encoding="utf-8")


def rank_items(user_factors, item_factors, user: int, exclude, cutoff: int):
    """Top items for one user by score, highest first.

    Items in ``exclude`` never appear.  Ties break toward the smaller item
    index.  If fewer than ``cutoff`` items remain, all of them are
    returned.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1")
    scores = np.asarray(item_factors) @ np.asarray(user_factors)[user]
    exclude = np.fromiter(exclude, dtype=np.int64) if not isinstance(exclude, np.ndarray) else exclude
    if exclude.size:
        scores = scores.copy()
        scores[exclude] = -np.inf
    order = np.argsort(-scores, kind="stable")
    available = scores.shape[0] - exclude.size
    return order[: min(cutoff, max(available, 0))]


def metrics_at_n(recommended, relevant, cutoff: int):
    """(precision, recall, ndcg) for one ranked list, each in [0, 1]."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1")
    top = list(recommended[:cutoff])
    hits = sum(1 for item in top if item in relevant)
    precision = hits / cutoff
    recall = hits / len(relevant)
    dcg = sum(
        1.0 / np.log2(rank + 2) for rank, item in enumerate(top) if item in relevant
    )
    ideal = sum(1.0 / np.log2(rank + 2) for rank in range(min(cutoff, len(relevant))))
    ndcg = dcg / ideal
    return precision, recall, ndcg


def evaluate_rankings(user_factors, item_factors, exclude_sets, relevant_by_user, cutoff: int):
    """Macro-averaged (precision, recall, ndcg) over users with test items.

    ``exclude_sets`` gives each user's training items; ``relevant_by_user``
    maps user index to the held-out item set.  Users without held-out
    items are skipped.
    """
    users = sorted(u for u, items in relevant_by_user.items() if items)
    if not users:
        raise ValueError("no users with held-out items to evaluate")
    user_factors = np.asarray(user_factors)
    item_factors = np.asarray(item_factors)
    totals = np.zeros(3)
    for start in range(0, len(users), _CHUNK):
        chunk = users[start : start + _CHUNK]
        scores = user_factors[chunk] @ item_factors.T
        for row, user in enumerate(chunk):
            excluded = np.fromiter(exclude_sets[user], dtype=np.int64, count=len(exclude_sets[user]))
            row_scores = scores[row]
            if excluded.size:
                row_scores = row_scores.copy()
                row_scores[excluded] = -np.inf
            order = np.argsort(-row_scores, kind="stable")
            available = row_scores.shape[0] - excluded.size
            top = order[: min(cutoff, max(available, 0))]
            totals += metrics_at_n(top, relevant_by_user[user], cutoff)
    return tuple(totals / len(users))


def group_pairs_by_user(pairs) -> dict:
    grouped: dict = {}
    for user, item in pairs:
        grouped.setdefault(int(user), set()).add(int(item))
    return grouped


def cross_validate(config, graph, social, k: int, cutoff: int = 10) -> EvalReport:
    """Train and evaluate once per fold, then average.

    Deterministic for a fixed config seed: the same seed drives the fold
    partition and every per-fold run.
    """
    from .data import kfold_split
    from .training import train

    if k < 2:
        raise ValueError("k must be at least 2")
    folds = kfold_split(graph, k, seed=config.seed)
    per_fold = []
    for fold in folds:
        try:
            result = train(config, fold.train, social)
        except Exception as err:
            raise RuntimeError(f"training failed on fold {fold.fold_id}") from err
        metrics = evaluate_rankings(
            result.user_factors,
            result.item_factors,
            fold.train.item_sets,
            group_pairs_by_user(fold.test),
            cutoff,
        )
        per_fold.append(tuple(100.0 * v for v in metrics))
    mean = tuple(float(np.mean([row[j] for row in per_fold])) for j in range(3))
    return EvalReport(per_fold=tuple(per_fold), mean=mean, cutoff=cutoff)
