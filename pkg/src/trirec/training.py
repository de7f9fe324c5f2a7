"""Pairwise ranking loss, optimizer, and the two-stage training loop.

Training runs in two stages.  A warm-up stage optimizes the ranking task
alone.  The joint stage then adds the contrastive task: once per epoch
the joint graph is re-perturbed, and within every batch the enabled views
are re-encoded, a fresh candidate pool is drawn, pseudo-labels are
regenerated from the current representations, and the combined objective

    total = ranking_loss + ssl_weight * contrastive_loss

is optimized by Adam over the single shared embedding table.  Pseudo-
labels steer the loss only; they are never written back into any
adjacency matrix.

Everything is deterministic in the config seed: independent generator
streams drive initialization, the validation holdout, batch sampling,
edge dropout and candidate sampling, so disabling the contrastive task
leaves the ranking trajectory untouched bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit

from .contrast import make_label_set, infonce
from .data import DatasetError, InteractionGraph, SocialNetwork
from .encoder import EmbeddingTable, encode, encode_backward, init_embeddings
from .evaluation import evaluate_rankings
from .sparse import DomainError, ShapeError, SparseMatrix, sym_normalize
from .views import augment_views, build_joint, perturb

VALID_VIEWS = ("friend", "sharing")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainingConfig:
    """All knobs for one training run."""

    embedding_dim: int = 50
    n_layers: int = 2
    reg_weight: float = 0.001
    ssl_weight: float = 0.005
    temperature: float = 0.1
    edge_dropout: float = 0.3
    n_positives: int = 10
    n_candidates: int = 1000
    learning_rate: float = 0.001
    batch_size: int = 2000
    warmup_epochs: int = 10
    max_epochs: int = 100
    seed: int = 0
    exclude_self: bool = False
    self_positive_only: bool = False
    enabled_views: tuple = VALID_VIEWS
    val_fraction: float = 0.05
    patience: int = 10

    def __post_init__(self):
        object.__setattr__(self, "enabled_views", tuple(self.enabled_views))
        if self.embedding_dim < 1:
            raise DomainError("embedding_dim must be positive")
        if self.n_layers < 0:
            raise DomainError("n_layers must be non-negative")
        if self.reg_weight < 0 or self.ssl_weight < 0:
            raise DomainError("loss weights must be non-negative")
        if self.temperature <= 0:
            raise DomainError("temperature must be positive")
        if not 0.0 <= self.edge_dropout < 1.0:
            raise DomainError("edge_dropout must be in [0, 1)")
        if self.n_positives < 1:
            raise DomainError("n_positives must be at least 1")
        if self.n_candidates < self.n_positives:
            raise DomainError("n_candidates must be at least n_positives")
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be positive")
        if self.batch_size < 1:
            raise DomainError("batch_size must be positive")
        if self.warmup_epochs < 0 or self.max_epochs < 1:
            raise DomainError("epoch counts out of range")
        if not 0.0 <= self.val_fraction < 1.0:
            raise DomainError("val_fraction must be in [0, 1)")
        if self.patience < 1:
            raise DomainError("patience must be at least 1")
        unknown = set(self.enabled_views) - set(VALID_VIEWS)
        if unknown:
            raise DomainError(f"unknown views: {sorted(unknown)}")


@dataclass(frozen=True)
class BprBatch:
    """Ranking triples; every positive item belongs to its user's history
    and every negative does not."""

    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self):
        return self.users.size


@dataclass(eq=False)
class BprResult:
    loss: float
    grad_users: np.ndarray   # dense m x d, gradient w.r.t. user factors
    grad_items: np.ndarray   # dense n x d, gradient w.r.t. item factors
    reg_rows: np.ndarray     # embedding rows regularized by this batch
    reg_grad: np.ndarray     # gradient of the L2 term on those rows


def bpr_loss(user_factors, item_factors, batch: BprBatch, reg_weight: float, weights):
    """Pairwise ranking loss with L2 on the embedding rows the batch touches.

    The score of a pair is the dot product of the user and item factors.
    Each triple contributes ``-log sigmoid(pos_score - neg_score)``; the
    regularizer is ``reg_weight`` times the squared norm of each distinct
    bottom-embedding row appearing in the batch.
    """
    user_factors = np.asarray(user_factors, dtype=np.float64)
    item_factors = np.asarray(item_factors, dtype=np.float64)
    n_users = user_factors.shape[0]
    n_items = item_factors.shape[0]
    u, i, j = batch.users, batch.pos_items, batch.neg_items
    if u.size and (u.max() >= n_users or max(i.max(), j.max()) >= n_items):
        raise IndexError("batch index outside the factor matrices")
    pu = user_factors[u]
    margin = np.einsum("bd,bd->b", pu, item_factors[i] - item_factors[j])
    loss = float(np.sum(np.logaddexp(0.0, -margin)))
    dmargin = -expit(-margin)

    grad_users = np.zeros_like(user_factors)
    grad_items = np.zeros_like(item_factors)
    np.add.at(grad_users, u, dmargin[:, None] * (item_factors[i] - item_factors[j]))
    np.add.at(grad_items, i, dmargin[:, None] * pu)
    np.add.at(grad_items, j, -dmargin[:, None] * pu)

    weights = np.asarray(weights, dtype=np.float64)
    reg_rows = np.unique(np.concatenate([u, n_users + i, n_users + j]))
    loss += reg_weight * float(np.sum(weights[reg_rows] ** 2))
    reg_grad = 2.0 * reg_weight * weights[reg_rows]
    return BprResult(loss, grad_users, grad_items, reg_rows, reg_grad)


def sample_bpr_batch(graph: InteractionGraph, batch_size: int, rng) -> BprBatch:
    """Uniformly sampled positives with one rejection-sampled negative each."""
    users_of, items_of = graph.interaction_arrays
    total = users_of.size
    if total == 0:
        raise DatasetError("cannot sample from an empty graph")
    sets = graph.item_sets
    n_items = graph.n_items
    saturated = np.array([len(s) >= n_items for s in sets], dtype=bool)
    if saturated[users_of].all():
        raise DatasetError("every user has consumed every item; no negatives exist")

    picks = rng.integers(0, total, size=batch_size)
    while True:
        bad = saturated[users_of[picks]]
        if not bad.any():
            break
        picks[bad] = rng.integers(0, total, size=int(bad.sum()))
    users = users_of[picks]
    pos = items_of[picks]
    neg = rng.integers(0, n_items, size=batch_size)
    while True:
        bad = np.fromiter(
            (neg[t] in sets[users[t]] for t in range(batch_size)), bool, batch_size
        )
        if not bad.any():
            break
        neg[bad] = rng.integers(0, n_items, size=int(bad.sum()))
    return BprBatch(users=users, pos_items=pos, neg_items=neg)


@dataclass(eq=False)
class AdamState:
    """Lazy Adam accumulators over the embedding table."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape))


def adam_step(weights, grad, state: AdamState, learning_rate: float, dense: bool = False):
    """Bias-corrected Adam update in place.

    Rows whose gradient is entirely zero are skipped (their moments do not
    decay) unless ``dense`` is set; the step counter always advances.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != weights.shape:
        raise ShapeError("gradient and parameter shapes differ")
    if not np.all(np.isfinite(grad)):
        bad_rows = np.nonzero(~np.isfinite(grad).all(axis=1))[0]
        raise DivergenceError(
            f"non-finite gradient in {bad_rows.size} rows (first: {bad_rows[:5].tolist()})"
        )
    state.step += 1
    if dense:
        rows = slice(None)
    else:
        rows = np.nonzero(np.any(grad != 0.0, axis=1))[0]
        if rows.size == 0:
            return weights, state
    g = grad[rows]
    state.first_moment[rows] = state.beta1 * state.first_moment[rows] + (1 - state.beta1) * g
    state.second_moment[rows] = state.beta2 * state.second_moment[rows] + (1 - state.beta2) * (g * g)
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    m_hat = state.first_moment[rows] / correction1
    v_hat = state.second_moment[rows] / correction2
    weights[rows] -= learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return weights, state


@dataclass(eq=False)
class SslTask:
    """Frozen inputs of the contrastive task for one optimization step."""

    weight: float
    temperature: float
    n_positives: int
    perturbed: SparseMatrix
    candidate_indices: np.ndarray
    friend_view: Optional[SparseMatrix] = None
    sharing_view: Optional[SparseMatrix] = None
    exclude_self: bool = False
    self_only: bool = False


@dataclass(eq=False)
class StepInputs:
    """Everything :func:`joint_step` needs besides the parameters."""

    preference_view: SparseMatrix
    n_layers: int
    batch: BprBatch
    reg_weight: float
    ssl: Optional[SslTask] = None


def joint_step(table: EmbeddingTable, inputs: StepInputs):
    """Loss and exact gradient of the combined objective for one batch.

    Returns ``(ranking_loss, contrastive_loss, gradient)`` where the
    gradient is with respect to the full embedding table and corresponds
    to ``ranking_loss + ssl.weight * contrastive_loss``.  Pure: no state
    is modified, so the function doubles as the oracle target for
    finite-difference checks.
    """
    m, n = table.n_users, table.n_items
    pref = encode(table, inputs.preference_view, inputs.n_layers)
    ranking = bpr_loss(
        pref.embeddings[:m], pref.embeddings[m:], inputs.batch,
        inputs.reg_weight, table.weights,
    )
    grad_pref = np.concatenate([ranking.grad_users, ranking.grad_items], axis=0)

    ssl_loss = 0.0
    social_grads = []
    ssl = inputs.ssl
    if ssl is not None:
        batch_users = np.unique(inputs.batch.users)
        encoded = {"preference": pref}
        if ssl.friend_view is not None:
            encoded["friend"] = encode(table, ssl.friend_view, inputs.n_layers)
        if ssl.sharing_view is not None:
            encoded["sharing"] = encode(table, ssl.sharing_view, inputs.n_layers)
        unlabeled = encode(table, ssl.perturbed, inputs.n_layers)
        pool = unlabeled.embeddings[ssl.candidate_indices]
        reps = {tag: enc.embeddings[batch_users] for tag, enc in encoded.items()}

        grad_pool = np.zeros_like(pool)
        for tag in ("preference", "friend", "sharing"):
            if tag not in reps:
                continue
            labelers = [reps[other] for other in reps if other != tag]
            if not labelers:
                labelers = [reps[tag]]  # single view labels for itself
            labels = make_label_set(
                tag, batch_users, labelers, pool, ssl.candidate_indices,
                ssl.n_positives, exclude_self=ssl.exclude_self, self_only=ssl.self_only,
            )
            view_loss, grad_rep, grad_cand = infonce(reps[tag], pool, labels, ssl.temperature)
            ssl_loss += view_loss
            grad_pool += ssl.weight * grad_cand
            if tag == "preference":
                grad_pref[batch_users] += ssl.weight * grad_rep
            else:
                view = ssl.friend_view if tag == "friend" else ssl.sharing_view
                grad_social = np.zeros((m, table.dim))
                grad_social[batch_users] = ssl.weight * grad_rep
                social_grads.append(
                    encode_backward(encoded[tag], grad_social, view)
                )
        grad_unlabeled = np.zeros((m + n, table.dim))
        grad_unlabeled[ssl.candidate_indices] = grad_pool
        social_grads.append(
            encode_backward(unlabeled, grad_unlabeled, ssl.perturbed)
        )

    grad = encode_backward(pref, grad_pref, inputs.preference_view)
    for extra in social_grads:
        if extra.shape[0] == m:
            grad[:m] += extra
        else:
            grad += extra
    grad[ranking.reg_rows] += ranking.reg_grad
    return ranking.loss, ssl_loss, grad


@dataclass(eq=False)
class EpochRecord:
    epoch: int
    stage: str
    loss_rec: float
    loss_ssl: float
    val_precision: float
    val_recall: float
    val_ndcg: float

    def to_line(self) -> str:
        return (
            f"epoch={self.epoch} stage={self.stage} "
            f"loss_rec={self.loss_rec!r} loss_ssl={self.loss_ssl!r} "
            f"val_precision={self.val_precision!r} val_recall={self.val_recall!r} "
            f"val_ndcg={self.val_ndcg!r}"
        )


@dataclass(eq=False)
class TrainResult:
    table: EmbeddingTable
    user_factors: np.ndarray
    item_factors: np.ndarray
    history: list
    best_epoch: int

    @property
    def log_lines(self) -> list:
        return [record.to_line() for record in self.history]


def train(config: TrainingConfig, graph: InteractionGraph, social: SocialNetwork | None = None) -> TrainResult:
    """Two-stage run: ranking-only warm-up, then the joint objective.

    With ``ssl_weight=0`` the contrastive machinery is skipped entirely and
    the run is identical to :func:`train_lightgcn` with the same seed.
    """
    return _fit(config, graph, social, use_ssl=config.ssl_weight > 0)


def train_lightgcn(config: TrainingConfig, graph: InteractionGraph, social: SocialNetwork | None = None) -> TrainResult:
    """Plain graph-convolution ranking baseline (no contrastive task)."""
    return _fit(config, graph, social, use_ssl=False)


def _fit(config, graph, social, use_ssl):
    if social is None:
        social = SocialNetwork.empty(graph.n_users)
    if social.n_users != graph.n_users:
        raise ShapeError("social network and interactions disagree on user count")
    m, n = graph.n_users, graph.n_items

    seed_streams = np.random.SeedSequence(config.seed).generate_state(5)
    init_seed, val_seed, batch_seed, perturb_seed, cand_seed = (int(s) for s in seed_streams)
    batch_rng = np.random.default_rng(batch_seed)
    perturb_rng = np.random.default_rng(perturb_seed)
    cand_rng = np.random.default_rng(cand_seed)

    fit_graph, val_relevant = _validation_split(graph, config.val_fraction, val_seed)
    preference_view = sym_normalize(build_joint(fit_graph.matrix))

    friend_view = sharing_view = None
    joint_raw = None
    if use_ssl:
        if config.enabled_views:
            friend_raw, sharing_raw = augment_views(fit_graph.matrix, social.matrix)
            if "friend" in config.enabled_views:
                friend_view = sym_normalize(friend_raw)
            if "sharing" in config.enabled_views:
                sharing_view = sym_normalize(sharing_raw)
        joint_raw = build_joint(fit_graph.matrix, social.matrix)

    table = init_embeddings(m, n, config.embedding_dim, init_seed)
    state = AdamState.zeros(table.weights.shape)
    batches_per_epoch = max(1, math.ceil(fit_graph.n_interactions / config.batch_size))

    history: list = []
    best_val = -np.inf
    best_table = None
    best_epoch = 0
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        joint_stage = use_ssl and epoch > config.warmup_epochs
        perturbed = None
        if joint_stage:
            drop_seed = int(perturb_rng.integers(0, 2**31 - 1))
            perturbed = perturb(joint_raw, config.edge_dropout, drop_seed).adjacency
        rec_total = 0.0
        ssl_total = 0.0
        for _ in range(batches_per_epoch):
            batch = sample_bpr_batch(fit_graph, config.batch_size, batch_rng)
            ssl_task = None
            if joint_stage:
                pool_size = min(config.n_candidates, m)
                candidates = np.sort(cand_rng.choice(m, size=pool_size, replace=False))
                if config.self_positive_only:
                    candidates = np.union1d(candidates, np.unique(batch.users))
                ssl_task = SslTask(
                    weight=config.ssl_weight,
                    temperature=config.temperature,
                    n_positives=config.n_positives,
                    perturbed=perturbed,
                    candidate_indices=candidates,
                    friend_view=friend_view,
                    sharing_view=sharing_view,
                    exclude_self=config.exclude_self,
                    self_only=config.self_positive_only,
                )
            inputs = StepInputs(
                preference_view=preference_view,
                n_layers=config.n_layers,
                batch=batch,
                reg_weight=config.reg_weight,
                ssl=ssl_task,
            )
            loss_rec, loss_ssl, grad = joint_step(table, inputs)
            if not (np.isfinite(loss_rec) and np.isfinite(loss_ssl)):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            adam_step(table.weights, grad, state, config.learning_rate)
            rec_total += loss_rec
            ssl_total += loss_ssl

        val_metrics = (float("nan"),) * 3
        if val_relevant:
            enc = encode(table, preference_view, config.n_layers)
            val_metrics = evaluate_rankings(
                enc.embeddings[:m], enc.embeddings[m:],
                fit_graph.item_sets, val_relevant, cutoff=10,
            )
        record = EpochRecord(
            epoch=epoch,
            stage="joint" if joint_stage else "warmup",
            loss_rec=rec_total / batches_per_epoch,
            loss_ssl=ssl_total / batches_per_epoch,
            val_precision=float(val_metrics[0]),
            val_recall=float(val_metrics[1]),
            val_ndcg=float(val_metrics[2]),
        )
        history.append(record)

        if val_relevant:
            if record.val_recall > best_val:
                best_val = record.val_recall
                best_table = table.copy()
                best_epoch = epoch
                stale = 0
            else:
                stale += 1
            if epoch > config.warmup_epochs and stale >= config.patience:
                break

    final = best_table if best_table is not None else table.copy()
    if best_table is None:
        best_epoch = len(history)
    enc = encode(final, preference_view, config.n_layers)
    return TrainResult(
        table=final,
        user_factors=enc.embeddings[:m].copy(),
        item_factors=enc.embeddings[m:].copy(),
        history=history,
        best_epoch=best_epoch,
    )


def _validation_split(graph, fraction, seed):
    """Hold out a slice of interactions for early stopping."""
    total = graph.n_interactions
    held = int(total * fraction)
    if held == 0 or total - held < 1:
        return graph, {}
    users, items = graph.interaction_pairs()
    chosen = np.random.default_rng(seed).choice(total, size=held, replace=False)
    mask = np.ones(total, dtype=bool)
    mask[chosen] = False
    fit_matrix = SparseMatrix.from_coo(
        users[mask], items[mask], np.ones(int(mask.sum())), shape=graph.matrix.shape
    )
    relevant: dict = {}
    for idx in chosen:
        relevant.setdefault(int(users[idx]), set()).add(int(items[idx]))
    return graph.with_matrix(fit_matrix), relevant
