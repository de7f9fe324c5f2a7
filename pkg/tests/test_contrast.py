import math

import mpmath
import numpy as np
import pytest

from trirec.contrast import (
    LabelSet,
    cosine_matrix,
    infonce,
    label_matrix,
    label_probabilities,
    make_label_set,
    top_k,
    top_k_rows,
)
from trirec.sparse import DomainError


def extended_precision_labels(z_a, z_b, candidates, dps=50):
    """Independent oracle: cosines and softmaxes at 50 decimal digits."""
    with mpmath.workdps(dps):
        def cosines(z):
            zn = mpmath.sqrt(mpmath.fsum(x * x for x in z))
            out = []
            for row in candidates:
                rn = mpmath.sqrt(mpmath.fsum(x * x for x in row))
                if zn == 0 or rn == 0:
                    out.append(mpmath.mpf(0))
                else:
                    dot = mpmath.fsum(a * b for a, b in zip(row, z))
                    out.append(dot / (zn * rn))
            return out

        def softmax(vals):
            exps = [mpmath.e ** v for v in vals]
            total = mpmath.fsum(exps)
            return [e / total for e in exps]

        sa = softmax(cosines(z_a))
        sb = softmax(cosines(z_b))
        return np.array([float((x + y) / 2) for x, y in zip(sa, sb)])


def numeric_gradient(func, arg, eps=1e-6):
    arg = arg.astype(float)
    grad = np.zeros_like(arg)
    it = np.nditer(arg, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = arg[idx]
        arg[idx] = orig + eps
        hi = func(arg)
        arg[idx] = orig - eps
        lo = func(arg)
        arg[idx] = orig
        grad[idx] = (hi - lo) / (2 * eps)
        it.iternext()
    return grad


class TestLabelProbabilities:
    def test_identical_candidates_give_uniform(self):
        z = np.array([1.0, 2.0, 3.0])
        candidates = np.tile(z, (5, 1))
        probs = label_probabilities(z, z, candidates)
        np.testing.assert_allclose(probs, np.full(5, 0.2), rtol=1e-12)

    def test_singleton_pool(self):
        z = np.array([1.0, 0.0])
        probs = label_probabilities(z, -z, np.array([[3.0, 4.0]]))
        np.testing.assert_allclose(probs, [1.0])

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            c = int(rng.integers(1, 12))
            d = int(rng.integers(2, 6))
            probs = label_probabilities(
                rng.normal(size=d), rng.normal(size=d), rng.normal(size=(c, d))
            )
            assert abs(probs.sum() - 1.0) <= 1e-9

    def test_matches_extended_precision_oracle(self):
        rng = np.random.default_rng(1)
        z_a = rng.normal(size=4)
        z_b = rng.normal(size=4)
        candidates = rng.normal(size=(5, 4))
        expected = extended_precision_labels(z_a, z_b, candidates)
        np.testing.assert_allclose(
            label_probabilities(z_a, z_b, candidates), expected, rtol=1e-12
        )

    def test_zero_norm_vector_scores_cosine_zero(self):
        zero = np.zeros(3)
        candidates = np.array([[1.0, 0, 0], [0, 1.0, 0]])
        probs = label_probabilities(zero, zero, candidates)
        np.testing.assert_allclose(probs, [0.5, 0.5])

    def test_invariant_to_candidate_rescaling(self):
        rng = np.random.default_rng(2)
        z_a, z_b = rng.normal(size=3), rng.normal(size=3)
        candidates = rng.normal(size=(6, 3))
        base = label_probabilities(z_a, z_b, candidates)
        scaled = candidates.copy()
        scaled[2] *= 37.5
        scaled[4] *= 0.001
        rescaled = label_probabilities(z_a, z_b, scaled)
        np.testing.assert_allclose(rescaled, base, atol=1e-12)
        assert np.array_equal(np.argsort(rescaled), np.argsort(base))


class TestTopK:
    def test_basic(self):
        assert top_k(np.array([0.1, 0.5, 0.4]), 2).tolist() == [1, 2]

    def test_tie_breaks_to_smaller_index(self):
        assert top_k(np.array([0.25, 0.25, 0.25, 0.25]), 2).tolist() == [0, 1]

    def test_saturation_returns_all_sorted(self):
        probs = np.array([0.2, 0.5, 0.3])
        assert top_k(probs, 10).tolist() == [1, 2, 0]

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            top_k(np.array([]), 1)

    def test_rows_agree_with_single(self):
        rng = np.random.default_rng(3)
        probs = rng.random((8, 10))
        probs[:, 3] = probs[:, 7]  # force ties
        rows = top_k_rows(probs, 4)
        for r in range(8):
            assert rows[r].tolist() == top_k(probs[r], 4).tolist()


class TestMakeLabelSet:
    def test_self_discrimination_degeneracy(self):
        # the user's own perturbed row is strictly the most similar under
        # both labeling views, so with one positive the label is the user
        rng = np.random.default_rng(4)
        dim = 6
        own = rng.normal(size=dim)
        pool = rng.normal(size=(9, dim))
        users = np.array([17])
        candidate_indices = np.arange(10, 20)  # user 17 sits at column 7
        pool_full = np.vstack([pool[:7], own * 3.0, pool[7:]])
        labels = make_label_set(
            "preference",
            users,
            [own[None, :] + rng.normal(size=dim) * 1e-3, own[None, :]],
            pool_full,
            candidate_indices,
            n_positives=1,
        )
        assert labels.positives[0].tolist() == [7]

    def test_exclude_self_removes_own_row(self):
        rng = np.random.default_rng(5)
        dim = 4
        own = rng.normal(size=dim)
        pool = np.vstack([own, rng.normal(size=(3, dim))])
        labels = make_label_set(
            "friend",
            np.array([0]),
            [own[None, :]],
            pool,
            np.arange(4),
            n_positives=4,
            exclude_self=True,
        )
        assert 0 not in labels.positives[0]
        assert len(labels.positives[0]) == 3

    def test_self_only_mode(self):
        rng = np.random.default_rng(6)
        pool = rng.normal(size=(5, 3))
        labels = make_label_set(
            "sharing",
            np.array([12, 10]),
            [],
            pool,
            np.array([8, 10, 11, 12, 14]),
            n_positives=3,
            self_only=True,
        )
        assert labels.positives[0].tolist() == [3]
        assert labels.positives[1].tolist() == [1]

    def test_self_only_requires_presence(self):
        with pytest.raises(ValueError):
            make_label_set(
                "sharing",
                np.array([99]),
                [],
                np.zeros((2, 2)),
                np.array([1, 2]),
                n_positives=1,
                self_only=True,
            )

    def test_positive_count(self):
        rng = np.random.default_rng(7)
        labels = make_label_set(
            "preference",
            np.arange(3),
            [rng.normal(size=(3, 5)), rng.normal(size=(3, 5))],
            rng.normal(size=(8, 5)),
            np.arange(8),
            n_positives=4,
        )
        assert all(len(p) == 4 for p in labels.positives)


class TestInfonce:
    @staticmethod
    def single_user_labels(positives, n_users=1):
        return LabelSet(
            view_tag="preference",
            users=np.arange(n_users),
            positives=positives,
            candidate_indices=np.arange(10),
        )

    def test_all_positive_pool_gives_zero_loss(self):
        rng = np.random.default_rng(8)
        z = rng.normal(size=(2, 3))
        pool = rng.normal(size=(4, 3))
        labels = self.single_user_labels([np.arange(4), np.arange(4)], n_users=2)
        loss, grad_z, grad_c = infonce(z, pool, labels, tau=0.1)
        assert loss == 0.0
        assert np.all(grad_z == 0) and np.all(grad_c == 0)

    def test_hand_computed_two_candidate_case(self):
        # one positive at cosine +1, one negative at cosine -1, tau=0.1:
        # loss = -log(e^10 / (e^10 + e^-10)) = log1p(e^-20)
        z = np.array([[2.0, 0.0]])
        pool = np.array([[5.0, 0.0], [-0.25, 0.0]])
        labels = self.single_user_labels([np.array([0])])
        loss, _, _ = infonce(z, pool, labels, tau=0.1)
        np.testing.assert_allclose(loss, math.log1p(math.exp(-20)), rtol=1e-9)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            n_u = int(rng.integers(1, 5))
            n_c = int(rng.integers(2, 9))
            z = rng.normal(size=(n_u, 4))
            pool = rng.normal(size=(n_c, 4))
            positives = [
                rng.choice(n_c, size=int(rng.integers(1, n_c + 1)), replace=False)
                for _ in range(n_u)
            ]
            loss, _, _ = infonce(z, pool, self.single_user_labels(positives, n_u), 0.1)
            assert loss >= 0.0

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(10)
        z = rng.normal(size=(4, 5))
        pool = rng.normal(size=(8, 5))
        positives = [np.sort(rng.choice(8, size=2, replace=False)) for _ in range(4)]
        labels = self.single_user_labels(positives, n_users=4)
        loss, _, _ = infonce(z, pool, labels, tau=0.1)
        # plain-python reimplementation
        expected = 0.0
        for row in range(4):
            psis = []
            for cand in range(8):
                cos = float(
                    z[row] @ pool[cand] / (np.linalg.norm(z[row]) * np.linalg.norm(pool[cand]))
                )
                psis.append(math.exp(cos / 0.1))
            pos = sum(psis[p] for p in positives[row])
            expected += -math.log(pos / sum(psis))
        np.testing.assert_allclose(loss, expected, rtol=1e-10)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        z0 = rng.normal(size=(4, 5))
        pool0 = rng.normal(size=(8, 5))
        positives = [np.sort(rng.choice(8, size=2, replace=False)) for _ in range(4)]
        labels = self.single_user_labels(positives, n_users=4)
        _, grad_z, grad_c = infonce(z0, pool0, labels, tau=0.1)

        fd_z = numeric_gradient(lambda z: infonce(z, pool0, labels, 0.1)[0], z0.copy())
        fd_c = numeric_gradient(lambda c: infonce(z0, c, labels, 0.1)[0], pool0.copy())
        np.testing.assert_allclose(grad_z, fd_z, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(grad_c, fd_c, rtol=1e-5, atol=1e-8)

    def test_monotone_in_positive_and_negative_similarity(self):
        z = np.array([[1.0, 0.0]])
        labels = self.single_user_labels([np.array([0])])

        def loss_at(theta_pos, theta_neg):
            pool = np.array(
                [
                    [math.cos(theta_pos), math.sin(theta_pos)],
                    [math.cos(theta_neg), math.sin(theta_neg)],
                ]
            )
            return infonce(z, pool, labels, tau=0.2)[0]

        # moving the positive closer to z never increases the loss
        fixed_neg = 2.0
        angles = np.linspace(0.1, 3.0, 15)
        losses = [loss_at(a, fixed_neg) for a in angles]
        assert all(l1 <= l2 + 1e-15 for l1, l2 in zip(losses, losses[1:]))
        # moving the negative closer never decreases it
        fixed_pos = 0.3
        losses = [loss_at(fixed_pos, a) for a in angles]
        assert all(l1 >= l2 - 1e-15 for l1, l2 in zip(losses, losses[1:]))

    def test_empty_positive_set_rejected(self):
        z = np.ones((1, 2))
        pool = np.ones((3, 2))
        with pytest.raises(ValueError):
            infonce(z, pool, self.single_user_labels([np.array([], dtype=int)]), 0.1)

    def test_bad_temperature(self):
        z = np.ones((1, 2))
        pool = np.ones((2, 2))
        with pytest.raises(DomainError):
            infonce(z, pool, self.single_user_labels([np.array([0])]), 0.0)


def test_cosine_matrix_zero_rows():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 0.0], [0.0, 2.0]])
    out = cosine_matrix(a, b)
    np.testing.assert_array_equal(out[0], [0.0, 0.0])
    np.testing.assert_array_equal(out[:, 0], [0.0, 0.0])


def test_label_matrix_single_labeler():
    rng = np.random.default_rng(12)
    reps = rng.normal(size=(3, 4))
    pool = rng.normal(size=(6, 4))
    probs = label_matrix(pool, [reps])
    np.testing.assert_allclose(probs.sum(axis=1), np.ones(3), atol=1e-12)
