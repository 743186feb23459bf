import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

from ckge.bayes import (
    BayesStore,
    GaussianEmbeddingTable,
    bayes_posterior_update,
    bayes_reg_loss,
    init_new_ids,
    snapshot_commit,
)
from ckge.errors import InvariantError
from oracles import central_difference, closed_form_posterior, relative_error

finite = st.floats(-10, 10, allow_nan=False)
positive = st.floats(1e-3, 100, allow_nan=False)


def vec(d, elements):
    return arrays(np.float64, d, elements=elements)


class TestInitNewIds:
    def test_constant_precision(self):
        t = init_new_ids(GaussianEmbeddingTable.empty(4), [0], 0.01, np.random.default_rng(0))
        np.testing.assert_array_equal(t.precisions, [[0.01] * 4])

    def test_deterministic(self):
        a = init_new_ids(GaussianEmbeddingTable.empty(8), range(5), 0.01, np.random.default_rng(3))
        b = init_new_ids(GaussianEmbeddingTable.empty(8), range(5), 0.01, np.random.default_rng(3))
        np.testing.assert_array_equal(a.means, b.means)

    def test_uniform_centered(self):
        d = 100
        t = init_new_ids(GaussianEmbeddingTable.empty(d), range(1000), 0.01, np.random.default_rng(0))
        bound = 6 / np.sqrt(d)
        assert np.all(np.abs(t.means) <= bound)
        # std of a uniform(-b, b) sample mean over 1000 draws
        sigma = bound / np.sqrt(3) / np.sqrt(1000)
        outside = np.abs(t.means.mean(axis=0)) > 3 * sigma
        # 0.27% of components are expected beyond 3 sigma
        assert outside.sum() <= 2
        assert abs(t.means.mean()) < 3 * sigma / np.sqrt(d)

    def test_collision(self):
        t = init_new_ids(GaussianEmbeddingTable.empty(2), [0, 1], 0.01, np.random.default_rng(0))
        with pytest.raises(ValueError, match="collision"):
            init_new_ids(t, [1, 2], 0.01, np.random.default_rng(0))

    def test_existing_rows_untouched(self):
        t = init_new_ids(GaussianEmbeddingTable.empty(3), [0, 1], 0.01, np.random.default_rng(0))
        t2 = init_new_ids(t, [2], 0.01, np.random.default_rng(1))
        np.testing.assert_array_equal(t2.means[:2], t.means)

    def test_nonpositive_precision_rejected(self):
        with pytest.raises(InvariantError):
            GaussianEmbeddingTable(np.zeros((1, 2)), np.array([[1.0, 0.0]]))


class TestPosteriorUpdate:
    def test_hand_example(self):
        mu, lam = bayes_posterior_update([0.0], [1.0], [2.0], 1.0)
        np.testing.assert_array_equal(mu, [1.0])
        np.testing.assert_array_equal(lam, [2.0])

    def test_zero_information(self):
        m0, l0 = np.array([0.3, -1.0]), np.array([2.0, 0.5])
        mu, lam = bayes_posterior_update(m0, l0, [9.0, 9.0], 0.0)
        np.testing.assert_array_equal(mu, m0)
        np.testing.assert_array_equal(lam, l0)

    def test_negative_lambda_obs(self):
        with pytest.raises(ValueError):
            bayes_posterior_update([0.0], [1.0], [1.0], -0.1)

    def test_swap_two_observations(self):
        rng = np.random.default_rng(0)
        m0, l0, x1, x2 = rng.normal(size=4), rng.uniform(0.1, 2, 4), rng.normal(size=4), rng.normal(size=4)
        a = bayes_posterior_update(*bayes_posterior_update(m0, l0, x1, 0.7), x2, 0.7)
        b = bayes_posterior_update(*bayes_posterior_update(m0, l0, x2, 0.7), x1, 0.7)
        np.testing.assert_allclose(a[0], b[0], rtol=0, atol=1e-12)
        np.testing.assert_array_equal(a[1], b[1])

    def test_strong_observation_dominates(self):
        lam = np.array([0.5, 3.0])
        mu, _ = bayes_posterior_update([5.0, -5.0], lam, [1.0, 2.0], 1e6 * lam.max())
        np.testing.assert_allclose(mu, [1.0, 2.0], rtol=0.01)

    @given(st.integers(1, 6).flatmap(lambda d: st.tuples(vec(d, finite), vec(d, positive), vec(d, finite))),
           st.floats(0, 100))
    def test_precision_monotone_and_mean_convex(self, args, lam_obs):
        m0, l0, x = args
        mu, lam = bayes_posterior_update(m0, l0, x, lam_obs)
        assert np.all(lam >= l0)
        lo, hi = np.minimum(m0, x), np.maximum(m0, x)
        slack = 1e-12 * (1 + np.abs(lo) + np.abs(hi))
        assert np.all(mu >= lo - slack) and np.all(mu <= hi + slack)

    @given(st.integers(1, 5).flatmap(lambda d: st.tuples(vec(d, finite), vec(d, positive),
                                                          st.lists(vec(d, finite), min_size=1, max_size=4))),
           st.floats(0.01, 10))
    def test_sequential_equals_batch_closed_form(self, args, lam_obs):
        m0, l0, obs = args
        mu, lam = m0, l0
        for x in obs:
            mu, lam = bayes_posterior_update(mu, lam, x, lam_obs)
        ref_mu, ref_lam = closed_form_posterior(m0, l0, obs, lam_obs)
        np.testing.assert_allclose(lam, ref_lam, rtol=1e-12)
        np.testing.assert_allclose(mu, ref_mu, rtol=1e-9, atol=1e-9)


class TestSnapshotCommit:
    def _store(self, rng, n_e=5, n_r=2, d=3):
        return BayesStore(
            GaussianEmbeddingTable(rng.normal(size=(n_e, d)), rng.uniform(0.1, 1, (n_e, d)), "entity"),
            GaussianEmbeddingTable(rng.normal(size=(n_r, d)), rng.uniform(0.1, 1, (n_r, d)), "relation"),
        )

    def test_unobserved_rows_bit_identical(self, rng):
        store = self._store(rng)
        out = snapshot_commit(store, rng.normal(size=(5, 3)), rng.normal(size=(2, 3)), [1, 3], [0], 1.0)
        for i in (0, 2, 4):
            assert out.entities.means[i].tobytes() == store.entities.means[i].tobytes()
            assert out.entities.precisions[i].tobytes() == store.entities.precisions[i].tobytes()
        assert out.relations.means[1].tobytes() == store.relations.means[1].tobytes()
        assert not np.array_equal(out.entities.means[1], store.entities.means[1])

    def test_two_commits_swapped(self, rng):
        store = self._store(rng)
        a1, a2 = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        r = store.relations.means
        x = snapshot_commit(snapshot_commit(store, a1, r, [2], [], 0.5), a2, r, [2], [], 0.5)
        y = snapshot_commit(snapshot_commit(store, a2, r, [2], [], 0.5), a1, r, [2], [], 0.5)
        np.testing.assert_allclose(x.entities.means, y.entities.means, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(x.entities.precisions, y.entities.precisions)

    def test_relation_override(self, rng):
        store = self._store(rng)
        out = snapshot_commit(store, store.entities.means, store.relations.means, [], [0], 1.0,
                              lambda_obs_relation=3.0)
        np.testing.assert_allclose(out.relations.precisions[0], store.relations.precisions[0] + 3.0)

    def test_shape_mismatch(self, rng):
        store = self._store(rng)
        with pytest.raises(ValueError):
            snapshot_commit(store, np.zeros((4, 3)), store.relations.means, [0], [0], 1.0)


class TestRegularizer:
    def test_hand_example(self):
        loss, grad = bayes_reg_loss(np.array([1.0]), np.array([0.0]), np.array([4.0]), 1.0)
        assert loss == 4.0
        np.testing.assert_array_equal(grad, [8.0])

    def test_at_prior(self, rng):
        mu, lam = rng.normal(size=(3, 4)), rng.uniform(0.1, 1, (3, 4))
        loss, grad = bayes_reg_loss(mu.copy(), mu, lam, 2.0)
        assert loss == 0.0
        assert not grad.any()

    def test_negative_precision(self):
        with pytest.raises(InvariantError):
            bayes_reg_loss(np.zeros(2), np.zeros(2), np.array([1.0, -1.0]), 1.0)

    def test_finite_difference(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            d = int(rng.integers(1, 9))
            n = int(rng.integers(1, 5))
            theta = rng.normal(size=(n, d))
            mu, lam = rng.normal(size=(n, d)), rng.uniform(0.01, 5, (n, d))
            beta = float(rng.uniform(0.01, 3))
            _, grad = bayes_reg_loss(theta, mu, lam, beta)
            fd = central_difference(lambda: bayes_reg_loss(theta, mu, lam, beta)[0], theta)
            assert relative_error(grad, fd) <= 1e-6

    @given(st.integers(1, 6).flatmap(lambda d: st.tuples(vec(d, finite), vec(d, finite), vec(d, positive))),
           st.floats(0.01, 10))
    def test_nonnegative_zero_iff_at_prior(self, args, beta):
        theta, mu, lam = args
        loss, _ = bayes_reg_loss(theta, mu, lam, beta)
        assert loss >= 0
        if np.array_equal(theta, mu):
            assert loss == 0
        else:
            assume(np.any((theta - mu) ** 2 * lam * beta > 1e-300))
            assert loss > 0
