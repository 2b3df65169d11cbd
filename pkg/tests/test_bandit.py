"""Tests for the action-centered posterior-sampling bandit."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import cholesky
from scipy.stats import norm

from brushbandit.bandit import (
    DecisionRecord,
    PosteriorState,
    PriorSpec,
    clip,
    diagnostics,
    joint_feature,
    load_posterior,
    posterior_update,
    prob_positive_advantage,
    read_decision_log,
    save_posterior,
    select_action,
    write_decision_log,
)


def identity_prior(sigma2=1.0):
    return PriorSpec(
        mu_alpha0=np.zeros(5),
        sigma_alpha0=np.eye(5),
        mu_beta=np.zeros(4),
        sigma_beta=np.eye(4),
        sigma2=sigma2,
    )


def random_records(rng, n, user="0"):
    records = []
    for t in range(1, n + 1):
        pi = float(rng.uniform(0.1, 0.9))
        records.append(
            DecisionRecord(
                user_id=user,
                decision_index=t,
                m=rng.normal(0, 1, 5),
                f=rng.normal(0, 1, 4),
                pi=pi,
                action=int(rng.random() < pi),
                surrogate_reward=float(rng.normal(50, 30)),
            )
        )
    return records


def dense_posterior_oracle(prior, records):
    """Naive full-recompute reference: plain inverses, no factorization reuse."""
    phi = np.stack(
        [np.concatenate([r.m, r.pi * r.f, (r.action - r.pi) * r.f]) for r in records]
    )
    rewards = np.array([r.surrogate_reward for r in records])
    prior_prec = np.linalg.inv(prior.sigma_joint)
    sigma = np.linalg.inv(phi.T @ phi / prior.sigma2 + prior_prec)
    mu = sigma @ (phi.T @ rewards / prior.sigma2 + prior_prec @ prior.mu_joint)
    return mu, sigma


class TestPriorSpec:
    def test_deployment_defaults(self):
        prior = PriorSpec()
        np.testing.assert_allclose(prior.mu_alpha0, [0, 4.925, 0, 0, 82.209])
        np.testing.assert_allclose(
            np.sqrt(np.diag(prior.sigma_alpha0)),
            [29.090, 30.186, 29.624, 12.989, 46.240],
        )
        np.testing.assert_allclose(prior.sigma_beta, 29.624**2 * np.eye(4))
        assert prior.sigma2 == 3396.449

    def test_joint_layout(self):
        prior = PriorSpec()
        mu = prior.mu_joint
        assert mu.shape == (13,)
        np.testing.assert_array_equal(mu[5:9], mu[9:13])
        sigma = prior.sigma_joint
        assert sigma.shape == (13, 13)
        assert np.all(sigma[:5, 5:] == 0.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            PriorSpec(mu_alpha0=np.zeros(4))
        with pytest.raises(ValueError):
            PriorSpec(sigma2=-1.0)


class TestJointFeature:
    def test_zero_pi_zero_action(self):
        m = np.arange(5.0)
        f = np.ones(4)
        phi = joint_feature(m, f, 0.0, 0)
        np.testing.assert_array_equal(phi[:5], m)
        np.testing.assert_array_equal(phi[5:], np.zeros(8))

    def test_half_pi_send(self):
        phi = joint_feature(np.zeros(5), np.ones(4), 0.5, 1)
        np.testing.assert_array_equal(phi[5:9], 0.5 * np.ones(4))
        np.testing.assert_array_equal(phi[9:13], 0.5 * np.ones(4))

    def test_centering_annihilates_when_action_equals_pi(self):
        phi = joint_feature(np.zeros(5), np.ones(4), 1.0, 1)
        np.testing.assert_array_equal(phi[9:13], np.zeros(4))

    def test_record_phi_matches(self):
        rec = DecisionRecord("u", 3, np.arange(5.0), np.arange(4.0), 0.3, 1, 10.0)
        np.testing.assert_array_equal(
            rec.phi, joint_feature(rec.m, rec.f, 0.3, 1)
        )


class TestPosteriorUpdate:
    def test_empty_batch_returns_prior_exactly(self):
        prior = PriorSpec()
        post = posterior_update(prior, [])
        np.testing.assert_array_equal(post.mu, prior.mu_joint)
        np.testing.assert_array_equal(post.sigma, prior.sigma_joint)
        assert post.sigma2 == prior.sigma2

    def test_rank_one_identity_prior(self):
        # mu_prior = 0, Sigma_prior = I, sigma2 = 1, one record with
        # phi = e1 and reward 1: Sigma = I - e1 e1^T / 2, mu = e1 / 2.
        prior = identity_prior()
        rec = DecisionRecord(
            user_id="u", decision_index=1,
            m=np.array([1.0, 0, 0, 0, 0]), f=np.zeros(4),
            pi=0.5, action=1, surrogate_reward=1.0,
        )
        post = posterior_update(prior, [rec])
        e1 = np.zeros(13)
        e1[0] = 1.0
        np.testing.assert_allclose(post.mu, 0.5 * e1, atol=1e-12)
        np.testing.assert_allclose(
            post.sigma, np.eye(13) - 0.5 * np.outer(e1, e1), atol=1e-12
        )

    def test_matches_dense_oracle_on_random_fixtures(self):
        prior = PriorSpec()
        for seed in range(10):
            rng = np.random.default_rng(np.random.SeedSequence([100, seed]))
            records = random_records(rng, 50)
            post = posterior_update(prior, records)
            mu_ref, sigma_ref = dense_posterior_oracle(prior, records)
            np.testing.assert_allclose(post.mu, mu_ref, atol=1e-8)
            np.testing.assert_allclose(post.sigma, sigma_ref, atol=1e-8)

    def test_covariance_shrinks_in_loewner_order(self):
        prior = PriorSpec()
        rng = np.random.default_rng(7)
        records = random_records(rng, 30)
        post = posterior_update(prior, records)
        diff = prior.sigma_joint - post.sigma + 1e-8 * np.eye(13)
        cholesky(diff)  # raises LinAlgError if not positive definite

    def test_symmetry_enforced(self):
        prior = PriorSpec()
        records = random_records(np.random.default_rng(1), 40)
        post = posterior_update(prior, records)
        np.testing.assert_allclose(post.sigma, post.sigma.T, atol=1e-10)


class TestProbPositiveAdvantage:
    def test_zero_mean_gives_half(self):
        post = posterior_update(identity_prior(), [])
        f = np.array([1.0, -1.0, 0.5, 2.0])
        state = PosteriorState(mu=np.zeros(13), sigma=post.sigma, sigma2=1.0)
        assert prob_positive_advantage(state, f) == 0.5

    def test_standard_normal_quantile(self):
        # Unit posterior variance on the advantage block with f = e1:
        # mean / sd = 1.645 maps through the normal CDF to ~0.95.
        mu = np.zeros(13)
        mu[9] = 1.645
        state = PosteriorState(mu=mu, sigma=np.eye(13), sigma2=1.0)
        f = np.array([1.0, 0, 0, 0])
        assert prob_positive_advantage(state, f) == pytest.approx(0.95, abs=1e-3)
        assert prob_positive_advantage(state, f) == pytest.approx(
            norm.cdf(1.645), abs=1e-9
        )

    def test_matches_monte_carlo_oracle(self):
        for seed in range(10):
            rng = np.random.default_rng(np.random.SeedSequence([200, seed]))
            a = rng.normal(0, 1, size=(4, 4))
            sigma_bb = a @ a.T + 0.5 * np.eye(4)
            sigma = np.eye(13)
            sigma[9:13, 9:13] = sigma_bb
            mu = np.zeros(13)
            mu[9:13] = rng.normal(0, 0.5, 4)
            state = PosteriorState(mu=mu, sigma=sigma, sigma2=1.0)
            f = rng.normal(0, 1, 4)
            draws = rng.multivariate_normal(mu[9:13], sigma_bb, size=100_000)
            mc = float(np.mean(draws @ f > 0))
            assert prob_positive_advantage(state, f) == pytest.approx(mc, abs=0.005)

    def test_degenerate_variance_uses_mean_sign(self):
        mu = np.zeros(13)
        mu[9] = 0.3
        state = PosteriorState(mu=mu, sigma=np.zeros((13, 13)), sigma2=1.0)
        f = np.array([1.0, 0, 0, 0])
        assert prob_positive_advantage(state, f) == 1.0
        state.mu[9] = -0.3
        assert prob_positive_advantage(state, f) == 0.0
        state.mu[9] = 0.0
        assert prob_positive_advantage(state, f) == 0.5

    def test_negative_variance_counted_and_clamped(self):
        sigma = np.zeros((13, 13))
        sigma[9, 9] = -1e-9  # numerically negative quadratic form
        mu = np.zeros(13)
        mu[9] = 1.0
        state = PosteriorState(mu=mu, sigma=sigma, sigma2=1.0)
        before = diagnostics.negative_variance_events
        assert prob_positive_advantage(state, np.array([1.0, 0, 0, 0])) == 1.0
        assert diagnostics.negative_variance_events == before + 1

    def test_strictly_increasing_in_mean(self):
        sigma = np.eye(13)
        f = np.array([1.0, 0.5, -0.2, 0.3])
        values = []
        for mean_scale in np.linspace(-2, 2, 9):
            mu = np.zeros(13)
            mu[9:13] = mean_scale * f / (f @ f)
            state = PosteriorState(mu=mu, sigma=sigma, sigma2=1.0)
            values.append(prob_positive_advantage(state, f))
        assert all(b > a for a, b in zip(values, values[1:]))


class TestClip:
    def test_default_bounds(self):
        assert clip(0.95) == 0.9
        assert clip(0.02) == 0.1
        assert clip(0.5) == 0.5

    @given(st.floats(min_value=0, max_value=1))
    def test_always_within_bounds(self, pi):
        assert 0.1 <= clip(pi) <= 0.9

    def test_custom_bounds(self):
        assert clip(0.99, 0.0, 1.0) == 0.99
        assert clip(0.2, 0.5, 0.5) == 0.5


class TestSelectAction:
    @pytest.mark.parametrize("pi", [0.1, 0.9])
    def test_bernoulli_concentration(self, pi):
        rng = np.random.default_rng(77)
        draws = np.array([select_action(pi, rng) for _ in range(100_000)])
        assert draws.mean() == pytest.approx(pi, abs=0.01)

    def test_deterministic_under_seed(self):
        a = select_action(0.5, np.random.default_rng(3))
        b = select_action(0.5, np.random.default_rng(3))
        assert a == b


class TestPersistence:
    def test_decision_log_roundtrip(self, tmp_path):
        records = random_records(np.random.default_rng(4), 7)
        path = tmp_path / "log.csv"
        write_decision_log(path, records)
        loaded = read_decision_log(path)
        assert len(loaded) == 7
        for a, b in zip(records, loaded):
            assert a.user_id == b.user_id
            assert a.decision_index == b.decision_index
            assert a.pi == b.pi and a.action == b.action
            assert a.surrogate_reward == b.surrogate_reward
            np.testing.assert_array_equal(a.m, b.m)
            np.testing.assert_array_equal(a.f, b.f)

    def test_posterior_roundtrip(self, tmp_path):
        prior = PriorSpec()
        post = posterior_update(prior, random_records(np.random.default_rng(5), 20))
        path = tmp_path / "posterior.txt"
        save_posterior(path, post)
        loaded = load_posterior(path)
        np.testing.assert_array_equal(loaded.mu, post.mu)
        np.testing.assert_array_equal(loaded.sigma, post.sigma)
        assert loaded.sigma2 == post.sigma2

    def test_malformed_posterior_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("sigma2 1.0\nmu 1 2 3\n")
        with pytest.raises(ValueError, match="malformed"):
            load_posterior(path)


def test_record_validation():
    with pytest.raises(ValueError):
        DecisionRecord("u", 1, np.zeros(5), np.zeros(4), 1.2, 1, 0.0)
    with pytest.raises(ValueError):
        DecisionRecord("u", 1, np.zeros(5), np.zeros(4), 0.5, 2, 0.0)
    with pytest.raises(ValueError):
        DecisionRecord("u", 1, np.zeros(4), np.zeros(4), 0.5, 1, 0.0)
