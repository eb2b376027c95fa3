"""Tests for the Gaussian AWR heads used by the baselines."""

import numpy as np
import pytest
from scipy.stats import norm

from hifql import autodiff as ad
from hifql import gaussian
from hifql.errors import ContractViolation
from hifql.nn import AdamState, adam_step


class TestHead:
    """Tests for the mean/log-std head."""

    def test_shapes(self):
        policy = gaussian.create_gaussian("low", 2, 4, (16,), seed=0)
        mean, log_std = policy.distribution(np.zeros((5, 4)))
        assert mean.shape == (5, 2)
        assert log_std.shape == (5, 2)
        assert policy.forward_calls == 1

    def test_low_level_squashed(self):
        policy = gaussian.create_gaussian("low", 2, 4, (16,), seed=0)
        for p in policy.params:
            p.values *= 10.0
        mean, log_std = policy.distribution(np.random.default_rng(0).standard_normal((64, 4)))
        assert np.all(np.abs(mean.values) <= 1.0)
        assert np.all(log_std.values >= gaussian.LOG_STD_MIN)
        assert np.all(log_std.values <= gaussian.LOG_STD_MAX)

    def test_high_level_unsquashed(self):
        policy = gaussian.create_gaussian("high", 3, 4, (16,), seed=0)
        assert not policy.squash

    def test_output_width_checked(self):
        policy = gaussian.create_gaussian("low", 2, 4, (16,), seed=0)
        with pytest.raises(ContractViolation):
            gaussian.GaussianPolicy(policy.spec, policy.params, "low", 3, True)

    def test_act_mean_clamps_low(self):
        policy = gaussian.create_gaussian("low", 2, 4, (16,), squash=False, seed=0)
        for p in policy.params:
            p.values *= 10.0
        a = gaussian.act_mean(policy, np.random.default_rng(0).standard_normal((64, 4)))
        assert np.all(np.abs(a) <= 1.0)


class TestLogProb:
    """Tests for the diagonal Gaussian density."""

    def test_matches_scipy(self):
        rng = np.random.default_rng(0)
        mu = rng.standard_normal((6, 3))
        log_std = rng.uniform(-1, 1, size=(6, 3))
        x = rng.standard_normal((6, 3))
        ours = gaussian.log_prob(ad.constant(mu), ad.constant(log_std), x).values
        expected = norm.logpdf(x, loc=mu, scale=np.exp(log_std)).sum(axis=-1)
        np.testing.assert_allclose(ours, expected, rtol=1e-4, atol=1e-4)


class TestAwrLoss:
    """Tests for the weighted negative log-likelihood."""

    def test_zero_weights(self):
        policy = gaussian.create_gaussian("low", 2, 4, (16,), seed=0)
        loss = gaussian.awr_nll_loss(policy, np.zeros((3, 4)), np.zeros((3, 2)), np.zeros(3))
        assert loss.item() == 0.0

    def test_fits_a_fixed_action(self):
        policy = gaussian.create_gaussian("low", 2, 4, (32,), seed=0)
        cond = np.random.default_rng(1).standard_normal((64, 4))
        target = np.tile([[0.3, -0.6]], (64, 1))
        opt = AdamState.create(policy.params, 3e-3)
        for _ in range(400):
            with ad.Tape() as tape:
                loss = gaussian.awr_nll_loss(policy, cond, target)
            policy.params.zero_grad()
            ad.backward(loss, tape)
            adam_step(opt, policy.params)
        np.testing.assert_allclose(gaussian.act_mean(policy, cond), target, atol=0.1)
