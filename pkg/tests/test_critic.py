"""Tests for the expectile critic: loss, reward rule, bootstrap targets, advantages."""

from types import SimpleNamespace

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from hifql import autodiff as ad
from hifql import critic
from hifql.dataset import CURRENT, RANDOM_STATE, TRAJ_FUTURE, collect, sample_batch
from hifql.errors import ContractViolation
from hifql.lejepa import create_encoder, encode
from hifql.maze_registry import make_env
from hifql.nn import AdamState, adam_step


def _batch(s_h, s_next, g, source):
    f32 = np.float32
    return SimpleNamespace(s_h=np.array(s_h, f32), s_next=np.array(s_next, f32),
                           g=np.array(g, f32), goal_source=np.array(source, np.int8))


@pytest.fixture
def bundle():
    enc = create_encoder(2, 4, (16,), seed=0)
    return critic.create_critic(2, enc, (16,), seed=1), enc


@pytest.fixture
def batch():
    ds = collect(make_env("small"), episodes=4, horizon=40, seed=0)
    return sample_batch(ds, 32, 5, (0.2, 0.5, 0.3), np.random.default_rng(0))


class TestExpectileLoss:
    """Tests for the asymmetric squared loss."""

    def test_known_value(self):
        loss = critic.expectile_loss(np.array([1.0, -1.0]), 0.7)
        assert loss.item() == pytest.approx(0.5)

    def test_half_is_scaled_mse(self):
        r = np.array([0.3, -2.0, 1.5])
        assert critic.expectile_loss(r, 0.5).item() == pytest.approx(0.5 * np.mean(r**2))

    def test_minimizer_is_the_expectile(self):
        data = np.array([0.0, 1.0])

        def loss_at(c):
            return critic.expectile_loss(data - c, 0.9).item()

        result = minimize_scalar(loss_at, bounds=(0.0, 1.0), method="bounded")
        assert result.x == pytest.approx(0.9, abs=2e-3)
        assert loss_at(0.9) < loss_at(0.85)

    def test_gradient_direction(self):
        v = ad.parameter([0.0, 0.0])
        with ad.Tape() as tape:
            loss = critic.expectile_loss(ad.subtract(ad.constant(np.array([1.0, -1.0])), v), 0.9)
        ad.backward(loss, tape)
        # positive residuals pull harder than negative ones
        assert abs(v.grad[0]) > abs(v.grad[1])

    @pytest.mark.parametrize("kappa", [0.3, 1.0])
    def test_kappa_range(self, kappa):
        with pytest.raises(ContractViolation):
            critic.expectile_loss(np.zeros(2), kappa)

    def test_asymmetric_l2_accepts_low_kappa(self):
        loss = critic.asymmetric_l2(np.array([1.0, -1.0]), 0.2)
        assert loss.item() == pytest.approx(0.5)

    @pytest.mark.parametrize("kappa", [0.2, 0.5, 0.7, 0.9])
    def test_reflection_symmetry(self, kappa):
        x = np.random.default_rng(0).standard_normal(50)
        a = critic.asymmetric_l2(x, kappa).item()
        b = critic.asymmetric_l2(-x, 1.0 - kappa).item()
        assert a == pytest.approx(b, rel=1e-6)

    def test_half_is_symmetric(self):
        x = np.random.default_rng(1).standard_normal(50)
        assert critic.expectile_loss(x, 0.5).item() == critic.expectile_loss(-x, 0.5).item()


class TestReward:
    """Tests for the indicator reward and bootstrap mask."""

    def test_current_source_always_rewarded(self):
        b = _batch([[1.5, 1.5]], [[1.5, 1.5]], [[5.5, 5.5]], [CURRENT])
        reward, mask = critic.reward_and_mask(b, 0.5)
        assert reward[0] == 1.0
        assert mask[0] == 0.0

    def test_far_goal_not_rewarded(self):
        b = _batch([[1.5, 1.5]], [[1.75, 1.5]], [[5.5, 5.5]], [TRAJ_FUTURE])
        reward, mask = critic.reward_and_mask(b, 0.5)
        assert reward[0] == 0.0
        assert mask[0] == 1.0

    def test_reaching_on_next_state(self):
        b = _batch([[1.5, 1.5]], [[1.75, 1.5]], [[2.2, 1.5]], [RANDOM_STATE])
        reward, _ = critic.reward_and_mask(b, 0.5)
        assert reward[0] == 1.0

    def test_uses_position_only(self):
        b = _batch([[1.5, 1.5, 0.0]], [[1.5, 1.5, 0.0]], [[1.6, 1.5, 9.0]], [TRAJ_FUTURE])
        reward, _ = critic.reward_and_mask(b, 0.5)
        assert reward[0] == 1.0


class TestCriticBundle:
    """Tests for critic construction, targets and advantages."""

    def test_target_starts_as_copy(self, bundle):
        b, _ = bundle
        for p, t in zip(b.params, b.target):
            assert np.array_equal(p.values, t.values)
            assert p is not t

    def test_value_shape(self, bundle, batch):
        b, enc = bundle
        v = critic.value(b, batch.s_h, encode(enc, batch.s_h, batch.g))
        assert v.shape == (32,)

    def test_bootstrap_target_at_reward(self, bundle):
        b, enc = bundle
        sb = _batch([[1.5, 1.5]], [[1.5, 1.5]], [[1.5, 1.5]], [CURRENT])
        assert critic.bootstrap_target(b, enc, sb)[0] == 1.0

    def test_bootstrap_target_records_nothing(self, bundle, batch):
        b, enc = bundle
        with ad.Tape() as tape:
            critic.bootstrap_target(b, enc, batch)
        assert len(tape) == 0

    def test_value_loss_reaches_value_and_encoder(self, bundle, batch):
        b, enc = bundle
        with ad.Tape() as tape:
            loss = critic.value_loss(b, enc, batch)
        ad.backward(loss, tape)
        assert all(p.grad is not None for p in b.params)
        assert enc.params["l0.weight"].grad is not None
        assert all(t.grad is None for t in b.target)

    def test_high_advantage_zero_when_subgoal_is_state(self, bundle, batch):
        b, enc = bundle
        batch.s_sub = batch.s_h.copy()
        adv = critic.advantages(b, enc, batch)
        assert not adv.high.any()
        assert adv.low.shape == (32,)

    def test_flat_advantage_shape(self, bundle, batch):
        b, enc = bundle
        assert critic.flat_advantage(b, enc, batch).shape == (32,)

    def test_kappa_validated(self):
        enc = create_encoder(2, 4, (8,), seed=0)
        with pytest.raises(ContractViolation):
            critic.create_critic(2, enc, (8,), kappa=0.4)

    def test_value_regresses_toward_constant_target(self, bundle, batch):
        """With every goal rewarded, V should head toward 1."""
        b, enc = bundle
        batch.goal_source[:] = CURRENT
        opt = AdamState.create(b.params, 1e-2)
        for _ in range(200):
            with ad.Tape() as tape:
                loss = critic.value_loss(b, enc, batch)
            b.params.zero_grad()
            ad.backward(loss, tape)
            adam_step(opt, b.params)
        assert loss.item() < 1e-2

    def test_value_loss_batch_permutation_invariance(self, bundle, batch):
        b, enc = bundle
        perm = np.random.default_rng(7).permutation(len(batch))
        shuffled = SimpleNamespace(**{k: v[perm] for k, v in vars(batch).items()})
        a = critic.value_loss(b, enc, batch).item()
        assert critic.value_loss(b, enc, shuffled).item() == pytest.approx(a, rel=1e-5)

    def test_linear_value_advantages(self):
        """With V(s, z) = s_1, advantages are differences of first coordinates."""
        enc = create_encoder(2, 4, (8,), seed=0)
        b = critic.create_critic(2, enc, (), seed=0)
        weight = np.zeros((6, 1), dtype=np.float32)
        weight[0, 0] = 1.0
        b.params["l0.weight"].values[...] = weight
        sb = SimpleNamespace(s_h=np.array([[0.0, 0.0]], np.float32),
                             s_next=np.array([[1.0, 0.0]], np.float32),
                             s_sub=np.array([[3.0, 0.0]], np.float32),
                             g=np.array([[5.0, 5.0]], np.float32))
        adv = critic.advantages(b, enc, sb)
        assert adv.high[0] == 3.0
        assert adv.low[0] == 1.0
        assert critic.flat_advantage(b, enc, sb)[0] == 1.0


class TestTwoStateChain:
    """Expectile iteration on a chain with a self-loop state A and a goal state B."""

    def test_converges_to_fixed_point(self):
        kappa, gamma, p = 0.7, 0.9, 0.3
        a, goal = [1.5, 1.5], [5.5, 1.5]
        # 3 of 10 transitions from A reach B, the rest stay at A
        chain = _batch([a] * 10, [goal] * 3 + [a] * 7, [goal] * 10, [TRAJ_FUTURE] * 10)
        reward, mask = critic.reward_and_mask(chain, 0.5)
        assert reward.tolist() == [1.0] * 3 + [0.0] * 7

        v_a = 0.0
        for _ in range(60):
            targets = reward + mask * gamma * v_a
            result = minimize_scalar(
                lambda c, t=targets: critic.expectile_loss(t - c, kappa).item(),
                bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-7},
            )
            v_a = result.x
        expected = kappa * p / (kappa * p + (1 - kappa) * (1 - p) * (1 - gamma))
        assert v_a == pytest.approx(expected, abs=1e-2)

    def test_goal_state_value_is_one(self):
        goal = [5.5, 1.5]
        chain = _batch([goal] * 4, [goal] * 4, [goal] * 4, [TRAJ_FUTURE] * 4)
        reward, mask = critic.reward_and_mask(chain, 0.5)
        assert (reward + mask * 0.9 * 123.0).tolist() == [1.0] * 4


class TestQHead:
    """Tests for the action-value head and its implicit value fit."""

    @pytest.fixture
    def head(self, bundle):
        _, enc = bundle
        return critic.create_q_head(2, 2, enc, (16,), seed=2)

    @staticmethod
    def _linear(index, hidden_in):
        weight = np.zeros((hidden_in, 1), dtype=np.float32)
        weight[index, 0] = 1.0
        return weight

    def test_q_value_shape(self, bundle, head, batch):
        _, enc = bundle
        q = critic.q_value(head, batch.s_h, batch.a_h, encode(enc, batch.s_h, batch.g))
        assert q.shape == (32,)

    def test_q_loss_reaches_q_and_encoder(self, bundle, head, batch):
        b, enc = bundle
        with ad.Tape() as tape:
            loss = critic.q_loss(b, head, enc, batch)
        ad.backward(loss, tape)
        assert all(p.grad is not None for p in head.params)
        assert enc.params["l0.weight"].grad is not None
        assert all(p.grad is None for p in b.params)
        assert all(t.grad is None for t in head.target)

    def test_implicit_value_loss_leaves_q(self, bundle, head, batch):
        b, enc = bundle
        with ad.Tape() as tape:
            loss = critic.implicit_value_loss(b, head, enc, batch)
        ad.backward(loss, tape)
        assert all(p.grad is not None for p in b.params)
        assert all(p.grad is None for p in head.params)

    def test_linear_heads(self):
        """Qbar(s, a, z) = a_1 and V(s, z) = s_1 give closed-form losses and advantages."""
        enc = create_encoder(2, 4, (8,), seed=0)
        b = critic.create_critic(2, enc, (), seed=0)
        b.params["l0.weight"].values[...] = self._linear(0, 6)
        head = critic.create_q_head(2, 2, enc, (), seed=0)
        head.params["l0.weight"].values[...] = self._linear(2, 8)
        head.target["l0.weight"].values[...] = self._linear(2, 8)
        sb = _batch([[1.0, 0.0]], [[1.0, 0.0]], [[5.5, 5.5]], [TRAJ_FUTURE])
        sb.a_h = np.array([[0.5, 0.0]], np.float32)
        assert critic.q_advantage(b, head, enc, sb)[0] == pytest.approx(-0.5)
        # residual -0.5 sits on the (1 - kappa) side
        loss = critic.implicit_value_loss(b, head, enc, sb).item()
        assert loss == pytest.approx(0.3 * 0.25, rel=1e-6)

    def test_q_advantage_records_nothing(self, bundle, head, batch):
        b, enc = bundle
        with ad.Tape() as tape:
            adv = critic.q_advantage(b, head, enc, batch)
        assert len(tape) == 0
        assert adv.shape == (32,)
