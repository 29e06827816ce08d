import numpy as np
import pytest

from dvxs import autodiff as ad
from dvxs.autodiff import Tape, Tensor
from dvxs.behavior import (
    ActorCritic,
    BehaviorConfig,
    act,
    actor_loss,
    behavior_update,
    critic_loss,
    exploration_noise,
    gaussian_entropy,
    gaussian_log_prob,
    imagine,
    lambda_returns,
)
from dvxs.params import adam_update
from dvxs.world_model import WorldModel, WorldModelConfig


def mini_world(seed=0):
    cfg = WorldModelConfig(obs_len=16, latent_dim=4, deter_dim=8, head_hidden=12,
                           encoder_channels=(2, 3, 4), encoder_kernels=(5, 5, 3),
                           encoder_strides=(2, 2, 1))
    return WorldModel(cfg, np.random.default_rng(seed))


def mini_actor(seed=0, **kw):
    cfg = BehaviorConfig(hidden=16, **kw)
    return ActorCritic(8, 4, cfg, np.random.default_rng(seed))


class BanditModel:
    """Single-state two-arm bandit as an exact synthetic transition model.

    h = [payoff of the last action, terminal flag]; arm 1 (positive first
    action component) pays 1, arm 2 pays 0. Episodes last one action.
    """

    deter_dim = 2
    latent_dim = 2

    def __init__(self, gamma=0.99):
        self.gamma = gamma

    def predict_reward(self, h, z):
        return Tensor(h.data[:, 0].copy())

    def predict_discount(self, h, z):
        cont = 1.0 - h.data[:, 1]
        return Tensor((self.gamma * cont).astype(np.float32))

    def deterministic_update(self, h, z, a):
        out = np.zeros_like(h.data)
        out[:, 0] = (a.data[:, 0] > 0).astype(np.float32)
        out[:, 1] = 1.0
        return Tensor(out)

    def prior(self, h):
        from dvxs.world_model import DiagonalGaussian
        shape = (h.shape[0], self.latent_dim)
        return DiagonalGaussian(Tensor(np.zeros(shape, np.float32)),
                                Tensor(np.full(shape, 1e-4, np.float32)))


def run_bandit(seed, updates=2000, entropy_coef=1e-3, lr=1e-3):
    cfg = BehaviorConfig(horizon=2, hidden=16, actor_lr=lr, critic_lr=lr,
                         entropy_coef=entropy_coef)
    actor = ActorCritic(2, 2, cfg, np.random.default_rng(seed))
    model = BanditModel(cfg.gamma)
    rng = np.random.default_rng(seed + 1)
    h0 = np.zeros((16, 2), np.float32)
    z0 = np.zeros((16, 2), np.float32)
    for _ in range(updates):
        behavior_update(model, actor, h0, z0, rng)
    dist = actor.policy_dist(h0[:1], z0[:1])
    return float(dist.mean.data[0, 0]), float(dist.stddev.data.mean())


# ---------------------------------------------------------------------------
# lambda returns
# ---------------------------------------------------------------------------

def test_lambda_zero_is_one_step_td():
    rng = np.random.default_rng(0)
    r = rng.standard_normal((5, 7)).astype(np.float32)
    v = rng.standard_normal((5, 8)).astype(np.float32)
    c = rng.uniform(0, 1, (5, 7)).astype(np.float32)
    got = lambda_returns(r, v, c, gamma=0.9, lam=0.0)
    want = r + 0.9 * c * v[:, 1:]
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_lambda_one_is_monte_carlo_bootstrap():
    rng = np.random.default_rng(1)
    r = rng.standard_normal((4, 6)).astype(np.float32)
    v = rng.standard_normal((4, 7)).astype(np.float32)
    c = np.ones((4, 6), np.float32)
    gamma = 0.95
    got = lambda_returns(r, v, c, gamma=gamma, lam=1.0)
    H = 6
    for t in range(H):
        want = sum(gamma**k * r[:, t + k] for k in range(H - t)) + gamma ** (H - t) * v[:, -1]
        np.testing.assert_allclose(got[:, t], want, atol=1e-5)


def test_lambda_hand_case():
    r = np.ones((1, 3), np.float32)
    v = np.zeros((1, 4), np.float32)
    c = np.ones((1, 3), np.float32)
    got = lambda_returns(r, v, c, gamma=1.0, lam=1.0)
    np.testing.assert_array_equal(got, [[3.0, 2.0, 1.0]])


# ---------------------------------------------------------------------------
# entropy / log-prob / losses
# ---------------------------------------------------------------------------

def test_entropy_closed_forms():
    one = gaussian_entropy(np.array([[1.0]])).item()
    assert abs(one - 0.5 * np.log(2 * np.pi * np.e)) < 1e-6
    scaled = gaussian_entropy(np.array([[np.e]])).item()
    assert abs(scaled - (one + 1.0)) < 1e-5


def test_entropy_matches_monte_carlo():
    rng = np.random.default_rng(2)
    sigma = 0.7
    x = rng.normal(0.0, sigma, size=1_000_000)
    logp = -0.5 * (x / sigma) ** 2 - np.log(sigma) - 0.5 * np.log(2 * np.pi)
    mc = -logp.mean()
    closed = gaussian_entropy(np.array([[sigma]])).item()
    assert abs(closed - mc) / closed < 0.01


def test_entropy_monotone_in_sigma():
    rng = np.random.default_rng(3)
    s = np.sort(rng.uniform(0.1, 3.0, 10))
    vals = [gaussian_entropy(np.array([[x]])).item() for x in s]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_log_prob_matches_scipy_free_formula():
    rng = np.random.default_rng(4)
    mean = rng.standard_normal((3, 2)).astype(np.float32)
    std = rng.uniform(0.5, 1.5, (3, 2)).astype(np.float32)
    x = rng.standard_normal((3, 2)).astype(np.float32)
    from dvxs.world_model import DiagonalGaussian

    got = gaussian_log_prob(DiagonalGaussian(Tensor(mean), Tensor(std)), x).data
    want = np.sum(-0.5 * ((x - mean) / std) ** 2 - np.log(std) - 0.5 * np.log(2 * np.pi), axis=1)
    np.testing.assert_allclose(got, want, rtol=1e-5)


def test_critic_loss_values():
    v = Tensor(np.zeros(4, np.float32))
    assert critic_loss(Tensor(np.full(4, 2.0, np.float32)), np.full(4, 2.0)).item() == 0.0
    assert abs(critic_loss(v, np.full(4, 2.0)).item() - 2.0) < 1e-7


def test_critic_gradients_stay_in_critic():
    model = mini_world()
    actor = mini_actor()
    h = np.random.default_rng(5).standard_normal((6, 8)).astype(np.float32)
    z = np.random.default_rng(6).standard_normal((6, 4)).astype(np.float32)
    with Tape() as tape:
        loss = critic_loss(actor.value(h, z), np.ones(6))
    tape.backward(loss)
    assert any(np.any(p.grad != 0) for p in actor.critic_params.values())
    assert all(np.all(p.grad == 0) for p in actor.actor_params.values())
    assert all(np.all(p.grad == 0) for p in model.params.values())


def test_actor_loss_reduces_to_entropy_when_advantage_zero():
    actor = mini_actor()
    h = np.zeros((5, 8), np.float32)
    z = np.zeros((5, 4), np.float32)
    dist = actor.policy_dist(h, z)
    eta = 1e-2
    loss = actor_loss(dist, np.zeros((5, 2), np.float32), np.zeros(5, np.float32), eta)
    want = -eta * float(gaussian_entropy(dist.stddev).data.mean())
    assert abs(loss.item() - want) < 1e-7


def test_actor_gradient_increases_logp_of_positive_advantage_actions():
    actor = mini_actor(seed=7, actor_lr=1e-2)
    rng = np.random.default_rng(8)
    h = rng.standard_normal((8, 8)).astype(np.float32)
    z = rng.standard_normal((8, 4)).astype(np.float32)
    dist = actor.policy_dist(h, z)
    u = dist.mean.data + dist.stddev.data * rng.standard_normal((8, 2)).astype(np.float32)
    before = gaussian_log_prob(actor.policy_dist(h, z), u).data.mean()
    with Tape() as tape:
        loss = actor_loss(actor.policy_dist(h, z), u, np.ones(8, np.float32), 0.0)
    tape.backward(loss)
    adam_update(actor.actor_params, 1e-2)
    after = gaussian_log_prob(actor.policy_dist(h, z), u).data.mean()
    assert after > before


def test_actor_update_leaves_critic_untouched():
    actor = mini_actor()
    h = np.zeros((4, 8), np.float32)
    z = np.zeros((4, 4), np.float32)
    with Tape() as tape:
        loss = actor_loss(actor.policy_dist(h, z), np.zeros((4, 2), np.float32),
                          np.ones(4, np.float32), 1e-3)
    tape.backward(loss)
    assert all(np.all(p.grad == 0) for p in actor.critic_params.values())


# ---------------------------------------------------------------------------
# imagination
# ---------------------------------------------------------------------------

def test_imagine_shapes_and_counts():
    model = mini_world()
    actor = mini_actor()
    h0 = np.zeros((3, 8), np.float32)
    z0 = np.zeros((3, 4), np.float32)
    traj = imagine(model, actor, h0, z0, horizon=1, rng=np.random.default_rng(0))
    assert traj.actions.shape == (3, 1, 2)
    assert traj.rewards.shape == (3, 1)
    traj = imagine(model, actor, h0, z0, horizon=5, rng=np.random.default_rng(0))
    assert traj.h.shape == (3, 6, 8)
    assert traj.actions.shape == (3, 5, 2)
    with pytest.raises(ValueError, match="horizon"):
        imagine(model, actor, h0, z0, horizon=0, rng=np.random.default_rng(0))


def test_imagine_repeatable_under_seed_and_frozen_model():
    model = mini_world()
    actor = mini_actor()
    h0 = np.zeros((2, 8), np.float32)
    z0 = np.zeros((2, 4), np.float32)
    t1 = imagine(model, actor, h0, z0, 4, np.random.default_rng(9))
    t2 = imagine(model, actor, h0, z0, 4, np.random.default_rng(9))
    np.testing.assert_array_equal(t1.h, t2.h)
    np.testing.assert_array_equal(t1.rewards, t2.rewards)
    assert all(np.all(p.grad == 0) for p in model.params.values())


def test_behavior_update_never_touches_model_gradients():
    model = mini_world()
    actor = mini_actor()
    h0 = np.random.default_rng(10).standard_normal((4, 8)).astype(np.float32)
    z0 = np.random.default_rng(11).standard_normal((4, 4)).astype(np.float32)
    before = {k: p.data.copy() for k, p in model.params.items()}
    behavior_update(model, actor, h0, z0, np.random.default_rng(12))
    for k, p in model.params.items():
        np.testing.assert_array_equal(p.data, before[k])
        np.testing.assert_array_equal(p.grad, 0.0)


# ---------------------------------------------------------------------------
# acting
# ---------------------------------------------------------------------------

def test_act_deterministic_mean_when_not_exploring():
    actor = mini_actor()
    h = np.zeros(8, np.float32)
    z = np.zeros(4, np.float32)
    a1, norm1, _ = act(actor, h, z, explore=False, noise_std=0.3, rng=np.random.default_rng(0))
    a2, norm2, _ = act(actor, h, z, explore=False, noise_std=0.3, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(norm1, norm2)
    dist = actor.policy_dist(h.reshape(1, -1), z.reshape(1, -1))
    np.testing.assert_allclose(norm1, np.tanh(dist.mean.data[0]), atol=1e-6)
    assert a1.v == pytest.approx(np.tanh(dist.mean.data[0, 0]) * 0.5)


def test_act_always_within_bounds():
    actor = mini_actor(seed=13)
    rng = np.random.default_rng(14)
    for _ in range(100):
        h = (rng.standard_normal(8) * 10).astype(np.float32)
        z = (rng.standard_normal(4) * 10).astype(np.float32)
        a, norm, _ = act(actor, h, z, explore=True, noise_std=0.5, rng=rng)
        assert -0.5 <= a.v <= 0.5
        assert -1.0 <= a.omega <= 1.0
        assert np.all(np.abs(norm) <= 1.0)


def test_exploration_noise_schedule():
    total = 10_000
    assert exploration_noise(0, total) == pytest.approx(0.3)
    assert exploration_noise(total // 2, total) == pytest.approx(0.05)
    assert exploration_noise(total, total) == pytest.approx(0.05)
    assert exploration_noise(total // 4, total) == pytest.approx(0.175)


# ---------------------------------------------------------------------------
# bandit fixture
# ---------------------------------------------------------------------------

def test_bandit_converges_to_better_arm():
    wins = 0
    for seed in range(3):
        mean0, _ = run_bandit(seed, updates=1500)
        wins += mean0 > 0.0
    assert wins == 3


def test_entropy_coefficient_raises_converged_stddev():
    stds = [run_bandit(0, updates=800, entropy_coef=eta)[1] for eta in (0.0, 3e-2)]
    assert stds[1] > stds[0]
