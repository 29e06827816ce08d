"""Imagination rollouts and actor-critic learning on latent states.

Rollouts run untaped (the model is frozen for them); the actor and critic
losses re-run only their own heads on the recorded, detached states, so each
update reaches exactly one parameter set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .environment import OMEGA_MAX, V_MAX, Action
from .params import ParamSet, adam_update, he_init
from .world_model import ACTION_DIM, DiagonalGaussian

LOG_TWO_PI = float(np.log(2.0 * np.pi))


@dataclass
class BehaviorConfig:
    horizon: int = 15
    return_lambda: float = 0.95
    gamma: float = 0.99
    actor_lr: float = 8e-5
    critic_lr: float = 8e-5
    entropy_coef: float = 1e-3
    hidden: int = 200
    stddev_floor: float = 1e-4
    grad_clip: float = 100.0

    def validate(self):
        if not (0.0 <= self.return_lambda <= 1.0):
            raise ValueError(f"lambda must be in [0,1], got {self.return_lambda}")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must be in [0,1), got {self.gamma}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class ImaginedTrajectory:
    h: np.ndarray           # [N,H+1,deter]
    z: np.ndarray           # [N,H+1,latent]
    pre_squash: np.ndarray  # [N,H,2] Gaussian samples before tanh
    actions: np.ndarray     # [N,H,2] squashed, in [-1,1]
    rewards: np.ndarray     # [N,H] reward-head predictions
    continues: np.ndarray   # [N,H] continuation probabilities


class ActorCritic:
    """Gaussian policy head and value head over [h;z]."""

    def __init__(self, deter_dim: int, latent_dim: int, config: BehaviorConfig,
                 init_rng: np.random.Generator):
        config.validate()
        self.config = config
        in_dim = deter_dim + latent_dim
        hid = config.hidden

        self.actor_params = ParamSet()
        ap = self.actor_params
        ap.add("policy.w1", he_init(init_rng, (in_dim, hid), in_dim))
        ap.add("policy.b1", np.zeros(hid, np.float32))
        # zero-init output layers: start at mean 0, stddev softplus(0)+floor
        ap.add("policy.wmean", np.zeros((hid, ACTION_DIM), np.float32))
        ap.add("policy.bmean", np.zeros(ACTION_DIM, np.float32))
        ap.add("policy.wstd", np.zeros((hid, ACTION_DIM), np.float32))
        ap.add("policy.bstd", np.zeros(ACTION_DIM, np.float32))

        self.critic_params = ParamSet()
        cp = self.critic_params
        cp.add("critic.w1", he_init(init_rng, (in_dim, hid), in_dim))
        cp.add("critic.b1", np.zeros(hid, np.float32))
        cp.add("critic.w2", np.zeros((hid, 1), np.float32))
        cp.add("critic.b2", np.zeros(1, np.float32))

    def policy_dist(self, h, z) -> DiagonalGaussian:
        p = self.actor_params
        x = ad.concat([_t(h), _t(z)], axis=1)
        hid = ad.elu(ad.affine(x, p["policy.w1"], p["policy.b1"]))
        mean = ad.tanh(ad.affine(hid, p["policy.wmean"], p["policy.bmean"]))
        std = ad.add(ad.softplus(ad.affine(hid, p["policy.wstd"], p["policy.bstd"])),
                     self.config.stddev_floor)
        return DiagonalGaussian(mean, std)

    def value(self, h, z) -> Tensor:
        p = self.critic_params
        x = ad.concat([_t(h), _t(z)], axis=1)
        hid = ad.elu(ad.affine(x, p["critic.w1"], p["critic.b1"]))
        return ad.reshape(ad.affine(hid, p["critic.w2"], p["critic.b2"]), (x.shape[0],))


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


# ---------------------------------------------------------------------------
# acting in the real environment
# ---------------------------------------------------------------------------

def act(actor: ActorCritic, h: np.ndarray, z: np.ndarray, explore: bool,
        noise_std: float, rng: np.random.Generator) -> tuple[Action, np.ndarray, np.ndarray]:
    """Sample (or take the mean of) the policy, squash, scale to robot bounds.

    Returns (physical action, normalized action in [-1,1], pre-squash sample).
    """
    dist = actor.policy_dist(h.reshape(1, -1), z.reshape(1, -1))
    mean = dist.mean.data[0]
    if explore:
        u = mean + dist.stddev.data[0] * rng.standard_normal(ACTION_DIM)
        if noise_std > 0.0:
            u = u + noise_std * rng.standard_normal(ACTION_DIM)
    else:
        u = mean.copy()
    a = np.tanh(u)
    return Action(float(a[0]) * V_MAX, float(a[1]) * OMEGA_MAX), a.astype(np.float32), u.astype(np.float32)


def exploration_noise(step: int, total_steps: int, start: float = 0.3, end: float = 0.05) -> float:
    """Linear anneal from start to end over the first half of the budget."""
    if total_steps <= 0:
        return end
    frac = min(1.0, 2.0 * step / total_steps)
    return max(end, start - (start - end) * frac)


# ---------------------------------------------------------------------------
# imagination
# ---------------------------------------------------------------------------

def imagine(model, actor: ActorCritic, h0: np.ndarray, z0: np.ndarray,
            horizon: int, rng: np.random.Generator) -> ImaginedTrajectory:
    """Unroll policy and transition prior from real posterior states.

    Runs untaped; the model stays frozen. Rewards and continuation
    probabilities are the head predictions at each pre-action state.
    """
    if horizon < 1:
        raise ValueError(f"imagination horizon must be >= 1, got {horizon}")
    h = np.asarray(h0, np.float32)
    z = np.asarray(z0, np.float32)
    N = h.shape[0]
    hs, zs, us, acts, rewards, continues = [h], [z], [], [], [], []
    for _ in range(horizon):
        dist = actor.policy_dist(h, z)
        u = dist.mean.data + dist.stddev.data * rng.standard_normal((N, ACTION_DIM)).astype(np.float32)
        a = np.tanh(u)
        rewards.append(model.predict_reward(_t(h), _t(z)).data)
        continues.append(model.predict_discount(_t(h), _t(z)).data)
        h = model.deterministic_update(_t(h), _t(z), _t(a)).data
        prior = model.prior(_t(h))
        z = (prior.mean.data + prior.stddev.data
             * rng.standard_normal(prior.mean.shape).astype(np.float32))
        hs.append(h)
        zs.append(z)
        us.append(u)
        acts.append(a)
    return ImaginedTrajectory(
        h=np.stack(hs, axis=1), z=np.stack(zs, axis=1),
        pre_squash=np.stack(us, axis=1), actions=np.stack(acts, axis=1),
        rewards=np.stack(rewards, axis=1), continues=np.stack(continues, axis=1))


# ---------------------------------------------------------------------------
# returns and losses
# ---------------------------------------------------------------------------

def lambda_returns(rewards: np.ndarray, values: np.ndarray, continues: np.ndarray,
                   gamma: float, lam: float) -> np.ndarray:
    """Backward recursion G_t = r_t + gamma*c_t*((1-lam)*V_{t+1} + lam*G_{t+1}).

    rewards [N,H], values [N,H+1], continues [N,H]; G_H seeds with V_H.
    """
    H = rewards.shape[-1]
    out = np.zeros_like(rewards, dtype=np.float64)
    next_g = values[..., -1].astype(np.float64)
    for t in reversed(range(H)):
        bootstrap = (1.0 - lam) * values[..., t + 1] + lam * next_g
        next_g = rewards[..., t] + gamma * continues[..., t] * bootstrap
        out[..., t] = next_g
    return out.astype(np.float32)


def critic_loss(values: Tensor, targets: np.ndarray) -> Tensor:
    """Half mean squared error against stop-gradient targets."""
    return ad.mul(ad.mean(ad.square(ad.sub(values, Tensor(np.asarray(targets, np.float32))))), 0.5)


def gaussian_entropy(stddev) -> Tensor:
    """Closed-form entropy of a diagonal Gaussian, summed over dims -> [N]."""
    half_log_2pie = 0.5 * (LOG_TWO_PI + 1.0)
    return ad.sum_(ad.add(ad.log(_t(stddev)), half_log_2pie), axis=-1)


def gaussian_log_prob(dist: DiagonalGaussian, x: np.ndarray) -> Tensor:
    """Log density of pre-squash samples under the policy Gaussian -> [N]."""
    zscore = ad.div(ad.sub(Tensor(np.asarray(x, np.float32)), dist.mean), dist.stddev)
    per_dim = ad.sub(ad.mul(ad.square(zscore), -0.5),
                     ad.add(ad.log(dist.stddev), 0.5 * LOG_TWO_PI))
    return ad.sum_(per_dim, axis=-1)


def actor_loss(dist: DiagonalGaussian, pre_squash: np.ndarray, advantages: np.ndarray,
               entropy_coef: float) -> Tensor:
    """Negative policy-gradient surrogate with an entropy bonus.

    advantages are stop-gradient constants; gradients reach only the policy
    parameters behind `dist`.
    """
    logp = gaussian_log_prob(dist, pre_squash)
    weighted = ad.mul(logp, Tensor(np.asarray(advantages, np.float32)))
    bonus = ad.mul(gaussian_entropy(dist.stddev), entropy_coef)
    return ad.mul(ad.mean(ad.add(weighted, bonus)), -1.0)


def behavior_update(model, actor: ActorCritic, h0: np.ndarray, z0: np.ndarray,
                    rng: np.random.Generator) -> tuple[float, float]:
    """One imagination rollout, one critic step, one actor step.

    Returns (actor loss, critic loss). The model parameter set is untouched.
    """
    cfg = actor.config
    traj = imagine(model, actor, h0, z0, cfg.horizon, rng)
    N, H = traj.rewards.shape
    h_flat = traj.h.reshape(N * (H + 1), -1)
    z_flat = traj.z.reshape(N * (H + 1), -1)
    values = actor.value(h_flat, z_flat).data.reshape(N, H + 1)
    # the continuation head is trained toward gamma*(1-done); dividing by gamma
    # recovers a pure continuation probability for the return recursion
    cont = np.clip(traj.continues / cfg.gamma, 0.0, 1.0)
    targets = lambda_returns(traj.rewards, values, cont, cfg.gamma, cfg.return_lambda)

    pre_h = traj.h[:, :H].reshape(N * H, -1)
    pre_z = traj.z[:, :H].reshape(N * H, -1)
    with Tape() as tape:
        pred = actor.value(pre_h, pre_z)
        c_loss = critic_loss(pred, targets.reshape(N * H))
    tape.backward(c_loss)
    adam_update(actor.critic_params, cfg.critic_lr, cfg.grad_clip)

    advantages = (targets - values[:, :H]).reshape(N * H)
    with Tape() as tape:
        dist = actor.policy_dist(pre_h, pre_z)
        a_loss = actor_loss(dist, traj.pre_squash.reshape(N * H, ACTION_DIM),
                            advantages, cfg.entropy_coef)
    tape.backward(a_loss)
    adam_update(actor.actor_params, cfg.actor_lr, cfg.grad_clip)
    return float(a_loss.data), float(c_loss.data)
