"""Training orchestration: interleaved collection, model updates, behavior
updates, exploration-noise annealing, metrics, and lossless checkpoints."""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .autodiff import Tape, Tensor
from .behavior import ActorCritic, BehaviorConfig, act, behavior_update, exploration_noise
from .curiosity import CuriosityConfig, intrinsic_reward
from .environment import DynamicObstacle, ExplorationEnv, load_environment
from .params import adam_update, read_arrays, write_arrays
from .replay import ReplayBuffer, Transition
from .world_model import OBS_SCALE, WorldModel, WorldModelConfig

METRICS_COLUMNS = ("global_step", "episode", "return", "explored_m2", "path_length_m",
                   "collided", "eqs", "ees", "intrinsic_sum", "model_recon",
                   "model_kl_dyn", "actor_loss", "critic_loss")


@dataclass
class TrainConfig:
    env_name: str = "complex"
    total_steps: int = 1_000_000
    seed: int = 0
    train_interval: int = 5
    model_updates: int = 100
    behavior_updates: int = 10
    buffer_capacity: int = 1_000_000
    batch_size: int = 50
    seq_len: int = 50
    model_lr: float = 3e-4
    grad_clip: float = 100.0
    checkpoint_interval: int = 10_000
    noise_start: float = 0.3
    noise_end: float = 0.05
    flat_loops: bool = False
    world: WorldModelConfig = field(default_factory=WorldModelConfig)
    behavior: BehaviorConfig = field(default_factory=BehaviorConfig)
    curiosity: CuriosityConfig = field(default_factory=CuriosityConfig)

    def validate(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        for name in ("train_interval", "model_updates", "behavior_updates",
                     "buffer_capacity", "batch_size", "seq_len", "checkpoint_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.model_lr <= 0:
            raise ValueError("model_lr must be positive")
        self.world.validate()
        self.behavior.validate()
        self.curiosity.validate()


_SECTION_FIELDS = {"train": None, "world": "world", "behavior": "behavior",
                   "curiosity": "curiosity"}


def apply_config_overrides(config: TrainConfig, overrides: dict):
    """Set dotted `section.key` fields, e.g. {"world.latent_dim": 8}."""
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if section not in _SECTION_FIELDS or not key:
            raise ValueError(f"unknown config key {dotted!r}")
        target = config if _SECTION_FIELDS[section] is None else getattr(config, _SECTION_FIELDS[section])
        if not hasattr(target, key) or key in ("world", "behavior", "curiosity"):
            raise ValueError(f"unknown config key {dotted!r}")
        setattr(target, key, value)
    return config


def paper_preset() -> TrainConfig:
    """Full-scale defaults; not sized for a desk run."""
    return TrainConfig()


DESK_OVERRIDES = {
    "train.env_name": "simple",
    "train.total_steps": 30_000,
    "train.train_interval": 10,
    "train.model_updates": 1,
    "train.behavior_updates": 2,
    "train.buffer_capacity": 50_000,
    "train.batch_size": 8,
    "train.seq_len": 20,
    "world.latent_dim": 8,
    "world.deter_dim": 32,
    "world.head_hidden": 64,
    "world.encoder_channels": (8, 16, 16),
    "behavior.horizon": 8,
    "behavior.hidden": 64,
    "behavior.actor_lr": 3e-4,
    "behavior.critic_lr": 3e-4,
}


def desk_preset() -> TrainConfig:
    """Scaled-down configuration that trains in minutes on one CPU core."""
    return apply_config_overrides(paper_preset(), DESK_OVERRIDES)


PRESET_OVERRIDES = {"paper": {}, "desk": DESK_OVERRIDES}
PRESETS = {"paper": paper_preset, "desk": desk_preset}


def config_to_dict(config: TrainConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    world = dict(d.pop("world"))
    for key in ("encoder_channels", "encoder_kernels", "encoder_strides"):
        world[key] = tuple(world[key])
    cfg = TrainConfig(world=WorldModelConfig(**world),
                      behavior=BehaviorConfig(**d.pop("behavior")),
                      curiosity=CuriosityConfig(**d.pop("curiosity")), **d)
    cfg.validate()
    return cfg


class Trainer:
    def __init__(self, config: TrainConfig, out_dir: str | None = None):
        config.validate()
        self.config = config
        self.out_dir = out_dir
        seeds = np.random.SeedSequence(config.seed).spawn(3)
        self.env_rng = np.random.default_rng(seeds[0])
        init_rng = np.random.default_rng(seeds[1])
        self.sample_rng = np.random.default_rng(seeds[2])

        self.env = ExplorationEnv(load_environment(config.env_name), self.env_rng)
        self.model = WorldModel(config.world, init_rng)
        self.actor = ActorCritic(config.world.deter_dim, config.world.latent_dim,
                                 config.behavior, init_rng)
        self.buffer = ReplayBuffer(config.buffer_capacity, obs_len=config.world.obs_len)

        self.step = 0
        self.episode = 0
        self.h = np.zeros(config.world.deter_dim, np.float32)
        self.z = np.zeros(config.world.latent_dim, np.float32)
        self.obs: np.ndarray | None = None
        self.needs_reset = True
        self.episode_return = 0.0
        self.episode_intrinsic = 0.0
        self.last_losses = {"model_recon": 0.0, "model_kl_dyn": 0.0,
                            "actor_loss": 0.0, "critic_loss": 0.0}
        self.model_update_count = 0
        self.behavior_update_count = 0
        self._metrics_rows: list[list] = []

    # -- data collection -----------------------------------------------------

    def collect_step(self) -> Transition:
        cfg = self.config
        if self.needs_reset:
            self.obs = self.env.reset().astype(np.float32)
            self.h = np.zeros(cfg.world.deter_dim, np.float32)
            self.episode_return = 0.0
            self.episode_intrinsic = 0.0
            self.needs_reset = False

        obs_norm = Tensor((self.obs / OBS_SCALE).reshape(1, -1))
        e = self.model.encode(obs_norm)
        h_t = Tensor(self.h.reshape(1, -1))
        q = self.model.posterior(h_t, e)
        p = self.model.prior(h_t)
        r_int = 0.0
        if cfg.curiosity.enabled and cfg.curiosity.scale > 0:
            r_int = intrinsic_reward(q, p, cfg.curiosity.scale, cfg.curiosity.clip)
        eps = self.sample_rng.standard_normal(q.mean.shape).astype(np.float32)
        self.z = (q.mean.data + q.stddev.data * eps)[0]

        noise = exploration_noise(self.step, cfg.total_steps, cfg.noise_start, cfg.noise_end)
        action, a_norm, _ = act(self.actor, self.h, self.z, explore=True,
                                noise_std=noise, rng=self.sample_rng)
        result = self.env.step(action)

        transition = Transition(self.obs.copy(), a_norm, float(result.reward),
                                r_int, result.done, self.episode)
        self.buffer.append(transition)

        self.h = self.model.deterministic_update(
            h_t, Tensor(self.z.reshape(1, -1)), a_norm.reshape(1, -1)).data[0]
        self.obs = result.observation.astype(np.float32)
        self.episode_return += float(result.reward)
        self.episode_intrinsic += r_int
        self.step += 1

        if result.done:
            self._record_episode(result.collided)
            self.episode += 1
            self.needs_reset = True
        return transition

    def _record_episode(self, collided: bool):
        explored = self.env.tracker.explored_m2
        path = self.env.robot.path_length
        ees = explored / max(path, 0.01)
        self._metrics_rows.append([
            self.step, self.episode, self.episode_return, explored, path,
            int(collided), explored, ees, self.episode_intrinsic,
            self.last_losses["model_recon"], self.last_losses["model_kl_dyn"],
            self.last_losses["actor_loss"], self.last_losses["critic_loss"]])

    # -- learning ------------------------------------------------------------

    def _model_update(self):
        cfg = self.config
        batch = self.buffer.sample_sequences(cfg.batch_size, cfg.seq_len, self.sample_rng)
        rewards = batch.rewards_ext + batch.rewards_int
        with Tape() as tape:
            result = self.model.observe_sequence(batch.obs, batch.actions, rewards,
                                                 batch.dones, rng=self.sample_rng)
        tape.backward(result.loss)
        adam_update(self.model.params, cfg.model_lr, cfg.grad_clip)
        self.model_update_count += 1
        self.last_losses["model_recon"] = result.report.reconstruction
        self.last_losses["model_kl_dyn"] = result.report.kl_dynamics
        return result

    def _behavior_update(self, result):
        cfg = self.config
        h0 = result.h_states.reshape(-1, cfg.world.deter_dim)
        z0 = result.z_states.reshape(-1, cfg.world.latent_dim)
        a_loss, c_loss = behavior_update(self.model, self.actor, h0, z0, self.sample_rng)
        self.behavior_update_count += 1
        self.last_losses["actor_loss"] = a_loss
        self.last_losses["critic_loss"] = c_loss

    def train_tick(self):
        cfg = self.config
        if not self.buffer.ready(cfg.seq_len):
            return
        if cfg.flat_loops:
            result = None
            for _ in range(cfg.model_updates):
                result = self._model_update()
            for _ in range(cfg.behavior_updates):
                self._behavior_update(result)
        else:
            for _ in range(cfg.model_updates):
                result = self._model_update()
                for _ in range(cfg.behavior_updates):
                    self._behavior_update(result)

    # -- outer loop ----------------------------------------------------------

    def run(self) -> dict:
        cfg = self.config
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
            self._write_manifest()
        while self.step < cfg.total_steps:
            self.collect_step()
            if self.step % cfg.train_interval == 0:
                self.train_tick()
            if self.out_dir and self.step % cfg.checkpoint_interval == 0:
                self.checkpoint_save(os.path.join(self.out_dir, f"checkpoint_{self.step:08d}.dvxs"))
        summary = {"steps": self.step, "episodes": self.episode,
                   "model_updates": self.model_update_count,
                   "behavior_updates": self.behavior_update_count}
        if self.out_dir:
            final = os.path.join(self.out_dir, "checkpoint_final.dvxs")
            self.checkpoint_save(final)
            metrics = os.path.join(self.out_dir, "metrics.csv")
            self.write_metrics(metrics)
            summary["checkpoint"] = final
            summary["metrics"] = metrics
            from .report import save_training_figures
            summary["figures"] = save_training_figures(metrics, self.out_dir)
        return summary

    def _write_manifest(self):
        manifest = {
            "config": config_to_dict(self.config),
            "seed": self.config.seed,
            "seed_streams": ["environment", "initialization", "sampling"],
            "build": __version__,
            "start_time": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
            "out_dir": os.path.abspath(self.out_dir),
        }
        with open(os.path.join(self.out_dir, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)

    def write_metrics(self, path):
        with open(path, "w") as f:
            f.write(",".join(METRICS_COLUMNS) + "\n")
            for row in self._metrics_rows:
                f.write(",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row) + "\n")
        return path

    # -- persistence ---------------------------------------------------------

    def checkpoint_save(self, path):
        arrays = {}
        arrays.update(self.model.params.state_arrays("model/"))
        arrays.update(self.actor.actor_params.state_arrays("actor/"))
        arrays.update(self.actor.critic_params.state_arrays("critic/"))
        arrays.update(self.buffer.state_arrays())
        arrays["state.h"] = self.h
        arrays["state.z"] = self.z
        arrays["state.obs"] = self.obs if self.obs is not None else np.zeros(0, np.float32)
        arrays["env.explored"] = self.env.tracker.explored.astype(np.float32)
        arrays["env.visits"] = self.env.tracker.visits.astype(np.float32)

        env_state = {
            "robot": [self.env.robot.x, self.env.robot.y, self.env.robot.heading,
                      self.env.robot.path_length],
            "steps": self.env.steps,
            "done": self.env.done,
            "obstacles": [[list(ob.pos), list(ob.direction), ob.radius, ob.speed]
                          for ob in self.env.obstacles],
        }
        meta = {
            "kind": "trainer-checkpoint",
            "config": config_to_dict(self.config),
            "step": self.step,
            "episode": self.episode,
            "needs_reset": self.needs_reset,
            "episode_return": self.episode_return,
            "episode_intrinsic": self.episode_intrinsic,
            "last_losses": self.last_losses,
            "model_update_count": self.model_update_count,
            "behavior_update_count": self.behavior_update_count,
            "opt_steps": {"model": self.model.params.step_count,
                          "actor": self.actor.actor_params.step_count,
                          "critic": self.actor.critic_params.step_count},
            "env_state": env_state,
            "rng": {"env": _rng_state(self.env_rng), "sample": _rng_state(self.sample_rng)},
            "metrics_rows": self._metrics_rows,
        }
        write_arrays(path, arrays, meta)

    @classmethod
    def checkpoint_load(cls, path, out_dir: str | None = None) -> "Trainer":
        arrays, meta = read_arrays(path)
        if meta is None or meta.get("kind") != "trainer-checkpoint":
            raise ValueError(f"{path}: not a trainer checkpoint")
        config = config_from_dict(meta["config"])
        t = cls(config, out_dir=out_dir)
        t.model.params.load_state_arrays(arrays, "model/")
        t.actor.actor_params.load_state_arrays(arrays, "actor/")
        t.actor.critic_params.load_state_arrays(arrays, "critic/")
        t.model.params.step_count = meta["opt_steps"]["model"]
        t.actor.actor_params.step_count = meta["opt_steps"]["actor"]
        t.actor.critic_params.step_count = meta["opt_steps"]["critic"]
        t.buffer = ReplayBuffer.from_state_arrays(arrays)

        t.step = meta["step"]
        t.episode = meta["episode"]
        t.needs_reset = meta["needs_reset"]
        t.episode_return = meta["episode_return"]
        t.episode_intrinsic = meta["episode_intrinsic"]
        t.last_losses = dict(meta["last_losses"])
        t.model_update_count = meta["model_update_count"]
        t.behavior_update_count = meta["behavior_update_count"]
        t._metrics_rows = [list(r) for r in meta["metrics_rows"]]
        t.h = arrays["state.h"]
        t.z = arrays["state.z"]
        t.obs = arrays["state.obs"] if arrays["state.obs"].size else None

        env_state = meta["env_state"]
        rx, ry, rh, rp = env_state["robot"]
        t.env.robot.x, t.env.robot.y = rx, ry
        t.env.robot.heading, t.env.robot.path_length = rh, rp
        t.env.steps = env_state["steps"]
        t.env.done = env_state["done"]
        t.env.tracker.explored = arrays["env.explored"].astype(bool)
        t.env.tracker.visits = arrays["env.visits"].astype(np.int64)
        t.env.obstacles = []
        for pos, direction, radius, speed in env_state["obstacles"]:
            from .environment import ObstacleSpec
            ob = DynamicObstacle(ObstacleSpec(radius, speed, pos[0], pos[1]))
            ob.pos = np.array(pos, np.float64)
            ob.direction = np.array(direction, np.float64)
            t.env.obstacles.append(ob)

        t.env_rng.bit_generator.state = meta["rng"]["env"]
        t.sample_rng.bit_generator.state = meta["rng"]["sample"]
        return t


def _rng_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state
