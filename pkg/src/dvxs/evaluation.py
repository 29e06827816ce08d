"""Episode evaluation, exploration metrics, ablation and robustness harnesses."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .behavior import act
from .environment import (
    OMEGA_MAX,
    PERTURBATION_MODES,
    V_MAX,
    Action,
    ExplorationEnv,
    apply_perturbation,
    load_environment,
    perturb_action,
)
from .trainer import TrainConfig, Trainer, config_from_dict, config_to_dict
from .world_model import OBS_SCALE

ABLATION_VARIANTS = ("full", "no_curiosity", "deterministic_model", "beta_1",
                     "short_horizon", "no_recurrent")
ROBUSTNESS_MODES = ("none", "sensor_noise", "actuator_noise", "occlusion")


@dataclass
class EvalReport:
    mean_return: float
    eqs: float
    ees: float
    collision_rate: float
    episodes: int
    environment: str
    perturbation: str = "none"

    def __post_init__(self):
        if not (0.0 <= self.collision_rate <= 1.0):
            raise ValueError(f"collision rate {self.collision_rate} outside [0,1]")
        if self.episodes < 1:
            raise ValueError("reports need at least one episode")


@dataclass
class EpisodeRecord:
    rows: list = field(default_factory=list)  # step, x, y, heading, v, omega, reward, done
    episode_return: float = 0.0
    explored_m2: float = 0.0
    path_length: float = 0.0
    collided: bool = False


def compute_eqs(tracker, free_area: float) -> float:
    """Exploration quality: explored area in square meters."""
    if free_area <= 0:
        raise ValueError("free_area must be positive")
    return min(tracker.explored_m2, free_area)


def compute_ees(explored_m2: float, path_length_m: float) -> float:
    """Exploration efficiency: area gained per meter traveled."""
    return explored_m2 / max(path_length_m, 0.01)


def _episode_rngs(seed: int, episode: int):
    ss = np.random.SeedSequence((seed, episode)).spawn(2)
    return np.random.default_rng(ss[0]), np.random.default_rng(ss[1])


def run_episode(model, actor, spec, perturbation: str | None, env_rng, noise_rng,
                record: bool = False) -> EpisodeRecord:
    """One deployment episode: encode, posterior mean, squashed policy mean."""
    env = ExplorationEnv(spec, env_rng)
    obs = env.reset().astype(np.float32)
    rec = EpisodeRecord()
    if model is not None:
        h = np.zeros(model.config.deter_dim, np.float32)
    step = 0
    done = False
    while not done:
        if model is None:
            a = Action(float(noise_rng.uniform(-V_MAX, V_MAX)),
                       float(noise_rng.uniform(-OMEGA_MAX, OMEGA_MAX)))
            a_norm = None
        else:
            scan = apply_perturbation(obs.astype(np.float64), perturbation, noise_rng)
            e = model.encode(Tensor((scan.astype(np.float32) / OBS_SCALE).reshape(1, -1)))
            h_t = Tensor(h.reshape(1, -1))
            q = model.posterior(h_t, e)
            z = q.mean.data[0]
            a, a_norm, _ = act(actor, h, z, explore=False, noise_std=0.0, rng=noise_rng)
        v, omega = perturb_action(a.v, a.omega, perturbation, noise_rng)
        result = env.step(Action(v, omega))
        if model is not None:
            h = model.deterministic_update(h_t, Tensor(z.reshape(1, -1)),
                                           a_norm.reshape(1, -1)).data[0]
        rec.episode_return += result.reward
        if record:
            rec.rows.append([step, env.robot.x, env.robot.y, env.robot.heading,
                             v, omega, result.reward, int(result.done)])
        obs = result.observation.astype(np.float32)
        done = result.done
        rec.collided = rec.collided or result.collided
        step += 1
    rec.explored_m2 = env.tracker.explored_m2
    rec.path_length = env.robot.path_length
    return rec


def evaluate(model, actor, env_name: str, episodes: int, perturbation: str | None = None,
             seed: int = 0, record: bool = False) -> tuple[EvalReport, list[EpisodeRecord]]:
    """Aggregate deployment metrics; model=None evaluates a random policy."""
    if perturbation not in (None, "none") and perturbation not in PERTURBATION_MODES:
        raise ValueError(f"unknown perturbation mode: {perturbation!r}")
    spec = load_environment(env_name)
    if model is not None and model.config.obs_len != 360:
        raise ValueError(
            f"checkpoint expects {model.config.obs_len}-beam scans; environments emit 360")
    records = []
    for ep in range(episodes):
        env_rng, noise_rng = _episode_rngs(seed, ep)
        records.append(run_episode(model, actor, spec, perturbation, env_rng, noise_rng, record))
    report = EvalReport(
        mean_return=float(np.mean([r.episode_return for r in records])),
        eqs=float(np.mean([r.explored_m2 for r in records])),
        ees=float(np.mean([compute_ees(r.explored_m2, r.path_length) for r in records])),
        collision_rate=float(np.mean([r.collided for r in records])),
        episodes=episodes, environment=spec.name,
        perturbation=perturbation or "none")
    return report, records


# ---------------------------------------------------------------------------
# trajectory files
# ---------------------------------------------------------------------------

TRAJECTORY_COLUMNS = ("step", "x", "y", "heading", "v", "omega", "reward", "done")


def write_trajectory(path, record: EpisodeRecord):
    with open(path, "w") as f:
        f.write(",".join(TRAJECTORY_COLUMNS) + "\n")
        for row in record.rows:
            f.write(",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row) + "\n")


def read_trajectory(path) -> list[list[float]]:
    rows = []
    with open(path) as f:
        next(f)
        for line in f:
            parts = line.strip().split(",")
            rows.append([float(p) for p in parts])
    return rows


def replay_trajectory(env_name: str, rows: list, seed: int, episode: int = 0) -> EpisodeRecord:
    """Re-execute recorded commands in a fresh env; metrics must reproduce."""
    spec = load_environment(env_name)
    env_rng, _ = _episode_rngs(seed, episode)
    env = ExplorationEnv(spec, env_rng)
    env.reset()
    rec = EpisodeRecord()
    for row in rows:
        result = env.step(Action(row[4], row[5]))
        rec.episode_return += result.reward
        rec.collided = rec.collided or result.collided
    rec.explored_m2 = env.tracker.explored_m2
    rec.path_length = env.robot.path_length
    return rec


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def variant_config(base: TrainConfig, variant: str) -> TrainConfig:
    cfg = config_from_dict(config_to_dict(base))
    if variant == "full":
        pass
    elif variant == "no_curiosity":
        cfg.curiosity.scale = 0.0
    elif variant == "deterministic_model":
        cfg.world.prior_stddev_pinned = True
    elif variant == "beta_1":
        cfg.world.kl_beta = 1.0
    elif variant == "short_horizon":
        cfg.behavior.horizon = 5
    elif variant == "no_recurrent":
        cfg.world.pin_recurrent = True
    else:
        raise ValueError(f"unknown ablation variant: {variant!r}")
    return cfg


def train_and_evaluate(config: TrainConfig, eval_episodes: int, eval_seed: int = 0,
                       perturbation: str | None = None):
    trainer = Trainer(config)
    trainer.run()
    report, _ = evaluate(trainer.model, trainer.actor, config.env_name,
                         eval_episodes, perturbation, seed=eval_seed)
    return report, trainer


def ablation_suite(base: TrainConfig, seeds: list[int], eval_episodes: int = 10,
                   variants=ABLATION_VARIANTS) -> list[dict]:
    """Train every variant on every seed and aggregate evaluation rows."""
    rows = []
    for variant in variants:
        reports = []
        for seed in seeds:
            cfg = variant_config(base, variant)
            cfg.seed = seed
            report, _ = train_and_evaluate(cfg, eval_episodes, eval_seed=1000 + seed)
            reports.append(report)
        rows.append({
            "variant": variant,
            "return": float(np.mean([r.mean_return for r in reports])),
            "eqs": float(np.mean([r.eqs for r in reports])),
            "ees": float(np.mean([r.ees for r in reports])),
            "collision_rate": float(np.mean([r.collision_rate for r in reports])),
            "seeds": len(seeds),
        })
    return rows


def robustness_suite(model, actor, env_name: str, episodes: int = 10,
                     seed: int = 0) -> list[dict]:
    """Evaluate under each perturbation and report relative degradation."""
    rows = []
    clean = None
    for mode in ROBUSTNESS_MODES:
        report, _ = evaluate(model, actor, env_name, episodes,
                             None if mode == "none" else mode, seed=seed)
        if mode == "none":
            clean = report.mean_return
        degradation = 0.0 if mode == "none" else 1.0 - report.mean_return / clean
        rows.append({"mode": mode, "return": report.mean_return, "eqs": report.eqs,
                     "ees": report.ees, "collision_rate": report.collision_rate,
                     "degradation": degradation})
    return rows


def write_rows_csv(path, rows: list[dict]):
    if not rows:
        return path
    cols = list(rows[0])
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            f.write(",".join(repr(float(v)) if isinstance(v, float) else str(v)
                             for v in (row[c] for c in cols)) + "\n")
    return path


def format_report(report: EvalReport) -> str:
    return (f"env={report.environment} perturbation={report.perturbation} "
            f"episodes={report.episodes} return={report.mean_return:.2f} "
            f"eqs={report.eqs:.2f} ees={report.ees:.3f} "
            f"collision_rate={report.collision_rate:.2%}")
