import numpy as np
import pytest

from dvxs.behavior import BehaviorConfig
from dvxs.curiosity import CuriosityConfig
from dvxs.trainer import (
    METRICS_COLUMNS,
    TrainConfig,
    Trainer,
    config_from_dict,
    config_to_dict,
    desk_preset,
    paper_preset,
)
from dvxs.world_model import WorldModelConfig


def tiny_config(**kw):
    base = dict(
        env_name="simple", total_steps=60, seed=3, train_interval=5,
        model_updates=1, behavior_updates=1, buffer_capacity=2000,
        batch_size=2, seq_len=5, checkpoint_interval=40,
        world=WorldModelConfig(latent_dim=4, deter_dim=8, head_hidden=8,
                               encoder_channels=(2, 2, 2)),
        behavior=BehaviorConfig(horizon=2, hidden=8),
    )
    base.update(kw)
    return TrainConfig(**base)


def test_presets_roundtrip_through_dict():
    for preset in (paper_preset(), desk_preset(), tiny_config()):
        back = config_from_dict(config_to_dict(preset))
        assert config_to_dict(back) == config_to_dict(preset)


def test_paper_preset_matches_full_scale_defaults():
    cfg = paper_preset()
    assert cfg.world.latent_dim == 32
    assert cfg.world.deter_dim == 256
    assert cfg.world.kl_beta == 1.5
    assert cfg.behavior.horizon == 15
    assert cfg.behavior.return_lambda == 0.95
    assert cfg.behavior.gamma == 0.99
    assert cfg.behavior.actor_lr == 8e-5
    assert cfg.behavior.critic_lr == 8e-5
    assert cfg.behavior.entropy_coef == 1e-3
    assert cfg.curiosity.scale == 0.5
    assert cfg.buffer_capacity == 1_000_000
    assert cfg.train_interval == 5
    assert cfg.model_updates == 100
    assert cfg.behavior_updates == 10
    assert cfg.total_steps == 1_000_000
    assert cfg.batch_size == 50 and cfg.seq_len == 50
    assert cfg.model_lr == 3e-4
    assert cfg.noise_start == 0.3


def test_zero_steps_clean_exit(tmp_path):
    out = tmp_path / "run"
    t = Trainer(tiny_config(total_steps=0), out_dir=str(out))
    summary = t.run()
    assert summary["steps"] == 0
    assert (out / "manifest.json").exists()
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines == [",".join(METRICS_COLUMNS)]


def test_first_step_uses_zero_recurrent_state():
    t = Trainer(tiny_config())
    assert t.needs_reset
    t.collect_step()
    # h was zero when the first action was chosen; afterwards it moved
    assert t.step == 1


def test_step_counter_increments_by_one():
    t = Trainer(tiny_config())
    for expect in range(1, 8):
        t.collect_step()
        assert t.step == expect


def test_first_100_transitions_identical_across_runs():
    def collect(seed):
        t = Trainer(tiny_config(seed=seed, total_steps=1000))
        rows = []
        for _ in range(100):
            tr = t.collect_step()
            rows.append(np.concatenate([tr.observation[:8], tr.action,
                                        [tr.reward_ext, tr.reward_int, float(tr.done)]]))
        return np.array(rows)

    np.testing.assert_array_equal(collect(7), collect(7))


def test_tick_skips_until_buffer_ready():
    t = Trainer(tiny_config())
    t.collect_step()
    t.train_tick()  # buffer has 1 transition, seq_len 5
    assert t.model_update_count == 0
    assert t.behavior_update_count == 0


def test_update_counts_per_tick():
    t = Trainer(tiny_config(model_updates=3, behavior_updates=2))
    for _ in range(10):
        t.collect_step()
    t.train_tick()
    assert t.model_update_count == 3
    assert t.behavior_update_count == 6  # nested: per model update


def test_single_updates_when_counts_are_one():
    t = Trainer(tiny_config())
    for _ in range(10):
        t.collect_step()
    t.train_tick()
    assert (t.model_update_count, t.behavior_update_count) == (1, 1)


def test_flat_loops_counts():
    t = Trainer(tiny_config(model_updates=2, behavior_updates=3, flat_loops=True))
    for _ in range(10):
        t.collect_step()
    t.train_tick()
    assert (t.model_update_count, t.behavior_update_count) == (2, 3)


def test_metrics_file_bitwise_identical_across_runs(tmp_path):
    def run(tag):
        out = tmp_path / tag
        Trainer(tiny_config(), out_dir=str(out)).run()
        return (out / "metrics.csv").read_bytes()

    assert run("a") == run("b")


def test_model_loss_decreases_on_fixed_batch():
    t = Trainer(tiny_config(seed=1, total_steps=4000))
    for _ in range(40):
        t.collect_step()
    first = None
    losses = []
    for _ in range(30):
        res = t._model_update()
        losses.append(res.report.total)
    assert np.mean(losses[-5:]) < losses[0]


def test_checkpoint_save_load_save_byte_identical(tmp_path):
    t = Trainer(tiny_config())
    for _ in range(25):
        t.collect_step()
    t.train_tick()
    p1, p2 = tmp_path / "a.dvxs", tmp_path / "b.dvxs"
    t.checkpoint_save(p1)
    t2 = Trainer.checkpoint_load(p1)
    t2.checkpoint_save(p2)
    assert p1.read_bytes() == p2.read_bytes()
    for name, p in t.model.params.items():
        np.testing.assert_array_equal(p.data, t2.model.params[name].data)
        np.testing.assert_array_equal(p.m, t2.model.params[name].m)


def test_checkpoint_rejects_truncated_and_foreign_files(tmp_path):
    t = Trainer(tiny_config())
    t.collect_step()
    path = tmp_path / "c.dvxs"
    t.checkpoint_save(path)
    data = path.read_bytes()
    bad = tmp_path / "bad.dvxs"
    bad.write_bytes(data[: len(data) // 2])
    with pytest.raises(ValueError):
        Trainer.checkpoint_load(bad)
    from dvxs.params import write_arrays
    foreign = tmp_path / "foreign.dvxs"
    write_arrays(foreign, {"w": np.ones(3, np.float32)})
    with pytest.raises(ValueError, match="checkpoint"):
        Trainer.checkpoint_load(foreign)


def test_resume_matches_unresumed_run_bit_exactly(tmp_path):
    cfg = tiny_config(total_steps=80, checkpoint_interval=40)
    out_a = tmp_path / "full"
    Trainer(cfg, out_dir=str(out_a)).run()

    out_b = tmp_path / "prefix"
    t = Trainer(tiny_config(total_steps=80, checkpoint_interval=40), out_dir=str(out_b))
    t.run()
    resumed = Trainer.checkpoint_load(out_b / "checkpoint_00000040.dvxs",
                                      out_dir=str(tmp_path / "resumed"))
    assert resumed.step == 40
    resumed.run()

    full_metrics = (out_a / "metrics.csv").read_bytes()
    resumed_metrics = (tmp_path / "resumed" / "metrics.csv").read_bytes()
    assert full_metrics == resumed_metrics
    assert (out_a / "checkpoint_final.dvxs").read_bytes() == \
        (tmp_path / "resumed" / "checkpoint_final.dvxs").read_bytes()


def test_environment_steps_only_from_collector():
    t = Trainer(tiny_config())
    for _ in range(12):
        t.collect_step()
    env_steps_before = t.step
    sim_steps_before = t.env.steps + 0
    t.train_tick()
    t.train_tick()
    assert t.step == env_steps_before
    assert t.env.steps == sim_steps_before  # learning never touches the world
