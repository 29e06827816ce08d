import numpy as np
import pytest

from dvxs.autodiff import Tensor
from dvxs.curiosity import CuriosityConfig, intrinsic_reward, kl_diag_np, total_reward
from dvxs.world_model import DiagonalGaussian


def gaussian(mean, std):
    return DiagonalGaussian(Tensor(np.asarray(mean, np.float32)),
                            Tensor(np.asarray(std, np.float32)))


def test_identical_distributions_give_zero():
    q = gaussian([0.5, -0.5], [1.0, 2.0])
    p = gaussian([0.5, -0.5], [1.0, 2.0])
    assert intrinsic_reward(q, p, scale=0.5) == pytest.approx(0.0, abs=1e-7)


def test_zero_scale_kills_bonus():
    q = gaussian([3.0], [1.0])
    p = gaussian([0.0], [1.0])
    assert intrinsic_reward(q, p, scale=0.0) == 0.0


def test_worked_kl_value():
    # KL(N(0,2) || N(0,1)) = ln(1/2) + 2 - 1/2 = 0.8069
    q = gaussian([0.0], [2.0])
    p = gaussian([0.0], [1.0])
    assert intrinsic_reward(q, p, scale=0.5) == pytest.approx(0.40345, abs=1e-4)


def test_linear_in_scale_and_nonnegative():
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = gaussian(rng.uniform(-1, 1, 3), rng.uniform(0.5, 1.5, 3))
        p = gaussian(rng.uniform(-1, 1, 3), rng.uniform(0.5, 1.5, 3))
        one = intrinsic_reward(q, p, scale=0.25)
        two = intrinsic_reward(q, p, scale=0.5)
        assert one >= 0.0
        if two < 10.0:  # below the clip, halving the scale halves the bonus
            assert two == pytest.approx(2.0 * one, rel=1e-6)


def test_clipped_at_ten():
    q = gaussian([100.0], [1.0])
    p = gaussian([0.0], [1.0])
    assert intrinsic_reward(q, p, scale=0.5) == 10.0


def test_total_reward_arithmetic():
    assert total_reward(1.0, 0.5) == 1.5
    assert total_reward(-50.01, 0.2) == pytest.approx(-49.81)
    assert total_reward(-0.01, 0.0) == -0.01  # disabled curiosity leaves r_ext


def test_config_validation():
    with pytest.raises(ValueError):
        CuriosityConfig(scale=-1.0).validate()
    CuriosityConfig(scale=0.0).validate()


def test_kl_np_matches_tensor_formula():
    from dvxs.world_model import kl_diag_gaussians

    rng = np.random.default_rng(1)
    mq, sq = rng.uniform(-2, 2, 5), rng.uniform(0.3, 2, 5)
    mp, sp = rng.uniform(-2, 2, 5), rng.uniform(0.3, 2, 5)
    a = kl_diag_np(mq, sq, mp, sp)
    b = kl_diag_gaussians(gaussian(mq.reshape(1, -1), sq.reshape(1, -1)),
                          gaussian(mp.reshape(1, -1), sp.reshape(1, -1))).item()
    assert a == pytest.approx(b, rel=1e-5)
