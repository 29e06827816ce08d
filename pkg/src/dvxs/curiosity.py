"""Intrinsic exploration bonus from posterior/prior disagreement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .world_model import DiagonalGaussian

INTRINSIC_CLIP = 10.0  # caps early-training KL spikes


@dataclass
class CuriosityConfig:
    scale: float = 0.5
    enabled: bool = True
    clip: float = INTRINSIC_CLIP

    def validate(self):
        if self.scale < 0:
            raise ValueError(f"curiosity scale must be >= 0, got {self.scale}")


def kl_diag_np(mean_q: np.ndarray, std_q: np.ndarray,
               mean_p: np.ndarray, std_p: np.ndarray) -> float:
    """Closed-form diagonal-Gaussian KL on raw arrays (no tape)."""
    var_term = (std_q**2 + (mean_q - mean_p) ** 2) / (2.0 * std_p**2)
    return float(np.sum(np.log(std_p / std_q) + var_term - 0.5))


def intrinsic_reward(posterior: DiagonalGaussian, prior: DiagonalGaussian,
                     scale: float, clip: float = INTRINSIC_CLIP) -> float:
    """scale * KL(posterior || prior), clipped to [0, clip]."""
    if scale == 0.0:
        return 0.0
    kl = kl_diag_np(posterior.mean.data, posterior.stddev.data,
                    prior.mean.data, prior.stddev.data)
    return float(np.clip(scale * kl, 0.0, clip))


def total_reward(r_ext: float, r_int: float) -> float:
    return r_ext + r_int
