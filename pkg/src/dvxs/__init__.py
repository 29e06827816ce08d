"""Latent world-model exploration agent for 2D LiDAR navigation."""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor  # noqa: F401
