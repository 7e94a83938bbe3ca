"""
Dynamic visual perturbation of real seen-class features.
"""
import numpy as np

from app.core.tensor import Tensor
from app.models import PerturbConfig


def perturb_batch(cfg: PerturbConfig, x: Tensor, rng: np.random.Generator) -> Tensor:
    """
    Return x plus fresh noise of magnitude ``cfg.beta``.

    gaussian:      x + beta * eps, eps ~ N(0, I)
    uniform_ball:  x + beta * u,   u uniform in the unit d-ball
    """
    if cfg.beta == 0:
        return Tensor(x.values)
    n, d = x.shape
    if cfg.mode == "gaussian":
        noise = rng.standard_normal((n, d))
    else:
        direction = rng.standard_normal((n, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = rng.uniform(0.0, 1.0, (n, 1)) ** (1.0 / d)
        noise = direction * radius
    return Tensor(x.values + cfg.beta * noise)


def perturbation_rng(cfg: PerturbConfig) -> np.random.Generator:
    return np.random.default_rng(cfg.seed)
