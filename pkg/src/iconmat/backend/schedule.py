"""Latent noising along a diffusion schedule.

The schedule coefficient here is the cumulative signal-retention factor of
a denoising-diffusion process (a number in [0, 1] per timestep); it has
nothing to do with the alpha matte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, ValidationError


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative schedule coefficients, indexed by timestep."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.float64)
        if c.ndim != 1 or c.size == 0:
            raise ValidationError("schedule must be a non-empty 1-D array")
        if not np.all(np.isfinite(c)) or c.min() < 0.0 or c.max() > 1.0:
            raise ValidationError("schedule coefficients must lie in [0, 1]")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def ddpm_linear(cls, steps: int = 1000, beta_start: float = 0.00085,
                    beta_end: float = 0.012) -> "NoiseSchedule":
        """Standard scaled-linear variance schedule of latent diffusion models."""
        betas = np.linspace(beta_start ** 0.5, beta_end ** 0.5, steps, dtype=np.float64) ** 2
        return cls(np.cumprod(1.0 - betas))

    def __len__(self) -> int:
        return int(self.coefficients.size)

    def coefficient(self, t: int) -> float:
        if not 0 <= t < len(self):
            raise ConfigurationError(
                f"timestep {t} outside schedule range [0, {len(self) - 1}]"
            )
        return float(self.coefficients[t])


def add_noise(latent: np.ndarray, t: int, seed: int, schedule: NoiseSchedule) -> np.ndarray:
    """Noise a latent to timestep t: sqrt(c) * z + sqrt(1 - c) * eps.

    eps is drawn once from a standard normal generator seeded by `seed`,
    so repeated calls are bit-identical.
    """
    c = schedule.coefficient(t)
    z = np.asarray(latent, dtype=np.float64)
    eps = np.random.default_rng(seed).standard_normal(z.shape)
    return np.sqrt(c) * z + np.sqrt(1.0 - c) * eps
