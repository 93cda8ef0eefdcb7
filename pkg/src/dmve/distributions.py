"""Diagonal Gaussians with reparameterized sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

STD_FLOOR = 1e-4
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class DiagGaussian:
    """Diagonal Gaussian over the last axis. Fields may be arrays or graph nodes."""

    mean: object
    std: object

    @classmethod
    def from_raw(cls, raw, floor: float = STD_FLOOR) -> "DiagGaussian":
        """Split ``raw`` (..., 2d) into mean and ``softplus(x) + floor`` std."""
        d = ad.value_of(raw).shape[-1] // 2
        return cls(raw[..., :d], ad.softplus(raw[..., d:]) + floor)

    @property
    def dim(self) -> int:
        return ad.value_of(self.mean).shape[-1]

    def sample(self, noise):
        """Reparameterized draw ``mean + std * noise`` for supplied unit-normal noise."""
        if np.shape(noise) != ad.value_of(self.mean).shape:
            raise ValueError(
                f"noise shape {np.shape(noise)} does not match distribution {ad.value_of(self.mean).shape}"
            )
        return self.mean + self.std * noise

    def log_prob(self, x):
        z = (x - self.mean) / self.std
        return ad.sum(-0.5 * ad.square(z) - ad.log(self.std) - _HALF_LOG_2PI, axis=-1)

    def detach(self) -> "DiagGaussian":
        return DiagGaussian(ad.value_of(self.mean), ad.value_of(self.std))


def kl_diag_gaussian(p: DiagGaussian, q: DiagGaussian):
    """Closed-form KL(p || q), summed over the last axis."""
    if p.dim != q.dim:
        raise ValueError(f"KL between dimensions {p.dim} and {q.dim}")
    var_ratio = ad.square(p.std / q.std)
    mahal = ad.square((p.mean - q.mean) / q.std)
    return ad.sum(0.5 * (var_ratio + mahal - 1.0) - ad.log(p.std / q.std), axis=-1)
