"""Diagonal Gaussian distributions: reparameterized sampling and closed-form KL."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dtam.errors import DomainError, ShapeError
from dtam.numcore.tensor import Tensor, as_tensor, log


@dataclass
class DiagGaussian:
    """Mean and per-coordinate standard deviation (both tensors, same shape)."""

    mean: Tensor
    stddev: Tensor

    def __post_init__(self):
        self.mean = as_tensor(self.mean)
        self.stddev = as_tensor(self.stddev)
        if self.mean.shape != self.stddev.shape:
            raise ShapeError(
                f"mean shape {self.mean.shape} != stddev shape {self.stddev.shape}"
            )
        if np.any(self.stddev.data <= 0.0):
            raise DomainError("stddev must be strictly positive")

    @property
    def shape(self) -> tuple:
        return self.mean.shape


def gaussian_reparam_sample(g: DiagGaussian, noise) -> Tensor:
    """mean + stddev * noise, keeping the sample differentiable in (mean, stddev).

    ``noise`` is a fixed standard-normal draw (ndarray or constant tensor);
    passing zeros yields the posterior mean, used for deterministic evaluation.
    """
    noise = as_tensor(noise)
    if noise.shape != g.mean.shape:
        raise ShapeError(
            f"noise shape {noise.shape} != distribution shape {g.mean.shape}"
        )
    return g.mean + g.stddev * noise


def kl_diag_gaussian(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """KL(q || p) summed over all coordinates, as a scalar tensor.

    Per coordinate: log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2.
    """
    if q.shape != p.shape:
        raise ShapeError(f"KL operand shapes differ: {q.shape} vs {p.shape}")
    var_ratio = (q.stddev * q.stddev) / (p.stddev * p.stddev)
    delta = q.mean - p.mean
    squared = (delta * delta) / (p.stddev * p.stddev)
    per_coord = log(p.stddev) - log(q.stddev) + 0.5 * (var_ratio + squared) - 0.5
    return per_coord.sum()
