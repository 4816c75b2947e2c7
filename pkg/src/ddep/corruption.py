"""Gaussian corruption processes and denoising objectives.

Two formulations of additive noise are supported:

  simple:  x_noisy = x + sigma * eps
  scaled:  x_noisy = sqrt(gamma) * x + sqrt(1 - gamma) * eps

with eps ~ N(0, I). The two are related by gamma = 1 / (1 + sigma^2): the
scaled form equals the simple form shrunk by 1/sqrt(1 + sigma^2), which keeps
the noisy variance at 1 when the clean data has unit variance. The model may
be trained to predict either the clean image or the noise tensor.

All randomness flows through an explicitly passed numpy Generator; nothing
here touches global RNG state. Noisy values are never clipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

from ddep.errors import InvalidArgumentError


class Formulation(Enum):
    SIMPLE = "simple"
    SCALED = "scaled"


class Target(Enum):
    CLEAN_IMAGE = "clean_image"
    NOISE = "noise"


@dataclass(frozen=True)
class FixedSigma:
    """Simple-formulation magnitude: fixed noise standard deviation."""

    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise InvalidArgumentError(f"sigma must be finite and >= 0, got {self.sigma}")


@dataclass(frozen=True)
class FixedGamma:
    """Scaled-formulation magnitude: fixed signal-retention coefficient."""

    gamma: float

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and 0 < self.gamma <= 1):
            raise InvalidArgumentError(f"gamma must lie in (0, 1], got {self.gamma}")


@dataclass(frozen=True)
class UniformGamma:
    """Scaled-formulation magnitude: gamma drawn uniformly per batch element."""

    lo: float
    hi: float

    def __post_init__(self):
        ok = (
            math.isfinite(self.lo)
            and math.isfinite(self.hi)
            and 0 < self.lo <= self.hi <= 1
        )
        if not ok:
            raise InvalidArgumentError(
                f"uniform gamma range must satisfy 0 < lo <= hi <= 1, got [{self.lo}, {self.hi}]"
            )


Magnitude = Union[FixedSigma, FixedGamma, UniformGamma]


@dataclass(frozen=True)
class NoiseSpec:
    """Complete corruption recipe: formulation, prediction target, magnitude."""

    formulation: Formulation
    target: Target
    magnitude: Magnitude

    def __post_init__(self):
        if self.formulation is Formulation.SIMPLE and not isinstance(
            self.magnitude, FixedSigma
        ):
            raise InvalidArgumentError(
                "simple formulation is parameterized by sigma; "
                f"got {type(self.magnitude).__name__}"
            )
        if self.formulation is Formulation.SCALED and isinstance(self.magnitude, FixedSigma):
            raise InvalidArgumentError(
                "scaled formulation is parameterized by gamma; got FixedSigma"
            )

    def is_degenerate(self):
        """True when the draw adds no noise (sigma=0 or gamma=1)."""
        m = self.magnitude
        if isinstance(m, FixedSigma):
            return m.sigma == 0.0
        if isinstance(m, FixedGamma):
            return m.gamma == 1.0
        return m.lo == m.hi == 1.0


@dataclass
class CorruptionSample:
    """One corruption draw: the noisy batch, the noise, and the gamma used.

    gamma_used is a scalar for fixed magnitudes and a per-example (B,) array
    under UniformGamma.
    """

    noisy: np.ndarray
    noise: np.ndarray
    gamma_used: Union[float, np.ndarray]


def sigma_to_gamma(sigma):
    """gamma = 1 / (1 + sigma^2); strictly decreasing, maps 0 -> 1."""
    if not (isinstance(sigma, (int, float)) and math.isfinite(sigma)):
        raise InvalidArgumentError(f"sigma must be a finite number, got {sigma!r}")
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be >= 0, got {sigma}")
    return 1.0 / (1.0 + sigma * sigma)


def gamma_to_sigma(gamma):
    """sigma = sqrt(1/gamma - 1); inverse of sigma_to_gamma on (0, 1]."""
    if not (isinstance(gamma, (int, float)) and math.isfinite(gamma)):
        raise InvalidArgumentError(f"gamma must be a finite number, got {gamma!r}")
    if not 0 < gamma <= 1:
        raise InvalidArgumentError(f"gamma must lie in (0, 1], got {gamma}")
    return math.sqrt(1.0 / gamma - 1.0)


def corrupt(x, spec: NoiseSpec, rng) -> CorruptionSample:
    """Draw eps and produce the noisy batch per the spec's formulation.

    x is an image batch (B, C, H, W) or any array whose leading axis indexes
    examples. eps is drawn first, then (for UniformGamma) one gamma per
    example, so a UniformGamma(l, l) spec consumes eps identically to
    FixedGamma(l) and yields a bit-equal result for the same rng state.
    """
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("corrupt: input contains non-finite values")
    eps = rng.standard_normal(x.shape, dtype=x.dtype if x.dtype.kind == "f" else np.float32)

    m = spec.magnitude
    if spec.formulation is Formulation.SIMPLE:
        sigma = m.sigma
        noisy = x + sigma * eps
        gamma_used = sigma_to_gamma(sigma)
    else:
        if isinstance(m, FixedGamma):
            gamma_used = m.gamma
            gamma = np.asarray(m.gamma, dtype=eps.dtype)
        else:
            draws = rng.uniform(m.lo, m.hi, size=x.shape[0]).astype(eps.dtype)
            gamma_used = draws
            gamma = draws.reshape((-1,) + (1,) * (x.ndim - 1))
        noisy = np.sqrt(gamma) * x + np.sqrt(1.0 - gamma) * eps
    return CorruptionSample(noisy=noisy.astype(eps.dtype, copy=False), noise=eps, gamma_used=gamma_used)


def denoise_target(x, sample: CorruptionSample, spec: NoiseSpec):
    """The regression target: the clean batch or the drawn noise."""
    x = np.asarray(x)
    if x.shape != sample.noise.shape:
        raise InvalidArgumentError(
            f"denoise_target shape mismatch: clean {x.shape} vs noise {sample.noise.shape}"
        )
    if spec.target is Target.CLEAN_IMAGE:
        return x
    return sample.noise


def denoising_loss(prediction, target):
    """Mean over all elements of the squared difference."""
    prediction = np.asarray(prediction)
    target = np.asarray(target)
    if prediction.shape != target.shape:
        raise InvalidArgumentError(
            f"denoising_loss shape mismatch: {prediction.shape} vs {target.shape}"
        )
    if not (np.all(np.isfinite(prediction)) and np.all(np.isfinite(target))):
        raise InvalidArgumentError("denoising_loss: non-finite inputs")
    diff = prediction - target
    return float((diff * diff).mean())


def recover_clean(noisy, predicted_noise, gamma, formulation=Formulation.SCALED):
    """Invert the corruption given a noise estimate.

    scaled:  x = (x_noisy - sqrt(1-gamma) * eps_hat) / sqrt(gamma)
    simple:  x = x_noisy - sigma * eps_hat, with sigma = sqrt(1/gamma - 1)

    gamma may be a scalar or a per-example (B,) array matching the batch.
    """
    noisy = np.asarray(noisy)
    predicted_noise = np.asarray(predicted_noise)
    if noisy.shape != predicted_noise.shape:
        raise InvalidArgumentError(
            f"recover_clean shape mismatch: {noisy.shape} vs {predicted_noise.shape}"
        )
    g = np.asarray(gamma, dtype=noisy.dtype)
    if np.any(g <= 0) or np.any(g > 1):
        raise InvalidArgumentError(f"gamma must lie in (0, 1], got {gamma}")
    if g.ndim == 1:
        g = g.reshape((-1,) + (1,) * (noisy.ndim - 1))
    if formulation is Formulation.SCALED:
        return (noisy - np.sqrt(1.0 - g) * predicted_noise) / np.sqrt(g)
    sigma = np.sqrt(1.0 / g - 1.0)
    return noisy - sigma * predicted_noise
