"""Inference-time distribution control by rejection sampling.

A generated sample with pseudo density above the threshold is favored when
the importance weight w exceeds 1 and disfavored when w is below 1:

    w > 1:  accept when density > tau, otherwise accept with probability 1/w
    w <= 1: accept when density < tau, otherwise accept with probability w

Samples landing exactly on the threshold fall to the probabilistic branch in
both regimes. w = 1 accepts everything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import DensityRegressor, ThresholdCalibration, pseudo_density
from .errors import ShapeError, StarvationError
from .nn import Mlp
from .rng import Rng

DEFAULT_MAX_ATTEMPTS_PER_ACCEPT = 10_000

# Importance-weight sweep used by the stock experiment grids.
WEIGHT_SWEEP = (0.01, 0.03, 0.1, 10.0, 33.0, 100.0)
PERCENTILE_SWEEP = (20.0, 50.0, 80.0)


@dataclass(frozen=True)
class SamplingConfig:
    """Density threshold and importance weight for accept/reject decisions."""

    tau: float
    weight: float
    max_attempts_per_accept: int = DEFAULT_MAX_ATTEMPTS_PER_ACCEPT

    def __post_init__(self):
        if self.weight <= 0:
            raise ValueError(f"importance weight must be positive, got {self.weight}")
        if self.max_attempts_per_accept < 1:
            raise ValueError("max_attempts_per_accept must be >= 1")

    @classmethod
    def from_calibration(cls, cal: ThresholdCalibration, weight: float,
                         max_attempts_per_accept: int = DEFAULT_MAX_ATTEMPTS_PER_ACCEPT):
        return cls(tau=cal.threshold_value, weight=weight,
                   max_attempts_per_accept=max_attempts_per_accept)


@dataclass
class SampleBatch:
    """Accepted samples in generation order plus per-attempt accept flags."""

    latents: np.ndarray
    outputs: np.ndarray
    densities: np.ndarray
    accepted_flags: np.ndarray
    attempts: int

    @property
    def acceptance_rate(self) -> float:
        return len(self.latents) / self.attempts if self.attempts else float("nan")


@dataclass
class TruncationConfig:
    """Shrink latents toward their mean by factor phi (phi=1 is identity)."""

    phi: float
    latent_mean: np.ndarray

    def __post_init__(self):
        if self.phi < 0:
            raise ValueError(f"phi must be >= 0, got {self.phi}")
        self.latent_mean = np.asarray(self.latent_mean, dtype=np.float64)


def accept_mask(densities, u, tau: float, weight: float) -> np.ndarray:
    """Vectorized accept/reject rule shared by inference and training draws."""
    densities = np.asarray(densities, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if weight > 1.0:
        return (densities > tau) | (u < 1.0 / weight)
    return (densities < tau) | (u < weight)


def acceptance_rate(p_above_threshold: float, weight: float) -> float:
    """Expected acceptance probability given the above-threshold mass."""
    if not (0.0 <= p_above_threshold <= 1.0):
        raise ValueError(f"p_above_threshold must be in [0,1], got {p_above_threshold}")
    if weight <= 0:
        raise ValueError(f"weight must be positive, got {weight}")
    a = p_above_threshold
    if weight > 1.0:
        return a + (1.0 - a) / weight
    return (1.0 - a) + a * weight


def expected_cost_multiplier(p_above_threshold: float, weight: float) -> float:
    """Expected generations per accepted sample: 1 / acceptance rate."""
    return 1.0 / acceptance_rate(p_above_threshold, weight)


def importance_sample(gen: Mlp, reg: DensityRegressor | None, cfg: SamplingConfig,
                      count: int, rng: Rng, batch_size: int = 256) -> SampleBatch:
    """Draw latents from the standard normal prior until ``count`` accepts.

    Accepted samples keep generation order. ``reg`` may be omitted only for
    the pass-through weight w=1, where densities are not consulted.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if reg is None and cfg.weight != 1.0:
        raise ValueError("a density regressor is required unless weight == 1")
    if reg is not None and gen.output_dim != reg.input_dim:
        raise ShapeError(
            f"generator outputs {gen.output_dim} dims, regressor expects {reg.input_dim}")

    latent_dim = gen.input_dim
    max_attempts = cfg.max_attempts_per_accept * count

    kept_z, kept_x, kept_rho, flags = [], [], [], []
    attempts = 0
    accepted = 0
    while accepted < count:
        if attempts >= max_attempts:
            raise StarvationError(
                f"no {count} accepts within {max_attempts} attempts "
                f"(tau={cfg.tau}, w={cfg.weight}); threshold/weight too extreme")
        n = min(batch_size, max_attempts - attempts)
        z = rng.normal((n, latent_dim)).astype(np.float32)
        x = gen.forward(z)
        if reg is not None:
            rho = pseudo_density(reg, x)
        else:
            rho = np.full(n, np.nan)
        u = rng.uniform(n)
        mask = np.ones(n, dtype=bool) if cfg.weight == 1.0 else accept_mask(rho, u, cfg.tau, cfg.weight)

        # Truncate the chunk right after the final accept so `attempts`
        # counts draws up to and including the count-th accepted sample.
        cum = np.cumsum(mask)
        if accepted + cum[-1] >= count:
            cut = int(np.searchsorted(cum, count - accepted)) + 1
            z, x, rho, mask = z[:cut], x[:cut], rho[:cut], mask[:cut]
            n = cut
        kept_z.append(z[mask])
        kept_x.append(x[mask])
        kept_rho.append(rho[mask])
        flags.append(mask)
        accepted += int(mask.sum())
        attempts += n

    return SampleBatch(
        latents=np.vstack(kept_z),
        outputs=np.vstack(kept_x),
        densities=np.concatenate(kept_rho),
        accepted_flags=np.concatenate(flags),
        attempts=attempts,
    )


def truncate_latents(z, cfg: TruncationConfig) -> np.ndarray:
    """Move each latent toward the mean: z' = mean + phi * (z - mean)."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    if z.ndim != 2 or z.shape[1] != cfg.latent_mean.shape[0]:
        raise ShapeError(
            f"latents with shape {z.shape} do not match mean dim {cfg.latent_mean.shape[0]}")
    out = cfg.latent_mean + cfg.phi * (z - cfg.latent_mean)
    out = out.astype(np.float32)
    return out[0] if single else out
