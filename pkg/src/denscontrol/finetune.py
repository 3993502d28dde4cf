"""Importance-sampled fine-tuning of a toy GAN.

Each iteration draws a real batch through the (tau, w) acceptance rule and
generated batches through the reciprocal rule (tau, 1/w), then applies one
critic update and one generator update with plain Wasserstein losses:

    critic loss     -(1/B) sum_i [D(x_i) - D(G(z_i))]
    generator loss   (1/B) sum_i -D(G(z_i))

An optional gradient penalty on real/fake interpolates stabilizes the critic
at toy scale; it is additive and excluded from the logged loss values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .density import DensityRegressor
from .errors import DivergenceError, ShapeError, StarvationError
from .nn import Mlp, MlpGradients, OptimizerState, optimizer_step
from .rng import Rng
from .sampler import DEFAULT_MAX_ATTEMPTS_PER_ACCEPT, SamplingConfig, accept_mask, importance_sample


@dataclass(frozen=True)
class FinetuneConfig:
    """Batching, duration, acceptance rule, and optimizer settings."""

    batch_size: int = 64
    iterations: int = 200
    tau: float = 0.0
    weight: float = 1.0
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    seed: int = 0
    gp_coef: float = 0.1
    beta1: float = 0.5
    from_scratch: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.weight <= 0:
            raise ValueError(f"weight must be positive, got {self.weight}")
        if self.gp_coef < 0:
            raise ValueError(f"gp_coef must be >= 0, got {self.gp_coef}")
        if not (0.0 <= self.beta1 < 1.0):
            raise ValueError(f"beta1 must be in [0, 1), got {self.beta1}")


@dataclass
class WeightedDataset:
    """Real samples with precomputed densities and an acceptance rule."""

    samples: np.ndarray
    densities: np.ndarray
    tau: float
    weight: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        self.densities = np.asarray(self.densities, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ShapeError(f"samples must be 2-D, got shape {self.samples.shape}")
        if len(self.samples) != len(self.densities):
            raise ShapeError(
                f"{len(self.samples)} samples but {len(self.densities)} densities")
        if self.weight <= 0:
            raise ValueError(f"weight must be positive, got {self.weight}")

    def __len__(self) -> int:
        return len(self.samples)

    def acceptance_probabilities(self) -> np.ndarray:
        """Per-sample keep probability under the (tau, weight) rule."""
        above = self.densities > self.tau if self.weight > 1 else self.densities < self.tau
        minority_p = 1.0 / self.weight if self.weight > 1 else self.weight
        return np.where(above, 1.0, minority_p)

    def sampling_distribution(self) -> np.ndarray:
        """Probability of each sample per accepted draw; sums to 1."""
        p = self.acceptance_probabilities()
        return p / p.sum()


@dataclass
class GanPair:
    """Generator/critic pair with optimizer states and a training log."""

    generator: Mlp
    discriminator: Mlp
    gen_opt: OptimizerState | None = None
    disc_opt: OptimizerState | None = None
    training_log: list = field(default_factory=list)

    def __post_init__(self):
        if self.generator.output_dim != self.discriminator.input_dim:
            raise ShapeError(
                f"generator outputs {self.generator.output_dim} dims, "
                f"discriminator expects {self.discriminator.input_dim}")
        if self.discriminator.output_dim != 1:
            raise ShapeError("discriminator must have a scalar output")

    @property
    def latent_dim(self) -> int:
        return self.generator.input_dim

    @property
    def data_dim(self) -> int:
        return self.generator.output_dim

    def copy(self) -> "GanPair":
        return GanPair(self.generator.copy(), self.discriminator.copy(),
                       self.gen_opt.copy() if self.gen_opt else None,
                       self.disc_opt.copy() if self.disc_opt else None,
                       [dict(row) for row in self.training_log])


def discriminator_loss(d_real: np.ndarray, d_fake: np.ndarray) -> float:
    """-(1/B) sum [D(x) - D(G(z))]."""
    d_real = np.asarray(d_real, dtype=np.float64).reshape(-1)
    d_fake = np.asarray(d_fake, dtype=np.float64).reshape(-1)
    if d_real.shape != d_fake.shape:
        raise ShapeError(f"batch sizes differ: {d_real.shape} vs {d_fake.shape}")
    return float(-(d_real - d_fake).mean())


def generator_loss(d_fake: np.ndarray) -> float:
    """(1/B) sum -D(G(z))."""
    return float(-np.asarray(d_fake, dtype=np.float64).mean())


def sample_real_batch(ds: WeightedDataset, count: int, rng: Rng,
                      max_attempts_per_accept: int = DEFAULT_MAX_ATTEMPTS_PER_ACCEPT
                      ) -> np.ndarray:
    """Draw ``count`` rows with replacement through the acceptance rule."""
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    max_attempts = max_attempts_per_accept * count
    taken = []
    accepted = 0
    attempts = 0
    while accepted < count:
        if attempts >= max_attempts:
            raise StarvationError(
                f"no {count} accepts within {max_attempts} attempts "
                f"(tau={ds.tau}, w={ds.weight})")
        n = min(256, max_attempts - attempts)
        idx = rng.integers(len(ds), n)
        u = rng.uniform(n)
        mask = accept_mask(ds.densities[idx], u, ds.tau, ds.weight)
        chosen = idx[mask]
        if accepted + len(chosen) > count:
            chosen = chosen[:count - accepted]
        taken.append(chosen)
        accepted += len(chosen)
        attempts += n
    return ds.samples[np.concatenate(taken)]


def _add_grads(a: MlpGradients, b: MlpGradients, scale: float = 1.0) -> MlpGradients:
    return MlpGradients(
        weights=[ga + scale * gb for ga, gb in zip(a.weights, b.weights)],
        biases=[ga + scale * gb for ga, gb in zip(a.biases, b.biases)],
        wrt_input=None)


def _generated_batch(pair: GanPair, reg: DensityRegressor | None, tau: float,
                     weight: float, count: int, rng: Rng):
    """Generated samples filtered by (tau, weight); returns (z, x, densities)."""
    cfg = SamplingConfig(tau=tau, weight=weight)
    batch = importance_sample(pair.generator, reg, cfg, count, rng)
    return batch.latents, batch.outputs, batch.densities


def finetune_gan(pair: GanPair, ds: WeightedDataset, cfg: FinetuneConfig,
                 reg: DensityRegressor | None = None) -> GanPair:
    """Run T alternating critic/generator updates; returns a new pair.

    Real batches follow the dataset's (tau, w) rule; generated batches are
    filtered with the reciprocal weight 1/w, which needs ``reg`` whenever
    w != 1. The input pair is never mutated.
    """
    if (ds.tau, ds.weight) != (cfg.tau, cfg.weight):
        raise ValueError(
            f"dataset rule (tau={ds.tau}, w={ds.weight}) does not match "
            f"config (tau={cfg.tau}, w={cfg.weight})")
    if reg is None and cfg.weight != 1.0:
        raise ValueError("a density regressor is required unless weight == 1")
    if ds.samples.shape[1] != pair.data_dim:
        raise ShapeError(
            f"dataset dim {ds.samples.shape[1]} != generator output {pair.data_dim}")

    out = pair.copy()
    out.gen_opt = OptimizerState(kind="adam", learning_rate=cfg.lr_g, beta1=cfg.beta1)
    out.disc_opt = OptimizerState(kind="adam", learning_rate=cfg.lr_d, beta1=cfg.beta1)
    rng = Rng(cfg.seed)
    rcp_weight = 1.0 / cfg.weight
    bsz = cfg.batch_size
    last_good = out.copy()

    for it in range(cfg.iterations):
        x_real = sample_real_batch(ds, bsz, rng)
        _, x_fake, rho_fake = _generated_batch(out, reg, cfg.tau, rcp_weight, bsz, rng)

        # Critic update.
        d_real = out.discriminator.forward(x_real).astype(np.float64)
        grads_real = out.discriminator.backward(np.full((bsz, 1), -1.0 / bsz))
        d_fake = out.discriminator.forward(x_fake).astype(np.float64)
        grads_fake = out.discriminator.backward(np.full((bsz, 1), 1.0 / bsz))
        d_grads = _add_grads(grads_real, grads_fake)
        d_loss = discriminator_loss(d_real, d_fake)
        gp_value = 0.0
        if cfg.gp_coef > 0:
            eps = rng.uniform((bsz, 1))
            mix = eps * x_real.astype(np.float64) + (1.0 - eps) * x_fake.astype(np.float64)
            gp_value, gp_grads = out.discriminator.gradient_penalty(mix)
            d_grads = _add_grads(d_grads, gp_grads, scale=cfg.gp_coef)
        optimizer_step(out.disc_opt, out.discriminator, d_grads)

        # Generator update on a freshly filtered batch.
        z2, x_fake2, rho_fake2 = _generated_batch(out, reg, cfg.tau, rcp_weight, bsz, rng)
        out.generator.forward(z2)
        d_out = out.discriminator.forward(x_fake2).astype(np.float64)
        d_input_grads = out.discriminator.backward(np.full((bsz, 1), -1.0 / bsz)).wrt_input
        g_grads = out.generator.backward(d_input_grads)
        g_loss = generator_loss(d_out)
        optimizer_step(out.gen_opt, out.generator, g_grads)

        if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
            raise DivergenceError(
                f"non-finite loss at iteration {it}: d={d_loss}, g={g_loss}",
                last_good=last_good)
        gen_density = float(np.concatenate([rho_fake, rho_fake2]).mean()) if reg else float("nan")
        out.training_log.append({
            "iteration": it, "d_loss": d_loss, "g_loss": g_loss,
            "gradient_penalty": gp_value, "gen_density_mean": gen_density,
        })
        last_good = out.copy()
    return out


def equilibrium_target(real_hist, weight: float) -> np.ndarray:
    """Two-bin equilibrium mass the generator approaches under reciprocal rules.

    ``real_hist`` is (above-tau mass, below-tau mass), not necessarily
    normalized. With the real side reweighted by w and the generated side
    filtered by 1/w, matching the two perturbed distributions gives
    generated above-tau odds of a*w^2 : (1 - a).
    """
    if weight <= 0:
        raise ValueError(f"weight must be positive, got {weight}")
    hist = np.asarray(real_hist, dtype=np.float64)
    if hist.shape != (2,) or hist.min() < 0 or hist.sum() <= 0:
        raise ValueError("real_hist must be two nonnegative masses")
    a = hist[0] / hist.sum()
    above = a * weight**2 / (a * weight**2 + (1.0 - a))
    return np.array([above, 1.0 - above])
