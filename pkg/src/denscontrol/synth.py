"""Synthetic benchmark distributions and toy-GAN pretraining.

Every generated dataset ships with the analytic density of each sample,
which is what lets the estimated pseudo density be validated against a
ground truth at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .density import FeatureSet
from .errors import ShapeError
from .finetune import FinetuneConfig, GanPair, WeightedDataset, finetune_gan
from .metrics import frechet_distance
from .nn import Mlp
from .rng import Rng

KINDS = ("gaussian-mixture", "ring", "two-moons")

_MOON_QUADRATURE_NODES = 512


@dataclass
class SyntheticSpec:
    """Parameters of one toy distribution plus sample count and seed."""

    kind: str
    n_samples: int
    seed: int
    means: np.ndarray | None = None
    covariances: np.ndarray | None = None
    weights: np.ndarray | None = None
    moon_noise: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.n_samples < 0:
            raise ValueError(f"n_samples must be >= 0, got {self.n_samples}")
        if self.kind in ("gaussian-mixture", "ring"):
            self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
            self.covariances = np.asarray(self.covariances, dtype=np.float64)
            w = np.asarray(self.weights, dtype=np.float64)
            if w.min() < 0 or w.sum() <= 0:
                raise ValueError("mixture weights must be nonnegative with positive sum")
            self.weights = w / w.sum()
            m, d = self.means.shape
            if self.covariances.shape != (m, d, d):
                raise ShapeError(
                    f"covariances shape {self.covariances.shape} != {(m, d, d)}")
            if len(self.weights) != m:
                raise ShapeError(f"{len(self.weights)} weights for {m} components")
            # Positive definiteness check; cholesky factors are reused later.
            try:
                self._chols = np.linalg.cholesky(self.covariances)
            except np.linalg.LinAlgError as exc:
                raise ValueError(f"covariances must be positive definite: {exc}") from exc
        elif self.moon_noise <= 0:
            raise ValueError(f"moon_noise must be positive, got {self.moon_noise}")

    @property
    def dim(self) -> int:
        return 2 if self.kind == "two-moons" else self.means.shape[1]

    @classmethod
    def gaussian_mixture(cls, means, covariances, weights, n_samples, seed):
        return cls(kind="gaussian-mixture", n_samples=n_samples, seed=seed,
                   means=means, covariances=covariances, weights=weights)

    @classmethod
    def ring(cls, n_components=8, radius=2.0, sigma=0.15, n_samples=1000, seed=0):
        """Equal-weight isotropic Gaussians spaced evenly on a circle."""
        angles = 2.0 * np.pi * np.arange(n_components) / n_components
        means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        covs = np.tile(sigma**2 * np.eye(2), (n_components, 1, 1))
        return cls(kind="ring", n_samples=n_samples, seed=seed, means=means,
                   covariances=covs, weights=np.full(n_components, 1.0 / n_components))

    @classmethod
    def two_moons(cls, noise=0.1, n_samples=1000, seed=0):
        return cls(kind="two-moons", n_samples=n_samples, seed=seed, moon_noise=noise)


def _moon_centers(t: np.ndarray):
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    return upper, lower


def mixture_density(spec: SyntheticSpec, points) -> np.ndarray:
    """Analytic density of the spec's distribution at the given points."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if x.shape[1] != spec.dim:
        raise ShapeError(f"points have dim {x.shape[1]}, spec has {spec.dim}")
    if len(x) == 0:
        return np.zeros(0)

    if spec.kind == "two-moons":
        # Uniform latent angle marginalized by midpoint quadrature.
        t = (np.arange(_MOON_QUADRATURE_NODES) + 0.5) * np.pi / _MOON_QUADRATURE_NODES
        upper, lower = _moon_centers(t)
        var = spec.moon_noise**2
        norm = 1.0 / (2.0 * np.pi * var)
        dens = np.zeros(len(x))
        for centers in (upper, lower):
            d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            dens += 0.5 * norm * np.exp(-0.5 * d2 / var).mean(axis=1)
        return dens

    d = spec.dim
    dens = np.zeros(len(x))
    for w, mu, chol in zip(spec.weights, spec.means, spec._chols):
        diff = x - mu
        y = np.linalg.solve(chol, diff.T)
        maha = (y * y).sum(axis=0)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        dens += w * np.exp(-0.5 * (maha + logdet + d * np.log(2.0 * np.pi)))
    return dens


def generate_synthetic(spec: SyntheticSpec):
    """Seeded samples plus their analytic density, as (FeatureSet, density)."""
    rng = Rng(spec.seed)
    n = spec.n_samples
    if spec.kind == "two-moons":
        t = rng.uniform(n) * np.pi
        which = rng.uniform(n) < 0.5
        upper, lower = _moon_centers(t)
        base = np.where(which[:, None], upper, lower)
        x = base + spec.moon_noise * rng.normal((n, 2))
    else:
        cum = np.cumsum(spec.weights)
        comp = np.searchsorted(cum, rng.uniform(n), side="right")
        comp = np.minimum(comp, len(cum) - 1)
        eps = rng.normal((n, spec.dim))
        x = np.zeros((n, spec.dim))
        for j in range(len(spec.weights)):
            rows = comp == j
            if rows.any():
                x[rows] = spec.means[j] + eps[rows] @ spec._chols[j].T
    fs = FeatureSet(x.astype(np.float32), source_tag=f"{spec.kind}(seed={spec.seed})")
    return fs, mixture_density(spec, fs.features) if n else np.zeros(0)


@dataclass
class GanArch:
    """Toy GAN topology; both nets are plain MLPs."""

    latent_dim: int = 2
    data_dim: int = 2
    gen_hidden: tuple = (64, 64, 64)
    disc_hidden: tuple = (64, 64, 64)
    gen_activation: str = "tanh"
    disc_activation: str = "leaky_relu"

    def build(self, rng: Rng) -> GanPair:
        gen = Mlp.initialize([self.latent_dim, *self.gen_hidden, self.data_dim], rng,
                             hidden_activation=self.gen_activation)
        disc = Mlp.initialize([self.data_dim, *self.disc_hidden, 1], rng,
                              hidden_activation=self.disc_activation)
        return GanPair(generator=gen, discriminator=disc)


@dataclass
class PretrainReport:
    fid_baseline: float
    fid_after: float
    iterations: int
    seed: int
    heldout_count: int


def sample_from_gan(pair: GanPair, count: int, rng: Rng) -> FeatureSet:
    """Unfiltered generator samples from the standard normal prior."""
    z = rng.normal((count, pair.latent_dim)).astype(np.float32)
    return FeatureSet(pair.generator.forward(z), source_tag="generated")


def mode_coverage(spec: SyntheticSpec, samples: FeatureSet, n_sigma: float = 3.0):
    """Count mixture components with a generated sample within n_sigma.

    A component's sigma is the square root of its largest covariance
    eigenvalue. Returns (covered, total).
    """
    if spec.kind == "two-moons":
        raise ValueError("mode coverage is defined for mixture specs only")
    pts = samples.features.astype(np.float64)
    covered = 0
    for mu, cov in zip(spec.means, spec.covariances):
        sigma = float(np.sqrt(np.linalg.eigvalsh(cov).max()))
        dists = np.linalg.norm(pts - mu, axis=1)
        if len(dists) and dists.min() <= n_sigma * sigma:
            covered += 1
    return covered, len(spec.weights)


def pretrain_toy_gan(spec: SyntheticSpec, arch: GanArch | None = None,
                     iters: int = 1500, seed: int = 0, batch_size: int = 128,
                     lr: float = 2e-4, gp_coef: float = 1.0,
                     heldout_fraction: float = 0.25):
    """Train a toy GAN on the spec's distribution; returns (pair, report).

    Plain WGAN updates with w=1 (no density filtering), one critic and one
    generator step per iteration. The report records the Fréchet distance of
    generator samples against held-out data before and after training.
    """
    arch = arch or GanArch()
    fs, _ = generate_synthetic(spec)
    if arch.data_dim != fs.dim:
        raise ShapeError(f"arch data_dim {arch.data_dim} != data dim {fs.dim}")
    rng = Rng(seed)
    n_hold = max(2, int(round(heldout_fraction * len(fs))))
    perm = rng.permutation(len(fs))
    held = FeatureSet(fs.features[perm[:n_hold]])
    train = fs.features[perm[n_hold:]]

    pair = arch.build(rng)
    eval_rng_seed = rng.integers(2**31)
    baseline = frechet_distance(held, sample_from_gan(pair, n_hold, Rng(eval_rng_seed)))

    ds = WeightedDataset(samples=train, densities=np.zeros(len(train)),
                         tau=0.0, weight=1.0)
    cfg = FinetuneConfig(batch_size=batch_size, iterations=iters, tau=0.0, weight=1.0,
                         lr_g=lr, lr_d=lr, seed=rng.integers(2**31), gp_coef=gp_coef,
                         from_scratch=True)
    if iters > 0:
        pair = finetune_gan(pair, ds, cfg, reg=None)
    fid_after = frechet_distance(held, sample_from_gan(pair, n_hold, Rng(eval_rng_seed)))
    report = PretrainReport(fid_baseline=float(baseline), fid_after=float(fid_after),
                            iterations=iters, seed=seed, heldout_count=n_hold)
    return pair, report
