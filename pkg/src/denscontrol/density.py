"""Pseudo-density estimation in feature space.

For each sample the average Euclidean distance to its k nearest neighbors is
computed; the volume that sample occupies scales as that distance to the
power of the effective manifold dimension n, density is the reciprocal
volume, and densities are normalized to mean 1 across the dataset. The
dimension-dependent sphere-volume constant cancels under normalization and is
never materialized. A small MLP regressor is then fit to the normalized
densities so that density can be predicted (and differentiated) for arbitrary
points.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ExtrapolationWarning, NonFiniteError, ShapeError
from .nn import Mlp, OptimizerState, optimizer_step
from .rng import Rng

DEFAULT_K = 10
DEFAULT_N = 1
MAX_N = 8

REGRESSOR_HIDDEN = (64, 64, 64)

# How far outside the training bounding box (in units of per-dim range) a
# query may sit before prediction is flagged as extrapolation.
EXTRAPOLATION_MARGIN = 0.5


@dataclass
class FeatureSet:
    """Matrix of per-sample feature vectors (rows = samples)."""

    features: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float32)
        if f.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise NonFiniteError("features contain non-finite values")
        self.features = f

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class DensityConfig:
    """Neighbor count k and effective manifold dimension n."""

    k: int = DEFAULT_K
    n: int = DEFAULT_N

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not (1 <= self.n <= MAX_N):
            raise ValueError(f"n must be in [1, {MAX_N}], got {self.n}")


@dataclass
class DensityEstimate:
    """Normalized densities and the average k-NN distances they came from."""

    densities: np.ndarray
    avg_knn_distances: np.ndarray
    config: DensityConfig

    def __len__(self) -> int:
        return len(self.densities)


@dataclass
class RegressorStats:
    final_mse: float
    heldout_r2: float
    epochs: int
    seed: int


@dataclass
class DensityRegressor:
    """MLP mapping feature vectors to predicted (pseudo) density."""

    net: Mlp
    training_stats: RegressorStats | None = None
    feature_low: np.ndarray | None = None
    feature_high: np.ndarray | None = None

    @property
    def input_dim(self) -> int:
        return self.net.input_dim


@dataclass(frozen=True)
class ThresholdCalibration:
    percentile: float
    threshold_value: float


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of a and rows of b, float64."""
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(sq, 0.0)


def _knn_mean_dists(points: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    """Mean distance to the k nearest neighbors of each row, self excluded."""
    n = points.shape[0]
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = _pairwise_sq_dists(points[start:stop], points)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        # The mean of the k smallest values is tie-order independent.
        nearest = np.partition(d2, k - 1, axis=1)[:, :k]
        out[start:stop] = np.sqrt(nearest).mean(axis=1)
    return out


def knn_avg_distance(fs: FeatureSet, cfg: DensityConfig) -> np.ndarray:
    """Average distance to the k nearest neighbors, exact brute force.

    Neighbor ties at the k-th rank are broken toward the lower index; the
    returned mean is identical either way.
    """
    if len(fs) <= cfg.k:
        raise ValueError(f"need more than k={cfg.k} samples, got {len(fs)}")
    return _knn_mean_dists(fs.features, cfg.k)


def estimate_density(fs: FeatureSet, cfg: DensityConfig = DensityConfig()) -> DensityEstimate:
    """Normalized pseudo densities for every sample in the set.

    Exact duplicate rows are collapsed before the k-NN pass and every
    duplicate inherits its representative's distance, which keeps densities
    finite; the normalization then runs over the full sample list.
    """
    unique, inverse = np.unique(fs.features, axis=0, return_inverse=True)
    n_unique = unique.shape[0]
    if n_unique <= cfg.k:
        raise ValueError(
            f"need more than k={cfg.k} distinct samples, got {n_unique} "
            f"(of {len(fs)} total)")
    d_unique = _knn_mean_dists(unique, cfg.k)
    d = d_unique[inverse.reshape(-1)]

    # rho_i = N * d_i^-n / sum_j d_j^-n, evaluated in log space so extreme
    # distance spreads cannot overflow for any permitted n.
    log_w = -float(cfg.n) * np.log(d)
    log_w -= log_w.max()
    w = np.exp(log_w)
    densities = len(fs) * w / w.sum()
    return DensityEstimate(densities=densities, avg_knn_distances=d, config=cfg)


def calibrate_threshold(est: DensityEstimate, percentile: float) -> ThresholdCalibration:
    """Nearest-rank percentile of the estimated densities."""
    if len(est) == 0:
        raise ValueError("empty density estimate")
    if not (0.0 < percentile < 100.0):
        raise ValueError(f"percentile must be in (0, 100), got {percentile}")
    ordered = np.sort(est.densities)
    rank = int(np.ceil(percentile / 100.0 * len(ordered)))  # 1-based
    return ThresholdCalibration(percentile=float(percentile),
                                threshold_value=float(ordered[rank - 1]))


def _fold_affine_standardization(net: Mlp, x_mean, x_std, y_mean, y_std) -> None:
    """Rewrite first/last layers so the net maps raw inputs to raw targets.

    Training runs on standardized data; folding keeps the artifact a plain
    MLP so checkpoints stay self-contained.
    """
    w0 = net.weights[0].astype(np.float64)
    b0 = net.biases[0].astype(np.float64)
    w0_new = w0 / x_std[:, None]
    b0_new = b0 - (x_mean / x_std) @ w0
    net.weights[0] = w0_new.astype(np.float32)
    net.biases[0] = b0_new.astype(np.float32)

    wl = net.weights[-1].astype(np.float64)
    bl = net.biases[-1].astype(np.float64)
    net.weights[-1] = (wl * y_std).astype(np.float32)
    net.biases[-1] = (bl * y_std + y_mean).astype(np.float32)


def train_regressor(fs: FeatureSet, est: DensityEstimate, epochs: int = 400,
                    seed: int = 0, learning_rate: float = 3e-3,
                    batch_size: int = 128, heldout_fraction: float = 0.1,
                    hidden=REGRESSOR_HIDDEN) -> DensityRegressor:
    """Fit an MLP to the estimated densities by minibatch Adam on MSE."""
    if len(est) != len(fs):
        raise ShapeError(f"estimate covers {len(est)} samples, features have {len(fs)}")
    x = fs.features.astype(np.float64)
    y = est.densities.astype(np.float64)[:, None]

    rng = Rng(seed)
    perm = rng.permutation(len(fs))
    n_hold = int(round(heldout_fraction * len(fs)))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    if len(train_idx) == 0:
        raise ValueError("no training samples left after held-out split")
    x_tr, y_tr = x[train_idx], y[train_idx]

    x_mean = x_tr.mean(axis=0)
    x_std = np.maximum(x_tr.std(axis=0), 1e-8)
    y_mean = float(y_tr.mean())
    y_std = max(float(y_tr.std()), 1e-8)
    xs = (x_tr - x_mean) / x_std
    ys = (y_tr - y_mean) / y_std

    net = Mlp.initialize([fs.dim, *hidden, 1], rng,
                         hidden_activation="leaky_relu", output_activation="identity")
    opt = OptimizerState(kind="adam", learning_rate=learning_rate)

    n_tr = len(xs)
    mse = np.nan
    for epoch in range(epochs):
        order = rng.permutation(n_tr)
        sq_sum = 0.0
        for start in range(0, n_tr, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = xs[idx], ys[idx]
            pred = net.forward(xb).astype(np.float64)
            resid = pred - yb
            sq_sum += float((resid * resid).sum())
            grads = net.backward(2.0 * resid / len(idx))
            optimizer_step(opt, net, grads)
        mse = sq_sum / n_tr
        if not np.isfinite(mse):
            raise DivergenceError(
                f"regressor training diverged at epoch {epoch}: mse={mse}")

    _fold_affine_standardization(net, x_mean, x_std, y_mean, y_std)

    pred_tr = net.forward(x_tr).astype(np.float64)
    final_mse = float(((pred_tr - y_tr) ** 2).mean())
    if n_hold > 0:
        pred_h = net.forward(x[hold_idx]).astype(np.float64)
        y_h = y[hold_idx]
        ss_res = float(((pred_h - y_h) ** 2).sum())
        ss_tot = float(((y_h - y_h.mean()) ** 2).sum())
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")
    else:
        r2 = float("nan")

    stats = RegressorStats(final_mse=final_mse, heldout_r2=r2, epochs=epochs, seed=seed)
    return DensityRegressor(net=net, training_stats=stats,
                            feature_low=x.min(axis=0), feature_high=x.max(axis=0))


def pseudo_density(reg: DensityRegressor, sample_features) -> np.ndarray:
    """Predicted density per row. Warns when queries sit far outside support."""
    x = np.asarray(sample_features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != reg.input_dim:
        raise ShapeError(
            f"expected features with {reg.input_dim} columns, got shape {x.shape}")
    if reg.feature_low is not None and x.size:
        span = np.maximum(reg.feature_high - reg.feature_low, 1e-12)
        low = reg.feature_low - EXTRAPOLATION_MARGIN * span
        high = reg.feature_high + EXTRAPOLATION_MARGIN * span
        outside = np.any((x < low) | (x > high), axis=1)
        if outside.any():
            warnings.warn(
                f"{int(outside.sum())} of {len(x)} queries lie far outside the "
                "regressor's training support", ExtrapolationWarning, stacklevel=2)
    return reg.net.forward(x)[:, 0].astype(np.float64)


def pseudo_density_grad(reg: DensityRegressor, sample_features):
    """Predicted density per row plus its gradient with respect to the input."""
    x = np.asarray(sample_features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != reg.input_dim:
        raise ShapeError(
            f"expected features with {reg.input_dim} columns, got shape {x.shape}")
    return reg.net.value_and_input_grad(x)
