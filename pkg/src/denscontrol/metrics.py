"""Disentangled fidelity/diversity evaluation.

Precision is the fraction of generated points lying inside the union of
k-NN hyperspheres around the real points; recall swaps the roles. The
Fréchet distance compares Gaussian fits of the two feature sets.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict

import numpy as np

from .density import FeatureSet, _pairwise_sq_dists
from .errors import ShapeError

DEFAULT_MANIFOLD_K = 3

# Relative eigenvalue floor below which a covariance counts as degenerate.
_DEGENERATE_RTOL = 1e-12
_JITTER = 1e-6


@dataclass
class ManifoldIndex:
    """Reference points with the distance to each one's k-th nearest neighbor."""

    points: np.ndarray
    radii: np.ndarray
    k: int

    def contains(self, queries: np.ndarray) -> np.ndarray:
        """Boolean per query: inside at least one hypersphere (boundary counts)."""
        q = np.asarray(queries, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != self.points.shape[1]:
            raise ShapeError(
                f"queries with {q.shape} do not match reference dim {self.points.shape[1]}")
        inside = np.zeros(len(q), dtype=bool)
        r2 = self.radii**2
        for start in range(0, len(q), 256):
            stop = min(start + 256, len(q))
            d2 = _pairwise_sq_dists(q[start:stop], self.points)
            inside[start:stop] = (d2 <= r2[None, :]).any(axis=1)
        return inside


@dataclass
class EvalReport:
    precision: float
    recall: float
    frechet_distance: float
    n_real: int
    n_generated: int
    manifold_k: int

    def to_dict(self) -> dict:
        return asdict(self)


def build_manifold(fs: FeatureSet, k: int = DEFAULT_MANIFOLD_K) -> ManifoldIndex:
    """k-NN radius per reference point; exact duplicates collapse first."""
    unique = np.unique(fs.features, axis=0)
    if len(unique) <= k:
        raise ValueError(f"need more than k={k} distinct points, got {len(unique)}")
    d2 = _pairwise_sq_dists(unique, unique)
    np.fill_diagonal(d2, np.inf)
    kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
    return ManifoldIndex(points=unique.astype(np.float64), radii=np.sqrt(kth), k=k)


def precision_recall(real: FeatureSet, gen: FeatureSet,
                     k: int = DEFAULT_MANIFOLD_K) -> tuple[float, float]:
    """Fraction of generated points on the real manifold, and vice versa."""
    if real.dim != gen.dim:
        raise ShapeError(f"feature dims differ: {real.dim} vs {gen.dim}")
    real_manifold = build_manifold(real, k)
    gen_manifold = build_manifold(gen, k)
    precision = float(real_manifold.contains(gen.features.astype(np.float64)).mean())
    recall = float(gen_manifold.contains(real.features.astype(np.float64)).mean())
    return precision, recall


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    return (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T


def _is_degenerate(cov: np.ndarray) -> bool:
    vals = np.linalg.eigvalsh((cov + cov.T) / 2.0)
    return bool(vals.min() < _DEGENERATE_RTOL * max(1.0, vals.max()))


def frechet_distance(real: FeatureSet, gen: FeatureSet) -> float:
    """Fréchet distance between Gaussian fits of the two sets.

    The trace of the cross-covariance square root is computed from the
    eigendecomposition of the symmetrized product, with negative eigenvalues
    clamped to zero. Degenerate covariances get a reported diagonal jitter,
    applied to both sides to preserve symmetry.
    """
    if real.dim != gen.dim:
        raise ShapeError(f"feature dims differ: {real.dim} vs {gen.dim}")
    if len(real) < 2 or len(gen) < 2:
        raise ValueError("need at least 2 points per set to fit a covariance")
    a = real.features.astype(np.float64)
    b = gen.features.astype(np.float64)
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))

    if _is_degenerate(cov_a) or _is_degenerate(cov_b):
        warnings.warn(f"degenerate covariance: adding {_JITTER} diagonal jitter "
                      "to both sets", stacklevel=2)
        eye = np.eye(real.dim)
        cov_a = cov_a + _JITTER * eye
        cov_b = cov_b + _JITTER * eye

    sqrt_a = _psd_sqrt(cov_a)
    inner = sqrt_a @ cov_b @ sqrt_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt_cross = np.sqrt(np.maximum(vals, 0.0)).sum()

    diff = mu_a - mu_b
    fid = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt_cross)
    return max(fid, 0.0)


def evaluate(real: FeatureSet, gen: FeatureSet, k: int = DEFAULT_MANIFOLD_K) -> EvalReport:
    """Full report: precision, recall, and Fréchet distance for one run."""
    precision, recall = precision_recall(real, gen, k)
    return EvalReport(precision=precision, recall=recall,
                      frechet_distance=frechet_distance(real, gen),
                      n_real=len(real), n_generated=len(gen), manifold_k=k)
