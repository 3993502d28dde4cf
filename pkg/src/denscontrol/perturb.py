"""Per-sample latent perturbation under an L-infinity budget.

Starting from a zero perturbation, each step moves the latent along the raw
gradient of the predicted density of the generated sample (ascending for
realism, descending for uniqueness) and clips the perturbation elementwise
to [-eps, +eps]. The raw gradient is used as-is, not its sign, so the step
size is scale-sensitive; an optional per-row normalization flag exists for
badly scaled toys and is off by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import DensityRegressor
from .errors import NonFiniteError, ShapeError
from .nn import Mlp

DIRECTIONS = ("ascend", "descend")


@dataclass(frozen=True)
class PerturbConfig:
    """PGD iteration count, step size, budget, and direction."""

    steps: int = 10
    step_size: float = 0.025
    budget: float = 0.1
    direction: str = "ascend"
    normalize_gradient: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.budget < 0:
            raise ValueError(f"budget must be >= 0, got {self.budget}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")

    @classmethod
    def noise_vector_defaults(cls, direction: str = "ascend") -> "PerturbConfig":
        """Milder schedule suited to perturbing a denoiser's input noise."""
        return cls(steps=5, step_size=0.0025, budget=0.0125, direction=direction)


@dataclass
class PerturbResult:
    """Perturbed latents plus the per-step density trace.

    ``density_trace`` has one row per evaluation: the first row is the
    density at zero perturbation and the last row is the density at the
    final perturbation.
    """

    original_z: np.ndarray
    final_z: np.ndarray
    delta: np.ndarray
    density_before: np.ndarray
    density_after: np.ndarray
    density_trace: np.ndarray


def _density_of_latent(gen: Mlp, reg: DensityRegressor, z: np.ndarray):
    """rho(G(z)) per row and its gradient with respect to z."""
    x = gen.forward(z)
    rho, d_rho_dx = reg.net.value_and_input_grad(x)
    dz = gen.backward(d_rho_dx).wrt_input
    return rho, dz


def perturb_latent(gen: Mlp, reg: DensityRegressor, z, cfg: PerturbConfig) -> PerturbResult:
    """Run the PGD loop on one latent vector or a batch of rows."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    if z.ndim != 2 or z.shape[1] != gen.input_dim:
        raise ShapeError(
            f"latents with shape {z.shape} do not match generator input dim {gen.input_dim}")
    if gen.output_dim != reg.input_dim:
        raise ShapeError(
            f"generator outputs {gen.output_dim} dims, regressor expects {reg.input_dim}")

    sign = 1.0 if cfg.direction == "ascend" else -1.0
    delta = np.zeros_like(z)
    trace = []
    for step in range(cfg.steps):
        try:
            rho, grad = _density_of_latent(gen, reg, z + delta)
        except NonFiniteError as exc:
            raise NonFiniteError(
                f"non-finite values while evaluating density at step {step}: {exc}",
                trace=np.array(trace)) from exc
        trace.append(rho)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(
                f"non-finite density gradient at step {step}",
                trace=np.array(trace))
        if cfg.normalize_gradient:
            norms = np.sqrt((grad * grad).sum(axis=1, keepdims=True))
            grad = grad / np.where(norms > 0, norms, 1.0)
        delta = delta + sign * cfg.step_size * grad
        delta = np.clip(delta, -cfg.budget, cfg.budget)
    rho_final, _ = _density_of_latent(gen, reg, z + delta)
    trace.append(rho_final)

    trace = np.asarray(trace)
    result = PerturbResult(
        original_z=z, final_z=z + delta, delta=delta,
        density_before=trace[0], density_after=trace[-1], density_trace=trace)
    if single:
        result = PerturbResult(
            original_z=z[0], final_z=result.final_z[0], delta=delta[0],
            density_before=trace[0, 0], density_after=trace[-1, 0],
            density_trace=trace[:, 0])
    return result
