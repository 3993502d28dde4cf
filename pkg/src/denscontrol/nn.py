"""Dense linear algebra and a minimal MLP with reverse-mode gradients.

All matrices are numpy arrays: float32 storage, float64 accumulation inside
every matmul and reduction. Shape mismatches raise :class:`ShapeError` rather
than broadcasting, and non-finite values raise :class:`NonFiniteError` rather
than propagating.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, ShapeError
from .rng import Rng

LEAKY_SLOPE = 0.01

HIDDEN_ACTIVATIONS = ("tanh", "relu", "leaky_relu")
OUTPUT_ACTIVATIONS = ("identity", "tanh")

# Codes used by the MLPW1 checkpoint format; append-only.
ACTIVATION_CODES = {"identity": 0, "tanh": 1, "relu": 2, "leaky_relu": 3}
ACTIVATION_NAMES = {v: k for k, v in ACTIVATION_CODES.items()}


def _act(name: str, s: np.ndarray) -> np.ndarray:
    if name == "identity":
        return s
    if name == "tanh":
        return np.tanh(s)
    if name == "relu":
        return np.maximum(s, 0.0)
    if name == "leaky_relu":
        return np.where(s > 0.0, s, LEAKY_SLOPE * s)
    raise ValueError(f"unknown activation {name!r}")


def _act_deriv(name: str, s: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(s)
    if name == "tanh":
        t = np.tanh(s)
        return 1.0 - t * t
    if name == "relu":
        return np.where(s > 0.0, 1.0, 0.0)
    if name == "leaky_relu":
        return np.where(s > 0.0, 1.0, LEAKY_SLOPE)
    raise ValueError(f"unknown activation {name!r}")


def _act_deriv2(name: str, s: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.zeros_like(s)
    if name == "tanh":
        t = np.tanh(s)
        return -2.0 * t * (1.0 - t * t)
    if name in ("relu", "leaky_relu"):
        # Zero almost everywhere; the kink at 0 has measure zero.
        return np.zeros_like(s)
    raise ValueError(f"unknown activation {name!r}")


def _require_finite(arr: np.ndarray, what: str, trace=None) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}", trace=trace)


def _as_batch(x: np.ndarray, dim: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"{what} must be 2-D, got shape {x.shape}")
    if x.shape[1] != dim:
        raise ShapeError(f"{what} has {x.shape[1]} columns, expected {dim}")
    return x


@dataclass
class MlpGradients:
    """Parameter gradients plus the gradient with respect to the input batch."""

    weights: list
    biases: list
    wrt_input: np.ndarray


class Mlp:
    """Fully-connected network with explicit forward/backward passes.

    ``layer_sizes`` lists input, hidden..., output widths. One hidden
    activation is shared by every hidden layer; the output activation is
    identity or tanh. Weights are float32 with float64 accumulation, so
    analytic gradients agree with a 64-bit finite-difference recompute.
    """

    def __init__(self, layer_sizes, weights, biases,
                 hidden_activation="tanh", output_activation="identity"):
        self.layer_sizes = [int(n) for n in layer_sizes]
        if len(self.layer_sizes) < 2 or any(n < 1 for n in self.layer_sizes):
            raise ShapeError(f"invalid layer sizes {layer_sizes}")
        if hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden activation must be one of {HIDDEN_ACTIVATIONS}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output activation must be one of {OUTPUT_ACTIVATIONS}")
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.weights = []
        self.biases = []
        for l, (fan_in, fan_out) in enumerate(zip(self.layer_sizes, self.layer_sizes[1:])):
            w = np.asarray(weights[l], dtype=np.float32)
            b = np.asarray(biases[l], dtype=np.float32)
            if w.shape != (fan_in, fan_out):
                raise ShapeError(f"layer {l} weight shape {w.shape} != {(fan_in, fan_out)}")
            if b.shape != (fan_out,):
                raise ShapeError(f"layer {l} bias shape {b.shape} != {(fan_out,)}")
            self.weights.append(w)
            self.biases.append(b)
        self._cache = None

    # -- construction -----------------------------------------------------

    @classmethod
    def zeros(cls, layer_sizes, hidden_activation="tanh", output_activation="identity"):
        ws = [np.zeros((i, o), dtype=np.float32)
              for i, o in zip(layer_sizes, layer_sizes[1:])]
        bs = [np.zeros(o, dtype=np.float32) for o in layer_sizes[1:]]
        return cls(layer_sizes, ws, bs, hidden_activation, output_activation)

    @classmethod
    def initialize(cls, layer_sizes, rng: Rng,
                   hidden_activation="tanh", output_activation="identity"):
        """Seeded init: He scaling for relu-family hidden units, Xavier for tanh."""
        gain = 2.0 if hidden_activation in ("relu", "leaky_relu") else 1.0
        ws, bs = [], []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            std = np.sqrt(gain / fan_in)
            ws.append((rng.normal((fan_in, fan_out)) * std).astype(np.float32))
            bs.append(np.zeros(fan_out, dtype=np.float32))
        return cls(layer_sizes, ws, bs, hidden_activation, output_activation)

    # -- introspection ----------------------------------------------------

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes,
                   [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases],
                   self.hidden_activation, self.output_activation)

    def _activation_at(self, layer: int) -> str:
        return self.output_activation if layer == self.n_layers - 1 else self.hidden_activation

    # -- forward / backward -----------------------------------------------

    def forward(self, batch) -> np.ndarray:
        """Apply the network to a batch (rows = samples). Caches for backward."""
        h = _as_batch(batch, self.input_dim, "input batch")
        _require_finite(h, "input batch")
        hs, ss = [h], []
        for l in range(self.n_layers):
            s = h @ self.weights[l].astype(np.float64) + self.biases[l].astype(np.float64)
            h = _act(self._activation_at(l), s)
            ss.append(s)
            hs.append(h)
        _require_finite(h, "forward output")
        with np.errstate(over="ignore"):
            out = h.astype(np.float32)
        _require_finite(out, "forward output after float32 cast")
        self._cache = (hs, ss)
        return out

    def backward(self, loss_grad) -> MlpGradients:
        """Gradients of a scalar loss given d(loss)/d(output) for the cached batch."""
        if self._cache is None:
            raise ShapeError("backward called before forward: no cached activations")
        hs, ss = self._cache
        g = np.asarray(loss_grad, dtype=np.float64)
        if g.shape != hs[-1].shape:
            raise ShapeError(f"loss_grad shape {g.shape} != output shape {hs[-1].shape}")
        _require_finite(g, "loss gradient")
        d_ws, d_bs = [None] * self.n_layers, [None] * self.n_layers
        for l in range(self.n_layers - 1, -1, -1):
            d_s = g * _act_deriv(self._activation_at(l), ss[l])
            d_ws[l] = hs[l].T @ d_s
            d_bs[l] = d_s.sum(axis=0)
            g = d_s @ self.weights[l].astype(np.float64).T
        _require_finite(g, "input gradient")
        return MlpGradients(weights=d_ws, biases=d_bs, wrt_input=g)

    def value_and_input_grad(self, batch):
        """Per-row output and d(output)/d(input) for a scalar-output network."""
        if self.output_dim != 1:
            raise ShapeError("input gradient of a non-scalar output is ambiguous")
        y = self.forward(batch)
        grads = self.backward(np.ones((y.shape[0], 1)))
        return y[:, 0].astype(np.float64), grads.wrt_input

    # -- gradient penalty (double backprop) --------------------------------

    def gradient_penalty(self, batch):
        """Mean squared deviation of the input-gradient norm from 1.

        Returns the penalty value and its gradients with respect to the
        parameters, obtained by differentiating through the backward chain.
        Requires a scalar identity output (a critic head).
        """
        if self.output_dim != 1 or self.output_activation != "identity":
            raise ShapeError("gradient penalty needs a scalar identity output")
        x = _as_batch(batch, self.input_dim, "penalty batch")
        nb = x.shape[0]
        L = self.n_layers
        w64 = [w.astype(np.float64) for w in self.weights]

        hs, ss = [x], []
        h = x
        for l in range(L):
            s = h @ w64[l] + self.biases[l].astype(np.float64)
            h = _act(self._activation_at(l), s)
            ss.append(s)
            hs.append(h)

        # Input gradient g_b = dD/dx_b via the chain u_l.
        us = [None] * (L + 1)
        us[L] = np.ones((nb, 1))
        for l in range(L - 1, 0, -1):
            us[l] = (us[l + 1] @ w64[l].T) * _act_deriv(self._activation_at(l - 1), ss[l - 1])
        g = us[1] @ w64[0].T

        norms = np.sqrt((g * g).sum(axis=1))
        penalty = float(((norms - 1.0) ** 2).mean())
        safe = np.where(norms > 0.0, norms, 1.0)
        g_bar = (2.0 / nb) * ((norms - 1.0) / safe)[:, None] * g

        d_ws = [np.zeros_like(w) for w in w64]
        d_bs = [np.zeros(b.shape, dtype=np.float64) for b in self.biases]
        s_bar = [np.zeros_like(s) for s in ss]

        # Reverse through the backward chain: g = u_1 W_1^T,
        # u_l = (u_{l+1} W_{l+1}^T) * act'(s_{l-1}).
        u_bar = g_bar @ w64[0]
        d_ws[0] += g_bar.T @ us[1]
        for l in range(1, L):
            m = us[l + 1] @ w64[l].T
            d1 = _act_deriv(self._activation_at(l - 1), ss[l - 1])
            m_bar = u_bar * d1
            s_bar[l - 1] += u_bar * m * _act_deriv2(self._activation_at(l - 1), ss[l - 1])
            d_ws[l] += m_bar.T @ us[l + 1]
            u_bar = m_bar @ w64[l]

        # Reverse through the forward graph with the accumulated s_bar.
        h_bar = np.zeros_like(hs[L])
        for l in range(L - 1, -1, -1):
            sb = s_bar[l] + h_bar * _act_deriv(self._activation_at(l), ss[l])
            d_ws[l] += hs[l].T @ sb
            d_bs[l] += sb.sum(axis=0)
            h_bar = sb @ w64[l].T

        return penalty, MlpGradients(weights=d_ws, biases=d_bs, wrt_input=h_bar)


@dataclass
class OptimizerState:
    """SGD or Adam state. Moment arrays mirror parameter shapes."""

    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.kind, self.learning_rate, self.beta1, self.beta2,
                              self.eps, self.step_count,
                              [a.copy() for a in self.m], [a.copy() for a in self.v])


def optimizer_step(state: OptimizerState, net: Mlp, grads: MlpGradients) -> None:
    """Update ``net`` parameters in place from ``grads``. Deterministic."""
    params = net.weights + net.biases
    gs = list(grads.weights) + list(grads.biases)
    if len(gs) != len(params):
        raise ShapeError("gradient count does not match parameter count")
    for p, g in zip(params, gs):
        if np.asarray(g).shape != p.shape:
            raise ShapeError(f"gradient shape {np.asarray(g).shape} != parameter shape {p.shape}")
        _require_finite(np.asarray(g), "parameter gradient")

    if state.kind == "sgd":
        for p, g in zip(params, gs):
            p -= (state.learning_rate * g).astype(np.float32)
        state.step_count += 1
        return

    if not state.m:
        state.m = [np.zeros(p.shape, dtype=np.float64) for p in params]
        state.v = [np.zeros(p.shape, dtype=np.float64) for p in params]
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, gs, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p -= update.astype(np.float32)
