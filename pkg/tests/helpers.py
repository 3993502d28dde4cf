"""Shared test oracles, independent of the library code paths they check."""

import numpy as np

LEAKY_SLOPE = 0.01


def oracle_forward(weights, biases, hidden_act, output_act, x):
    """Independent 64-bit MLP forward used as the finite-difference oracle."""
    def act(name, s):
        if name == "identity":
            return s
        if name == "tanh":
            return np.tanh(s)
        if name == "relu":
            return np.maximum(s, 0.0)
        if name == "leaky_relu":
            return np.where(s > 0.0, s, LEAKY_SLOPE * s)
        raise ValueError(name)

    h = np.asarray(x, dtype=np.float64)
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        s = h @ np.asarray(w, dtype=np.float64) + np.asarray(b, dtype=np.float64)
        h = act(output_act if l == last else hidden_act, s)
    return h


def fd_param_grads(net, x, loss_from_output, h=1e-3):
    """Central finite differences over every parameter, 64-bit recompute.

    ``loss_from_output`` maps the float64 network output to a scalar.
    Perturbations are applied in float32 (matching storage) and the realized
    step size is used in the quotient.
    """
    grads = []
    params = list(net.weights) + list(net.biases)
    for p in params:
        g = np.zeros(p.shape, dtype=np.float64)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            hi = np.float32(orig + h)
            lo = np.float32(orig - h)
            flat[i] = hi
            f_hi = loss_from_output(oracle_forward(
                net.weights, net.biases, net.hidden_activation, net.output_activation, x))
            flat[i] = lo
            f_lo = loss_from_output(oracle_forward(
                net.weights, net.biases, net.hidden_activation, net.output_activation, x))
            flat[i] = orig
            gflat[i] = (f_hi - f_lo) / (float(hi) - float(lo))
        grads.append(g)
    return grads[:len(net.weights)], grads[len(net.weights):]


def fd_input_grads(net, x, loss_from_output, h=1e-4):
    """Central finite differences of the loss over the input batch."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        f_hi = loss_from_output(oracle_forward(
            net.weights, net.biases, net.hidden_activation, net.output_activation, xp))
        f_lo = loss_from_output(oracle_forward(
            net.weights, net.biases, net.hidden_activation, net.output_activation, xm))
        g[idx] = (f_hi - f_lo) / (2 * h)
    return g


def max_rel_err(a, b):
    """Elementwise relative error with a floor tied to the overall scale."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-3 * scale)
    return float((np.abs(a - b) / denom).max())


def assert_grads_close(analytic_ws, analytic_bs, fd_ws, fd_bs, tol=1e-2):
    for aw, fw in zip(analytic_ws, fd_ws):
        assert max_rel_err(aw, fw) < tol, f"weight grad mismatch: {max_rel_err(aw, fw)}"
    for ab, fb in zip(analytic_bs, fd_bs):
        assert max_rel_err(ab, fb) < tol, f"bias grad mismatch: {max_rel_err(ab, fb)}"
