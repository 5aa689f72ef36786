"""Shared test utilities: parameter flattening and finite-difference oracles."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from fusionrl import nets


def flatten_params(params: nets.NetworkParams) -> np.ndarray:
    chunks = [w.ravel() for w in params.weights] + [b.ravel() for b in params.biases]
    return np.concatenate(chunks)


def set_flat_params(params: nets.NetworkParams, flat: np.ndarray) -> None:
    i = 0
    for w in params.weights:
        w[...] = flat[i : i + w.size].reshape(w.shape)
        i += w.size
    for b in params.biases:
        b[...] = flat[i : i + b.size].reshape(b.shape)
        i += b.size
    assert i == flat.size


def flatten_grads(grads: nets.Gradients) -> np.ndarray:
    chunks = [w.ravel() for w in grads.weights] + [b.ravel() for b in grads.biases]
    return np.concatenate(chunks)


def numeric_gradient(
    loss_fn: Callable[[], float], params: nets.NetworkParams, eps: float = 1e-6
) -> np.ndarray:
    """Central finite differences of loss_fn over every parameter coordinate.

    loss_fn reads the current (mutated in place) parameter values.
    """
    base = flatten_params(params)
    grad = np.zeros_like(base)
    for i in range(base.size):
        step = eps * max(1.0, abs(base[i]))
        probe = base.copy()
        probe[i] = base[i] + step
        set_flat_params(params, probe)
        up = loss_fn()
        probe[i] = base[i] - step
        set_flat_params(params, probe)
        down = loss_fn()
        grad[i] = (up - down) / (2.0 * step)
    set_flat_params(params, base)
    return grad


def max_rel_err(approx: np.ndarray, exact: np.ndarray) -> float:
    """Elementwise |a-e| / max(|a|, |e|, 1), maximized."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    denom = np.maximum(np.maximum(np.abs(approx), np.abs(exact)), 1.0)
    return float(np.max(np.abs(approx - exact) / denom))


def preacts_away_from_kink(
    params: nets.NetworkParams, spec: nets.NetworkSpec, x: np.ndarray, margin: float = 1e-3
) -> bool:
    """True when no hidden pre-activation sits within ``margin`` of the ReLU kink.

    Finite differences are only valid away from the kink, so FD test cases
    resample until this holds.
    """
    _, cache = nets.forward_cached(params, spec, x)
    for z in cache["preacts"][:-1]:
        if np.min(np.abs(z)) < margin:
            return False
    return True
