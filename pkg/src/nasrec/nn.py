"""Minimal dense numerical kernel: activations, softmax, Adam, init, grad checking.

Everything is float64 and deterministic. Matrices are plain numpy arrays in
row-major layout; a "d-vector" is a 1-D array of length d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import TrainingError


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(x, 0.0)


def sigmoid(x: float) -> float:
    """Logistic function 1/(1+exp(-x)) via the overflow-safe branch form."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def softmax(scores: np.ndarray) -> np.ndarray:
    """Max-shifted softmax; outputs are nonnegative and sum to 1."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(s - s.max())
    return e / e.sum()


def affine(w: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """w @ x + b with shape validation."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if w.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ValueError(f"affine expects matrix/vector/vector, got shapes {w.shape}, {x.shape}, {b.shape}")
    if w.shape[1] != x.shape[0] or w.shape[0] != b.shape[0]:
        raise ValueError(f"affine shape mismatch: w {w.shape}, x {x.shape}, b {b.shape}")
    return w @ x + b


def xavier_uniform(rows: int, cols: int, seed) -> np.ndarray:
    """Weight matrix with i.i.d. uniform entries in [-a, a], a = sqrt(6/(rows+cols)).

    `seed` may be an int, a SeedSequence, or a Generator.
    """
    if rows <= 0 or cols <= 0:
        raise ValueError(f"dimensions must be positive, got {rows}x{cols}")
    rng = np.random.default_rng(seed)
    a = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


@dataclass
class AdamState:
    """Moment accumulators for one parameter block."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: np.ndarray, **kwargs) -> "AdamState":
        return cls(m=np.zeros_like(param, dtype=np.float64),
                   v=np.zeros_like(param, dtype=np.float64), **kwargs)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              block: str = "") -> None:
    """One bias-corrected Adam update, in place on `param` and `state`."""
    if lr < 0.0:
        raise ValueError("adam_step requires lr >= 0")
    if param.shape != grad.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameter {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite gradient in parameter block '{block or 'unnamed'}'")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def adam_step_rows(param: np.ndarray, rows: np.ndarray, row_grads: np.ndarray,
                   state: AdamState, lr: float, block: str = "") -> None:
    """Row-sparse Adam update for embedding matrices.

    Only the given rows have their moments and values updated; the step
    counter is shared across the whole block, as in sparse Adam.
    """
    if lr < 0.0:
        raise ValueError("adam_step_rows requires lr >= 0")
    if row_grads.shape != (len(rows), param.shape[1]):
        raise ValueError(f"row gradient shape {row_grads.shape} does not match rows {len(rows)} x {param.shape[1]}")
    if not np.all(np.isfinite(row_grads)):
        raise TrainingError(f"non-finite gradient in parameter block '{block or 'unnamed'}'")
    state.t += 1
    state.m[rows] = state.beta1 * state.m[rows] + (1.0 - state.beta1) * row_grads
    state.v[rows] = state.beta2 * state.v[rows] + (1.0 - state.beta2) * row_grads * row_grads
    m_hat = state.m[rows] / (1.0 - state.beta1 ** state.t)
    v_hat = state.v[rows] / (1.0 - state.beta2 ** state.t)
    param[rows] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def grad_check(loss_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
               params: np.ndarray, epsilon: float = 1e-5,
               zero_tol: float = 1e-9) -> float:
    """Max relative error between an analytic gradient and central differences.

    `loss_and_grad(theta)` returns (loss, gradient) for a flat parameter
    vector; the analytic gradient is taken at `params` and each coordinate is
    compared against (f(theta+eps*e_i) - f(theta-eps*e_i)) / (2*eps) with
    relative error |a-n| / max(|a|, |n|, 1e-8).

    Coordinates where both gradients are below `zero_tol` count as exact
    matches: when the true gradient vanishes (e.g. softmax shift invariance
    zeroes summed score gradients) both sides are pure round-off, and the
    difference measures 1-ulp noise rather than correctness.

    The loss must be differentiable in an epsilon-neighbourhood of `params`;
    callers are responsible for staying clear of ReLU kinks.
    """
    theta = np.array(params, dtype=np.float64).ravel()
    _, analytic = loss_and_grad(theta)
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if analytic.shape != theta.shape:
        raise ValueError("analytic gradient shape does not match parameters")
    worst = 0.0
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + epsilon
        loss_plus, _ = loss_and_grad(theta)
        theta[i] = orig - epsilon
        loss_minus, _ = loss_and_grad(theta)
        theta[i] = orig
        numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
        if max(abs(analytic[i]), abs(numeric)) < zero_tol:
            continue
        err = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
