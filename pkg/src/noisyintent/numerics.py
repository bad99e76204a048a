"""Array-level numeric kernels: softmax/KL/CE, z-scoring, Adam, FD checking.

These are the plain-ndarray counterparts of the differentiable graph in
:mod:`noisyintent.autodiff`; inference and metrics use these, training uses
the graph.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError, InvalidInputError, ShapeError

PROB_FLOOR = 1e-12
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def softmax(logits) -> np.ndarray:
    """Stable softmax of a vector (max-subtracted)."""
    x = np.asarray(logits, dtype=np.float64)
    if x.size == 0:
        raise InvalidInputError("softmax of an empty vector")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("softmax input must be finite")
    e = np.exp(x - x.max())
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-d array."""
    x = np.asarray(logits, dtype=np.float64)
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def kl_divergence(p, q) -> float:
    """KL(p || q) with the 0*log(0) = 0 convention and q clamped at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"KL shapes differ: {p.shape} vs {q.shape}")
    if abs(p.sum() - 1.0) > 1e-6 or abs(q.sum() - 1.0) > 1e-6:
        raise InvalidInputError("KL arguments must each sum to 1 within 1e-6")
    q = np.maximum(q, PROB_FLOOR)
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def cross_entropy(p, label: int) -> float:
    """-log p[label], with p[label] clamped at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    label = int(label)
    if not 0 <= label < p.size:
        raise IndexError(f"label {label} out of range for {p.size} classes")
    return float(-np.log(max(p[label], PROB_FLOOR)))


def z_score_normalize(v) -> np.ndarray:
    """(v - mean) / population std; all-zeros when the spread is degenerate."""
    x = np.asarray(v, dtype=np.float64)
    if x.size < 2:
        raise InvalidInputError("z-scoring needs at least 2 entries")
    std = x.std()
    if std < 1e-9:
        return np.zeros_like(x)
    return (x - x.mean()) / std


def z_score_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise version of :func:`z_score_normalize` for a 2-d array."""
    x = np.asarray(m, dtype=np.float64)
    std = x.std(axis=1, keepdims=True)
    centered = x - x.mean(axis=1, keepdims=True)
    out = np.divide(centered, std, out=np.zeros_like(x), where=std >= 1e-9)
    out[(std < 1e-9).reshape(-1)] = 0.0
    return out


@dataclass
class OptimizerState:
    """Adam moment estimates, one array pair per named parameter."""

    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    step_count: int = 0


def init_optimizer_state(params: Mapping[str, np.ndarray]) -> OptimizerState:
    return OptimizerState(
        first_moment={k: np.zeros_like(v) for k, v in params.items()},
        second_moment={k: np.zeros_like(v) for k, v in params.items()},
    )


def adam_step(params: dict, grads: Mapping[str, np.ndarray],
              state: OptimizerState, lr: float) -> tuple[dict, OptimizerState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if lr <= 0.0:
        raise ConfigError("learning rate must be positive")
    if set(params) != set(grads):
        raise ShapeError("params and grads must share the same names")
    if not state.first_moment:
        state.first_moment = {k: np.zeros_like(v) for k, v in params.items()}
        state.second_moment = {k: np.zeros_like(v) for k, v in params.items()}
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - ADAM_BETA1 ** t
    bias2 = 1.0 - ADAM_BETA2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
    return params, state


def grad_check(fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
               point, eps: float = 1e-5,
               value_fn: Callable[[np.ndarray], float] | None = None) -> float:
    """Max relative error between fn's analytic gradient and central differences.

    ``fn(x)`` returns ``(value, gradient)``.  ``value_fn``, when given, is a
    cheaper value-only evaluation used for the perturbed points.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise InvalidInputError("eps must lie in [1e-6, 1e-4]")
    x = np.asarray(point, dtype=np.float64).copy()
    value, analytic = fn(x)
    analytic = np.asarray(analytic, dtype=np.float64)
    if not np.isfinite(value) or not np.all(np.isfinite(analytic)):
        raise InvalidInputError("function value or gradient is not finite")
    if analytic.shape != x.shape:
        raise ShapeError("gradient shape must match the evaluation point")
    evaluate = value_fn if value_fn is not None else (lambda p: fn(p)[0])
    worst = 0.0
    flat = x.reshape(-1)
    flat_grad = analytic.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = evaluate(x)
        flat[i] = orig - eps
        f_minus = evaluate(x)
        flat[i] = orig
        if not np.isfinite(f_plus) or not np.isfinite(f_minus):
            raise InvalidInputError("perturbed function value is not finite")
        fd = (f_plus - f_minus) / (2.0 * eps)
        err = abs(flat_grad[i] - fd) / max(1.0, abs(flat_grad[i]))
        if err > worst:
            worst = err
    return worst
