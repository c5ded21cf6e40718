"""Parameter updates: SGD, Adam, the grouped ISTA step and prune masks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numcore import DimensionError
from .recnet import CAUSAL_WEIGHT, CrvaeModel


def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if np.shape(param) != np.shape(grad):
        raise DimensionError(f"param {np.shape(param)} and grad {np.shape(grad)} differ")
    return param - lr * grad


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray, key="param",
              advance: bool = True):
    """Bias-corrected Adam update of one tensor; returns ``(state, new_param)``.

    ``advance=False`` reuses the current step count, for updating several
    tensors within one optimizer step.
    """
    if state.lr <= 0:
        raise ValueError("learning rate must be positive")
    if advance:
        state.step += 1
    if key not in state.m:
        state.m[key] = np.zeros_like(param)
        state.v[key] = np.zeros_like(param)
    m = state.m[key] = state.beta1 * state.m[key] + (1 - state.beta1) * grad
    v = state.v[key] = state.beta2 * state.v[key] + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1 ** state.step)
    v_hat = v / (1 - state.beta2 ** state.step)
    return state, param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def adam_update(state: AdamState, params: dict, grads: dict) -> None:
    """One Adam step over every entry of ``grads``, in place on ``params``."""
    state.step += 1
    for name, g in grads.items():
        _, params[name] = adam_step(state, params[name], g, key=name, advance=False)


def group_soft_threshold(w: np.ndarray, threshold: float) -> np.ndarray:
    """Block soft-threshold over the last axis: each row shrinks by ``threshold`` in norm."""
    norms = np.sqrt(np.sum(w * w, axis=-1, keepdims=True))
    scale = np.zeros_like(norms)
    live = norms > threshold
    scale[live] = (norms[live] - threshold) / norms[live]
    return w * scale


def ista_step(weights: np.ndarray, grad: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """Gradient step on the smooth loss, then the group-lasso prox with threshold γλ."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return group_soft_threshold(weights - gamma * grad, gamma * lam)


def apply_mask(model: CrvaeModel) -> CrvaeModel:
    """Zero every input-weight group whose mask entry is False (in place)."""
    w = model.params[CAUSAL_WEIGHT]
    w *= model.mask[..., None]
    return model
