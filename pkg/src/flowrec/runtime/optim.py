"""Adam with optional global-norm gradient clipping, plus the step-decay
learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(m=np.zeros(n), v=np.zeros(n))


def clip_by_global_norm(grad, clip_norm):
    """Rescale grad in place so its 2-norm is at most clip_norm; returns the
    pre-clip norm."""
    norm = float(np.sqrt(np.dot(grad, grad)))
    if not np.isfinite(norm):
        raise ValueError("non-finite gradient norm")
    if clip_norm is not None and norm > clip_norm:
        grad *= clip_norm / norm
    return norm


def adam_step(params, grad, state: AdamState, lr, beta1=0.9, beta2=0.999,
              eps=1e-8, clip_norm=None):
    """One Adam update, in place on `params`.

    Bias-corrected first/second moments; when clip_norm is set the gradient is
    rescaled to that global norm before entering the moment updates.
    """
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("parameter/gradient/state shape mismatch")
    clip_by_global_norm(grad, clip_norm)
    state.step += 1
    t = state.step
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**t)
    v_hat = state.v / (1.0 - beta2**t)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)


def lr_at(epoch, lr0, factor=1.0, interval=1):
    """Step decay: lr0 * factor**floor(epoch / interval)."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    if interval < 1:
        raise ValueError("decay interval must be >= 1")
    return lr0 * factor ** (epoch // interval)
