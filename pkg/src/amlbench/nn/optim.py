from __future__ import annotations

import numpy as np

from ..errors import TrainingError


def adam_step(param, grad, m, v, t, lr, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected adaptive-moment update; ``m``/``v`` are updated in place."""
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient passed to optimizer")
    b1, b2 = betas
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    def __init__(self, params, lr=1e-2, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            grad = np.zeros_like(p.data) if p.grad is None else p.grad
            p.data = adam_step(p.data, grad, m, v, self.t, self.lr, self.betas, self.eps)
