"""Minimal first-order optimizers over named numpy parameters."""

import numpy as np


class Adam:
    """Adam with a per-parameter learning-rate array (broadcastable to the parameter)."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-15):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = {}

    def step(self, name, param, grad, lr=None):
        """Update ``param`` in place and return the applied delta."""
        lr = self.lr if lr is None else lr
        if name not in self.m:
            self.m[name] = np.zeros_like(param)
            self.v[name] = np.zeros_like(param)
            self.t[name] = 0
        self.t[name] += 1
        t = self.t[name]
        m = self.m[name]
        v = self.v[name]
        m *= self.beta1
        m += (1 - self.beta1) * grad
        v *= self.beta2
        v += (1 - self.beta2) * grad * grad
        m_hat = m / (1 - self.beta1 ** t)
        v_hat = v / (1 - self.beta2 ** t)
        delta = -lr * m_hat / (np.sqrt(v_hat) + self.eps)
        param += delta
        return delta


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, name, param, grad, lr=None):
        lr = self.lr if lr is None else lr
        delta = -lr * grad
        param += delta
        return delta


def sh_learning_rates(n_coeffs, dc_lr, rest_divisor=20.0):
    """Per-coefficient rates for an ``(N, K, 3)`` SH block: DC at ``dc_lr``, the rest divided."""
    lr = np.full((1, n_coeffs, 1), dc_lr / rest_divisor)
    lr[0, 0, 0] = dc_lr
    return lr
