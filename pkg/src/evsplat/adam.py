"""Small Adam optimizer over named parameter groups.

Plain arrays are updated in place via `step`; pose slots live on the SE(3)
manifold, so callers fetch the raw update with `updates` and retract it
(pose * exp(-u)), renormalizing quaternions afterwards.
"""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, lrs, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lrs = dict(lrs)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = {}

    def _update(self, name, grad):
        g = np.asarray(grad, dtype=np.float64)
        if name not in self.m:
            self.m[name] = np.zeros_like(g)
            self.v[name] = np.zeros_like(g)
            self.t[name] = 0
        self.t[name] += 1
        t = self.t[name]
        self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
        self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
        m_hat = self.m[name] / (1.0 - self.beta1 ** t)
        v_hat = self.v[name] / (1.0 - self.beta2 ** t)
        return self.lrs[name] * m_hat / (np.sqrt(v_hat) + self.eps)

    def updates(self, grads):
        """Bias-corrected, lr-scaled step per group (to be subtracted)."""
        return {name: self._update(name, g) for name, g in grads.items()}

    def step(self, params, grads):
        """In-place descent step on plain array parameters."""
        for name, g in grads.items():
            params[name] -= self._update(name, g)
