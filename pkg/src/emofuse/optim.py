"""AdamW with decoupled weight decay.

Weight decay is applied directly to the parameter (p -= lr * wd * p) before
the bias-corrected Adam update; it never enters the moment estimates.
"""

from __future__ import annotations

import numpy as np

from emofuse.autodiff import ShapeError


class AdamW:
    def __init__(self, params, lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.01):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = [np.zeros(p.data.shape, dtype=np.float32) for p in self.params]
        self.v = [np.zeros(p.data.shape, dtype=np.float32) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                g = np.zeros(p.data.shape, dtype=np.float32)
            elif g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape} ({p.name})")
            g = g.astype(np.float32, copy=False)
            if self.weight_decay != 0.0:
                p.data -= np.float32(self.lr * self.weight_decay) * p.data
            m[...] = np.float32(self.beta1) * m + np.float32(1.0 - self.beta1) * g
            v[...] = np.float32(self.beta2) * v + np.float32(1.0 - self.beta2) * (g * g)
            m_hat = m / np.float32(bc1)
            v_hat = v / np.float32(bc2)
            p.data -= np.float32(self.lr) * m_hat / (np.sqrt(v_hat) + np.float32(self.eps))

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [x.copy() for x in self.m], "v": [x.copy() for x in self.v]}

    def load_state_dict(self, state: dict):
        self.t = int(state["t"])
        if len(state["m"]) != len(self.params):
            raise ShapeError("optimizer state does not match parameter list")
        for i, (m, v) in enumerate(zip(state["m"], state["v"])):
            if m.shape != self.params[i].data.shape:
                raise ShapeError(f"moment shape {m.shape} != parameter shape {self.params[i].data.shape}")
            self.m[i][...] = m
            self.v[i][...] = v
