"""Deterministic Adam over the network's parameter arrays."""

from __future__ import annotations

import numpy as np

from .network import NetworkParams


class Adam:
    """Standard bias-corrected Adam; updates arrays in declaration order."""

    def __init__(
        self,
        params: NetworkParams,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.t = 0
        self.m = params.zeros_like()
        self.v = params.zeros_like()

    def step(self, grads: NetworkParams) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for (_, p), (_, g), (_, m), (_, v) in zip(
            self.params.named_arrays(),
            grads.named_arrays(),
            self.m.named_arrays(),
            self.v.named_arrays(),
        ):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            m_hat = m / correction1
            v_hat = v / correction2
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> tuple[NetworkParams, NetworkParams]:
        return self.m, self.v

    def load_state(self, m: NetworkParams, v: NetworkParams, t: int) -> None:
        self.m = m
        self.v = v
        self.t = int(t)
