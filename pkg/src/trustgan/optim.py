"""Adam optimizer over :class:`~trustgan.tensor.Parameter` lists."""

import numpy as np

from .errors import ContractError, ConfigError


class Adam:
    """Bias-corrected adaptive moment estimation.

    The state (step counter plus first and second moment buffers) lives on
    the instance and is fully deterministic: two optimizers constructed from
    identical parameters and fed identical gradients stay bit-identical.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not all(0.0 < b < 1.0 for b in betas):
            raise ConfigError(f"moment decays must lie in (0, 1), got {betas}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def step(self):
        for p, m in zip(self.params, self.m):
            if p.grad is not None and p.grad.shape != m.shape:
                raise ContractError(
                    f"gradient shape {p.grad.shape} does not match moment buffer {m.shape}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        return {
            "step": self.step_count,
            "m": [a.copy() for a in self.m],
            "v": [a.copy() for a in self.v],
        }
