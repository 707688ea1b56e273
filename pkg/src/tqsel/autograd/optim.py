"""Adam with bias correction."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, named_params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if isinstance(named_params, dict):
            named_params = list(named_params.items())
        self.params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

    def step(self) -> None:
        """Apply one update from the populated grads, then clear them.

        Raises FloatingPointError naming the parameter if any grad is non-finite.
        """
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                bad = int(np.size(p.grad) - np.isfinite(p.grad).sum())
                raise FloatingPointError(
                    f"non-finite gradient in {name!r} (shape {p.shape}, {bad} bad entries) at step {self.t + 1}"
                )
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for _, p in self.params:
            g = p.grad
            if g is None:
                continue
            p.m *= b1
            p.m += (1.0 - b1) * g
            p.v *= b2
            p.v += (1.0 - b2) * g * g
            update = self.lr * (p.m / c1) / (np.sqrt(p.v / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype, copy=False)
            p.grad = None

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8, state=None) -> Adam:
    """Single Adam update over ``params`` (a list or dict of Parameters).

    Pass the returned optimizer back as ``state`` to continue the step count.
    """
    if state is None:
        if isinstance(params, dict):
            named = list(params.items())
        else:
            named = [(str(i), p) for i, p in enumerate(params)]
        state = Adam(named, lr, beta1, beta2, eps)
    state.lr = lr
    state.step()
    return state
