"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_input: int
    worst_index: tuple
    analytic: float
    numeric: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= self.tol

    def __str__(self):
        status = "ok" if self.ok else "FAIL"
        return (
            f"{status}: max rel err {self.max_rel_error:.2e} (tol {self.tol:.0e}) at input "
            f"{self.worst_input} index {self.worst_index}: analytic {self.analytic:.6e}, "
            f"numeric {self.numeric:.6e}"
        )


def grad_check(
    f, inputs, h: float = 1e-5, tol: float = 1e-4, abs_floor: float = 1e-6,
    max_per_input: int | None = None, seed: int = 0,
) -> GradCheckReport:
    """Compare autograd gradients of scalar ``f(*inputs)`` with central differences.

    Relative error per element is |a - n| / max(|a|, |n|, floor) with
    floor = abs_floor * max(1, |f|): central-difference round-off grows with
    the function value, and the floor keeps exact-zero gradients (e.g. a key
    bias under softmax) from turning that noise into huge ratios.
    Inputs should be float64 tensors; ``requires_grad`` is switched on. With
    ``max_per_input`` only that many randomly chosen elements of each input
    are probed.
    """
    rng = np.random.default_rng(seed)
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    for x in inputs:
        x.requires_grad = True
        x.grad = None
        if not x.data.flags.c_contiguous:
            x.data = np.ascontiguousarray(x.data)
        if not np.all(np.isfinite(x.data)):
            raise ValueError("grad_check inputs must be finite")
    out = f(*inputs)
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    out.backward()
    floor = abs_floor * max(1.0, abs(float(out.data)))
    worst = GradCheckReport(0.0, -1, (), 0.0, 0.0, tol)
    for k, x in enumerate(inputs):
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        flat = x.data.reshape(-1)
        probe = range(flat.size)
        if max_per_input is not None and flat.size > max_per_input:
            probe = np.sort(rng.choice(flat.size, max_per_input, replace=False))
        for i in probe:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(*inputs).data)
            flat[i] = orig - h
            fm = float(f(*inputs).data)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - num) / max(abs(a), abs(num), floor)
            if err > worst.max_rel_error or worst.worst_input < 0:
                idx = np.unravel_index(i, x.shape) if x.shape else ()
                worst = GradCheckReport(err, k, tuple(int(j) for j in idx), a, num, tol)
    return worst
