"""Adam with an exponentially decaying learning rate over a flat parameter vector."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamResult:
    theta: np.ndarray
    loss: float
    steps: int
    diverged: bool = False
    trace: list = field(default_factory=list)


def run_adam(fun, theta, max_steps=20000, lr0=0.05, decay=0.999, tol=1e-10, check_every=250,
             project=None, backend=None, grad=None):
    """Minimize ``fun(theta, grad_out) -> loss`` starting from ``theta``.

    ``theta`` (float64, contiguous) is updated in place; the best iterate
    seen is returned as a copy.  Stops early when the best loss improves
    by less than ``tol * max(1, best)`` over ``check_every`` steps.
    ``project(theta)`` runs in place after every update.  Pass ``grad`` when
    ``fun`` is bound to a preallocated gradient buffer.
    """
    kern = kernels.get(backend)
    if theta.dtype != np.float64 or not theta.flags.c_contiguous:
        raise TypeError("theta must be a contiguous float64 array")
    grad = np.zeros_like(theta) if grad is None else grad
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    best = math.inf
    best_theta = theta.copy()
    last = math.inf
    trace = []
    lr = lr0
    step = 0
    for step in range(1, max_steps + 1):
        loss = fun(theta, grad)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            return AdamResult(best_theta, best, step, diverged=True, trace=trace)
        if loss < best:
            best = loss
            best_theta[:] = theta
        kern.adam_update(theta, grad, m, v, lr, BETA1, BETA2, EPS, step)
        if project is not None:
            project(theta)
        lr *= decay
        if step % check_every == 0:
            trace.append((step, best))
            if last - best <= tol * max(1.0, best):
                break
            last = best
    loss = fun(theta, grad)
    if math.isfinite(loss) and loss < best:
        best = loss
        best_theta[:] = theta
    return AdamResult(best_theta, best, step, trace=trace)
