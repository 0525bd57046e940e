"""Adam optimizer with bias correction.

Hyperparameter defaults follow the training setup used throughout the
toolkit: lr 0.001, beta1 0, beta2 0.99.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericError, Tensor


@dataclass
class AdamState:
    """First/second moment estimates plus step counts for one parameter set.

    ``t`` counts optimizer steps on the state as a whole; bias correction
    uses each parameter's own step count so parameters that join mid-run
    (progressive growth) start with properly scaled updates.
    """

    lr: float = 0.001
    beta1: float = 0.0
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)  # name -> ndarray
    v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)  # name -> int

    def ensure(self, name: str, shape, dtype):
        if name not in self.m:
            self.m[name] = np.zeros(shape, dtype=dtype)
            self.v[name] = np.zeros(shape, dtype=dtype)
            self.steps[name] = 0


def adam_step(params, grads, state: AdamState):
    """One in-place Adam update over named parameters.

    ``params`` is an iterable of (name, Tensor) and ``grads`` the matching
    gradient tensors. Raises :class:`NumericError` naming the parameter if
    a gradient is non-finite. Returns the mutated ``state``.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ValueError("params and grads must align one-to-one")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for (name, p), g in zip(params, grads):
        gd = g.data if isinstance(g, Tensor) else np.asarray(g)
        if gd.shape != p.data.shape:
            raise ValueError(
                f"gradient shape {gd.shape} does not match parameter "
                f"{name} of shape {p.data.shape}"
            )
        if not np.all(np.isfinite(gd)):
            raise NumericError(f"non-finite gradient for parameter {name}")
        state.ensure(name, p.data.shape, p.data.dtype)
        state.steps[name] += 1
        t = state.steps[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * gd
        v *= b2
        v += (1.0 - b2) * (gd * gd)
        step = (state.lr / (1.0 - b1**t)) * m / (np.sqrt(v / (1.0 - b2**t)) + state.eps)
        p.data = p.data - step.astype(p.data.dtype, copy=False)
    return state
