"""Adam optimizer over plain parameter tensors."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, NumericError
from .tensor import Tensor


class Adam:
    """Adam with bias correction.

    Holds first/second moment buffers per parameter, keyed by position in the
    parameter list, so stepping is deterministic given a fixed parameter
    order.  Update for each parameter with gradient g:

        m <- b1*m + (1-b1)*g          v <- b2*v + (1-b2)*g*g
        p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)

    A zero gradient therefore leaves the parameter untouched, and a missing
    gradient is a caller bug, reported as ContractError.
    """

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Tensor] = list(params)
        if not self.params:
            raise ContractError("Adam needs at least one parameter")
        if not (0.0 <= lr):
            raise ContractError(f"lr must be non-negative, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ContractError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        # float64 moments keep the update math stable regardless of the
        # parameter dtype.
        self._m = [np.zeros(p.data.shape, dtype=np.float64) for p in self.params]
        self._v = [np.zeros(p.data.shape, dtype=np.float64) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError(f"parameter {i} has no gradient; run backward first")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad.astype(np.float64)
            m = self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            v = self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)
            if not np.isfinite(p.data).all():
                raise NumericError(f"parameter {i} became non-finite after Adam step {self.t}")
