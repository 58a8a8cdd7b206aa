"""Resilient backpropagation (iRprop-) over a dict of parameter arrays.

Each scalar parameter keeps its own step size.  Steps grow by eta_plus while
the gradient sign is stable and shrink by eta_minus on a sign flip; on a
flip the gradient is zeroed for one round so no step is taken against the
fresh direction.  Only gradient signs matter, which makes the optimizer
insensitive to loss scaling.
"""

from __future__ import annotations

import numpy as np


class Rprop:
    def __init__(
        self,
        params: dict[str, np.ndarray],
        step_init: float = 1e-3,
        eta_plus: float = 1.2,
        eta_minus: float = 0.5,
        step_min: float = 1e-6,
        step_max: float = 1.0,
    ):
        self.step_min = step_min
        self.step_max = step_max
        self.eta_plus = eta_plus
        self.eta_minus = eta_minus
        self._steps = {k: np.full_like(v, step_init) for k, v in params.items()}
        self._prev = {k: np.zeros_like(v) for k, v in params.items()}

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """One in-place step on every parameter array."""
        for key, p in params.items():
            g = grads[key]
            step = self._steps[key]
            prod = g * self._prev[key]
            np.minimum(np.where(prod > 0, step * self.eta_plus, step), self.step_max, out=step)
            np.maximum(np.where(prod < 0, step * self.eta_minus, step), self.step_min, out=step)
            g_eff = np.where(prod < 0, 0.0, g)
            p -= np.sign(g_eff) * step
            self._prev[key] = g_eff

    def max_step(self) -> float:
        return max(float(s.max()) for s in self._steps.values())

    def at_floor(self) -> bool:
        return self.max_step() <= self.step_min
