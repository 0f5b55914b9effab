"""Adam optimizer with stepped learning-rate decay.

The effective learning rate is ``base_lr * decay_factor ** (step //
decay_interval)`` with 1-based steps, i.e. the rate drops by the decay factor
every ``decay_interval`` iterations (defaults: 1e-4 decayed by 0.9 every
10000 steps).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteGradientError(ValueError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


@dataclass(frozen=True)
class AdamConfig:
    base_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_factor: float = 0.9
    decay_interval: int = 10_000


class Adam:
    """Standard Adam with bias correction; updates parameters in place."""

    def __init__(self, params: dict[str, np.ndarray], cfg: AdamConfig = AdamConfig()):
        self.cfg = cfg
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def lr_at(self, step: int) -> float:
        return self.cfg.base_lr * self.cfg.decay_factor ** (step // self.cfg.decay_interval)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> float:
        """Apply one update; returns the learning rate used."""
        self.step_count += 1
        t = self.step_count
        lr = self.lr_at(t)
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        bias1 = 1.0 - b1 ** t
        bias2 = 1.0 - b2 ** t
        for name, param in params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + eps)
            param -= (lr * update).astype(param.dtype, copy=False)
        return lr

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment accumulators under stable names, for checkpointing."""
        out = {}
        for name, arr in self.m.items():
            out[f"m.{name}"] = arr
        for name, arr in self.v.items():
            out[f"v.{name}"] = arr
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.m:
            self.m[name] = arrays[f"m.{name}"].copy()
            self.v[name] = arrays[f"v.{name}"].copy()
        self.step_count = step_count
