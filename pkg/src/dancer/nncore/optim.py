from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import OptimizationError


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def state_arrays(self, prefix="adam") -> dict:
        out = {}
        for name in self.m:
            out[f"{prefix}.m.{name}"] = self.m[name]
            out[f"{prefix}.v.{name}"] = self.v[name]
        return out

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "step": self.step}

    @classmethod
    def restore(cls, hyper: dict, tensors: dict, prefix="adam") -> "AdamState":
        state = cls(**hyper)
        for key, value in tensors.items():
            if key.startswith(f"{prefix}.m."):
                state.m[key[len(prefix) + 3:]] = value.copy()
            elif key.startswith(f"{prefix}.v."):
                state.v[key[len(prefix) + 3:]] = value.copy()
        return state


def adam_step(state: AdamState, params) -> None:
    """Bias-corrected Adam update in place, then zero every gradient.

    All gradients are validated before any parameter is touched.
    """
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise OptimizationError(f"non-finite gradient in parameter {p.name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p in params:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        g[...] = 0.0
