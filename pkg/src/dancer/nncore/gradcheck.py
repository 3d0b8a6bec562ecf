"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def failures(self) -> list[str]:
        return [k for k, e in self.max_rel_error.items() if not e < self.tolerance]

    def __str__(self):
        lines = [f"{'PASS' if e < self.tolerance else 'FAIL'} {k}: {e:.3e}" for k, e in self.max_rel_error.items()]
        return "\n".join(lines)


def gradient_check(model_fn, params, tolerance=1e-4, h=1e-4, floor=1e-6) -> GradCheckReport:
    """Compare backprop gradients of ``model_fn()`` with central differences.

    ``model_fn`` rebuilds the scalar loss from the current parameter values
    on every call. Per entry the error is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` keeps entries whose true gradient is ~0 from being judged on
    pure rounding noise.
    """
    params = list(params)
    ag.zero_grad(params)
    ag.backward(model_fn())
    analytic = {p.name: p.grad.copy() for p in params}
    ag.zero_grad(params)

    report = GradCheckReport(tolerance)
    with ag.no_grad():
        for p in params:
            numeric = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = float(model_fn().data)
                flat[i] = orig - h
                down = float(model_fn().data)
                flat[i] = orig
                numeric.reshape(-1)[i] = (up - down) / (2 * h)
            a = analytic[p.name]
            denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
            report.max_rel_error[p.name] = float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
    return report
