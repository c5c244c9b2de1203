"""Finite-difference verification of analytic gradients.

``gradcheck`` perturbs every parameter element by +/-eps, forms the central
difference of the loss, and compares against the gradient from backward().
The reported error is |analytic - numeric| / max(|analytic|, |numeric|, 1),
i.e. relative for O(1)-or-larger gradients and absolute below that.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradcheckReport:
    eps: float
    tolerance: float
    per_param: dict = field(default_factory=dict)
    max_rel_error: float = 0.0
    passed: bool = True

    def as_dict(self):
        return {
            "eps": self.eps,
            "tolerance": self.tolerance,
            "max_rel_error": self.max_rel_error,
            "passed": self.passed,
            "per_param": dict(self.per_param),
        }


def gradcheck(loss_fn, params, eps=1e-5, tol=1e-4):
    """Compare backward() gradients of loss_fn against central differences.

    loss_fn: nullary callable returning a scalar Tensor; must be
    deterministic. params: dict name -> Tensor (float64 strongly advised;
    float32 drowns the differences in rounding noise).
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    report = GradcheckReport(eps=eps, tolerance=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            if err > worst:
                worst = err
        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    report.passed = report.max_rel_error < tol
    return report
