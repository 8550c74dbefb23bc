"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dtam.errors import NumericError
from dtam.numcore.tensor import Tensor


@dataclass
class GradCheckReport:
    """Outcome of comparing autodiff gradients with central differences."""

    max_rel_error: float
    tolerance: float
    passed: bool
    checked: int
    worst_param: str = ""
    worst_index: int = -1
    per_param: dict = field(default_factory=dict)


def grad_check(fn, params: dict, tolerance: float = 1e-5,
               step: float | None = None) -> GradCheckReport:
    """Compare d fn / d params against central finite differences.

    ``fn`` maps nothing to a scalar ``Tensor`` and must read the live arrays
    inside ``params`` (name -> Tensor with requires_grad). Every coordinate of
    every parameter is perturbed, so keep the parameter count small.

    The relative error uses a unit floor, rel = |ad - fd| / max(|ad|, |fd|, 1),
    which treats tiny absolute discrepancies on tiny gradients as passing.
    """
    for t in params.values():
        t.zero_grad()
    out = fn()
    if out.size != 1:
        raise NumericError("grad_check target must be scalar")
    out.backward()
    analytic = {}
    for name, t in params.items():
        analytic[name] = (np.zeros_like(t.data) if t.grad is None
                          else np.array(t.grad, copy=True))

    eps = float(np.finfo(np.float64).eps)
    base_h = step if step is not None else eps ** (1.0 / 3.0)

    max_rel = 0.0
    worst_param = ""
    worst_index = -1
    checked = 0
    per_param = {}
    for name, t in params.items():
        flat = t.data.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        local_max = 0.0
        for i in range(flat.size):
            orig = flat[i]
            h = base_h * max(1.0, abs(orig))
            flat[i] = orig + h
            f_plus = fn().item()
            flat[i] = orig - h
            f_minus = fn().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(
                    f"non-finite objective while perturbing {name}[{i}]"
                )
            fd = (f_plus - f_minus) / (2.0 * h)
            ad = grad_flat[i]
            rel = abs(ad - fd) / max(abs(ad), abs(fd), 1.0)
            checked += 1
            if rel > local_max:
                local_max = rel
            if rel > max_rel:
                max_rel = rel
                worst_param = name
                worst_index = i
        per_param[name] = local_max
    return GradCheckReport(
        max_rel_error=max_rel,
        tolerance=tolerance,
        passed=max_rel <= tolerance,
        checked=checked,
        worst_param=worst_param,
        worst_index=worst_index,
        per_param=per_param,
    )
