"""Central-difference gradient checking."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list = field(default_factory=list)
    worst: tuple = None
    checked: int = 0
    tol: float = None

    @property
    def ok(self):
        return self.tol is None or self.max_rel_error <= self.tol


def rel_error(analytic, numeric, floor=1e-6):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(fn, inputs, index, eps=1e-5):
    """Central differences of scalar ``fn(*inputs)`` w.r.t. ``inputs[index]``."""
    x = inputs[index]
    grad = np.zeros(x.shape, dtype=np.float64)
    args = list(inputs)
    flat_grad = grad.reshape(-1)
    for k in range(x.size):
        plus = x.copy()
        plus.reshape(-1)[k] += eps
        args[index] = plus
        fp = fn(*args)
        minus = x.copy()
        minus.reshape(-1)[k] -= eps
        args[index] = minus
        fm = fn(*args)
        flat_grad[k] = (float(fp) - float(fm)) / (2.0 * eps)
    return grad


def grad_check(closure, inputs, eps=1e-5, tol=None, name="op", floor=1e-6):
    """Compare analytic and central-difference gradients.

    ``closure(*inputs)`` must return ``(loss, grads)`` where ``grads`` is a
    sequence aligned with ``inputs`` (``None`` entries are skipped).  The
    closure must be deterministic.  Raises :class:`NumericError` naming
    ``name`` if any loss or gradient is non-finite.
    """
    inputs = [np.asarray(x) for x in inputs]
    loss, grads = closure(*inputs)
    if not np.isfinite(loss):
        raise NumericError(f"{name}: non-finite loss {loss}")
    report = GradCheckReport(max_rel_error=0.0, tol=tol)

    def scalar(*args):
        value = closure(*args)[0]
        if not np.isfinite(value):
            raise NumericError(f"{name}: non-finite loss during finite differencing")
        return value

    for i, (x, g) in enumerate(zip(inputs, grads)):
        if g is None:
            report.per_input.append(None)
            continue
        g = np.asarray(g)
        if g.shape != x.shape:
            raise ValueError(f"{name}: gradient {i} has shape {g.shape}, input has {x.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"{name}: non-finite analytic gradient for input {i}")
        num = numeric_grad(scalar, inputs, i, eps)
        err = rel_error(g, num, floor)
        worst = float(err.max()) if err.size else 0.0
        report.per_input.append(worst)
        report.checked += err.size
        if worst > report.max_rel_error:
            report.max_rel_error = worst
            report.worst = (i, np.unravel_index(int(err.argmax()), err.shape))
    return report
