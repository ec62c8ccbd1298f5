"""Central finite-difference verification of reverse-mode gradients."""
from dataclasses import dataclass, field

import numpy as np

from .engine import Graph, ShapeError, no_grad


@dataclass
class GradReport:
    errors: dict = field(default_factory=dict)     # parameter name -> max relative error
    checked: dict = field(default_factory=dict)    # parameter name -> entries checked

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    def worst(self):
        return max(self.errors.items(), key=lambda kv: kv[1], default=(None, 0.0))


def finite_difference_check(graph, inputs=None, eps=1e-5, max_entries=None, rng=None):
    """Compare ``graph``'s analytic gradients with central differences.

    ``graph`` is a :class:`Graph` whose output is a scalar.  Every parameter is
    perturbed entry by entry (or at ``max_entries`` random entries when given)
    and the relative error ``|g_ad - g_fd| / (|g_fd| + 1e-8)`` is maximized per
    parameter.
    """
    inputs = inputs or {}
    out = graph.forward(**inputs)
    if out.size != 1:
        raise ShapeError(f"finite-difference check needs a scalar output, got shape {out.shape}")
    analytic = graph.backward()
    rng = rng or np.random.default_rng(0)
    report = GradReport()

    def value():
        with no_grad():
            return float(graph.fn(**inputs).data.reshape(()))

    for name, p in graph.parameters.items():
        flat_idx = np.arange(p.size)
        if max_entries is not None and p.size > max_entries:
            flat_idx = rng.choice(p.size, size=max_entries, replace=False)
        worst = 0.0
        base = p.data
        for i in flat_idx:
            idx = np.unravel_index(i, p.shape)
            plus = base.copy()
            plus[idx] += eps
            minus = base.copy()
            minus[idx] -= eps
            p.data = plus
            fp = value()
            p.data = minus
            fm = value()
            p.data = base
            fd = (fp - fm) / (2.0 * eps)
            err = abs(analytic[name][idx] - fd) / (abs(fd) + 1e-8)
            worst = max(worst, err)
        report.errors[name] = worst
        report.checked[name] = len(flat_idx)
    return report


def check_function(fn, params, inputs=None, eps=1e-5, max_entries=None, rng=None):
    """Convenience wrapper building the :class:`Graph` from a callable and named tensors."""
    return finite_difference_check(Graph(fn, params), inputs, eps, max_entries, rng)
