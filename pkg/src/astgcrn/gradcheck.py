"""Central finite-difference check of analytic gradients."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, OracleError
from .tensor import backward, no_grad


@dataclass
class ParamCheck:
    name: str
    checked: int
    max_rel_error: float
    max_abs_error: float
    failures: list = field(default_factory=list)  # flat indices above rtol

    @property
    def passed(self):
        return not self.failures


@dataclass
class GradCheckReport:
    rtol: float
    step: float
    params: list

    @property
    def passed(self):
        return all(p.passed for p in self.params)

    @property
    def max_rel_error(self):
        return max((p.max_rel_error for p in self.params), default=0.0)

    def summary(self):
        lines = [f"{'parameter':40s} {'checked':>8s} {'max rel err':>12s}  status"]
        for p in self.params:
            status = "ok" if p.passed else f"FAIL ({len(p.failures)})"
            lines.append(f"{p.name:40s} {p.checked:8d} {p.max_rel_error:12.3e}  {status}")
        return "\n".join(lines)


def _scalar(loss_fn):
    with no_grad():
        return float(loss_fn().data)


def finite_diff_check(loss_fn, params, step=1e-5, rtol=1e-4, abs_floor=1e-6, max_entries=None, seed=0):
    """Compare backward() against (f(x+h) - f(x-h)) / 2h for every parameter entry.

    The relative error of an entry is |a - n| / max(|a|, |n|, abs_floor), so
    entries whose true gradient is near zero are judged on absolute error.
    ``max_entries`` caps the entries checked per parameter (seeded sample).
    Parameter gradients are left holding the analytic values.
    """
    if not step > 0:
        raise ConfigurationError(f"finite-difference step must be > 0, got {step}")
    first, second = _scalar(loss_fn), _scalar(loss_fn)
    if first != second:
        raise OracleError(f"loss is not deterministic: {first!r} != {second!r}")

    for p in params:
        p.zero_grad()
    backward(loss_fn())
    analytic = [p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    results = []
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        entries = np.arange(n)
        if max_entries is not None and n > max_entries:
            entries = np.sort(rng.choice(n, size=max_entries, replace=False))
        worst_rel = worst_abs = 0.0
        fails = []
        gflat = ga.reshape(-1)
        for i in entries:
            orig = flat[i]
            flat[i] = orig + step
            fp = _scalar(loss_fn)
            flat[i] = orig - step
            fm = _scalar(loss_fn)
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            a = gflat[i]
            err = abs(a - num)
            rel = err / max(abs(a), abs(num), abs_floor)
            worst_rel = max(worst_rel, rel)
            worst_abs = max(worst_abs, err)
            if rel > rtol:
                fails.append(int(i))
        results.append(ParamCheck(p.name, len(entries), worst_rel, worst_abs, fails))
    return GradCheckReport(rtol=rtol, step=step, params=results)
