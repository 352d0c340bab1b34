"""Central-difference gradient checks shared by the test modules."""

import numpy as np

from aclae_dt import autodiff as ad


def max_rel_error(build, arrays, eps=1e-6, probes=None, seed=0):
    """Worst relative error between autodiff and central differences.

    ``build(*tensors)`` must return a scalar tensor. With ``probes`` only that
    many random coordinates per input are checked.
    """
    rng = np.random.default_rng(seed)
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    build(*tensors).backward()
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        idx = None
        if probes is not None and t.data.size > probes:
            idx = rng.choice(t.data.size, size=probes, replace=False)

        def f():
            with ad.no_grad():
                return float(build(*[ad.Tensor(s.data) for s in tensors]).data)

        numeric = ad.numerical_grad(f, t.data, eps=eps, indices=idx)
        flat_a, flat_n = analytic.reshape(-1), numeric.reshape(-1)
        sel = np.arange(flat_a.size) if idx is None else idx
        a, n = flat_a[sel], flat_n[sel]
        scale = np.maximum(np.abs(a) + np.abs(n), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - n) / scale)))
    return worst
