"""Central finite-difference gradient checking against the autodiff engine."""

import numpy as np

from weakseg.tensorcore import Tensor, backward


def _eval(build, arrays):
    out = build(*[Tensor(a) for a in arrays])
    return float(out.data)


def max_relative_grad_error(build, arrays, h=1e-5, max_coords_per_arg=None, rng=None):
    """build(*tensors) -> scalar Tensor; returns worst relative error over
    checked coordinates. Coordinates may be subsampled for large args."""
    tensors = [Tensor(a.copy()) for a in arrays]
    loss = build(*tensors)
    backward(loss)
    worst = 0.0
    for arg, base in enumerate(arrays):
        grad = tensors[arg].grad
        if grad is None:
            grad = np.zeros_like(base)
        n = base.size
        coords = range(n)
        if max_coords_per_arg is not None and n > max_coords_per_arg:
            coords = (rng or np.random.default_rng(0)).choice(n, size=max_coords_per_arg, replace=False)
        for idx in coords:
            plus = [a.copy() for a in arrays]
            plus[arg].reshape(-1)[idx] += h
            minus = [a.copy() for a in arrays]
            minus[arg].reshape(-1)[idx] -= h
            fd = (_eval(build, plus) - _eval(build, minus)) / (2.0 * h)
            a = grad.reshape(-1)[idx]
            err = abs(a - fd) / max(1.0, abs(a), abs(fd))
            worst = max(worst, err)
    return worst
