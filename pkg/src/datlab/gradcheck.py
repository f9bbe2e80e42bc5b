"""Finite-difference gradient checking.

The oracle is a central difference evaluated in float64: the caller
provides a closure that re-runs the forward pass to a scalar, plus the
tensors whose gradients should be verified.  Relative error uses an
absolute floor so near-zero gradient pairs do not blow up the ratio.
"""

from __future__ import annotations

import numpy as np

from .rng import Rng
from .tensor import Tensor


def finite_difference(f, tensor: Tensor, index: tuple, h: float = 1e-3) -> float:
    flat = tensor.data.reshape(-1)
    orig = flat[index]
    flat[index] = orig + h
    up = float(f())
    flat[index] = orig - h
    down = float(f())
    flat[index] = orig
    return (up - down) / (2.0 * h)


def relative_error(a: float, b: float, floor: float = 1e-3) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(f, tensors: dict[str, Tensor], h: float = 1e-3,
                    rtol: float = 1e-3, max_coords: int | None = None,
                    rng: Rng | None = None):
    """Compare autograd gradients of ``f()`` against central differences.

    ``f`` must rebuild the graph from the given (float64) tensors each
    call and return the scalar loss Tensor.  When ``max_coords`` is set,
    a random subset of coordinates per tensor is probed instead of all of
    them.  Returns the worst (relative_error, tensor_name, index) triple.
    """
    for name, t in tensors.items():
        if t.data.dtype != np.float64:
            raise ValueError(f"gradcheck requires float64 tensors, {name} is {t.data.dtype}")
        t.zero_grad()
    loss = f()
    loss.backward()
    grads = {}
    for name, t in tensors.items():
        if t.grad is None:
            raise AssertionError(f"no gradient reached tensor {name!r}")
        grads[name] = t.grad.reshape(-1).copy()

    rng = rng or Rng(0)
    worst = (0.0, "", -1)
    for name, t in tensors.items():
        size = t.data.size
        if max_coords is None or size <= max_coords:
            coords = range(size)
        else:
            coords = sorted({rng.randint(size) for _ in range(max_coords)})
        for idx in coords:
            fd = finite_difference(lambda: f().data, t, idx, h)
            err = relative_error(grads[name][idx], fd)
            if err > worst[0]:
                worst = (err, name, idx)
    if worst[0] > rtol:
        raise AssertionError(
            f"gradient mismatch on {worst[1]}[{worst[2]}]: relative error {worst[0]:.3e} > {rtol}"
        )
    return worst
