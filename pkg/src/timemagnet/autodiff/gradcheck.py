"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor


class GradCheckError(AssertionError):
    def __init__(self, msg: str, index=None, error: float = float("nan")):
        super().__init__(msg)
        self.index = index
        self.error = error


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(numeric))


def _coords(shape, max_coords, rng):
    n = int(np.prod(shape))
    if max_coords is None or n <= max_coords:
        return range(n)
    rng = rng or np.random.default_rng(0)
    return sorted(rng.choice(n, size=max_coords, replace=False).tolist())


def grad_check_params(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    tol: Optional[float] = None,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Compare analytic gradients of ``f()`` w.r.t. ``params`` with central differences.

    Returns the max relative error ``|a - n| / max(1, |n|)`` over the checked
    coordinates. With ``tol`` set, raises :class:`GradCheckError` naming the
    worst coordinate as ``(param_index, flat_index)``.
    """
    params = list(params)
    saved = [p.grad for p in params]
    flags = [p.requires_grad for p in params]
    for p in params:
        p.grad = None
        p.requires_grad = True
    try:
        with Tape() as tape:
            loss = f()
        tape.backward(loss, params=params)
        analytic = [p.grad.copy() for p in params]
        worst, worst_at = 0.0, None
        for pi, p in enumerate(params):
            flat = p.data.reshape(-1)
            for i in _coords(p.shape, max_coords, rng):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f().data)
                flat[i] = orig - h
                fm = float(f().data)
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                err = _rel_err(float(analytic[pi].reshape(-1)[i]), num)
                if err > worst:
                    worst, worst_at = err, (pi, i)
    finally:
        for p, g, fl in zip(params, saved, flags):
            p.grad = g
            p.requires_grad = fl
    if tol is not None and worst > tol:
        raise GradCheckError(f"gradient mismatch {worst:.3e} > {tol:.1e} at coordinate {worst_at}",
                             index=worst_at, error=worst)
    return worst


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5, tol: Optional[float] = None,
               max_coords: Optional[int] = None, rng=None) -> float:
    """Single-input form: ``f`` maps ``x`` to a scalar tensor."""
    try:
        return grad_check_params(lambda: f(x), [x], h=h, tol=tol, max_coords=max_coords, rng=rng)
    except GradCheckError as e:
        idx = e.index[1] if e.index else None
        raise GradCheckError(f"gradient mismatch {e.error:.3e} > {tol:.1e} at index {idx}",
                             index=idx, error=e.error) from None
