"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import ParamSet, Tensor


class GradCheckError(RuntimeError):
    """Raised when a probe evaluation produces a non-finite value."""


def grad_check(
    f: Callable[[ParamSet], Tensor],
    params: ParamSet,
    eps: float = 1e-5,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` must be a deterministic scalar-valued function of ``params``. Every
    element of every trainable parameter is perturbed by +/- eps; the relative
    error for one element is |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
    Parameters that ``f`` never touches must come back with exactly zero
    gradient, which the central difference confirms for free.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    params.zero_grads()
    out = f(params)
    if not np.isfinite(out.data).all():
        raise GradCheckError("f(params) is not finite at the base point")
    out.backward()
    analytic = {name: t.grad_or_zeros().copy() for name, t in params.trainable_items()}

    max_rel = 0.0
    for name, t in params.trainable_items():
        flat = t.data.reshape(-1)
        g_ad = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f(params).data)
            flat[i] = orig - eps
            f_minus = float(f(params).data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradCheckError(f"f not finite when perturbing {name}[{i}]")
            g_fd = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(g_ad[i]), abs(g_fd), 1e-8)
            rel = abs(g_ad[i] - g_fd) / denom
            if rel > max_rel:
                max_rel = rel
    return max_rel
