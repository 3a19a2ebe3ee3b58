"""Central finite differences against the reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Tensor, backward


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-6,
                 indices: Optional[np.ndarray] = None) -> np.ndarray:
    """``(f(x + h e_i) - f(x - h e_i)) / 2h``, perturbing ``x`` in place.

    Without ``indices`` the full gradient is returned; otherwise only the
    listed flat positions, in that order.
    """
    flat = x.reshape(-1)
    idx = np.arange(flat.size) if indices is None else np.asarray(indices)
    out = np.zeros(idx.size)
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        hi = f()
        flat[i] = old - h
        lo = f()
        flat[i] = old
        out[k] = (hi - lo) / (2.0 * h)
    return out.reshape(x.shape) if indices is None else out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)``."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                    h: float = 1e-6, samples: Optional[int] = None, seed: int = 0) -> list[float]:
    """Relative error of the analytic gradient of each parameter.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    every call. With ``samples`` only that many seeded entries per tensor are
    differenced, for tensors too large to sweep.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    errors = []
    for p, a in zip(params, analytic):
        if samples is None or samples >= p.size:
            n = numeric_grad(lambda: loss_fn().item(), p.data, h)
        else:
            idx = rng.choice(p.size, size=samples, replace=False)
            n, a = numeric_grad(lambda: loss_fn().item(), p.data, h, idx), a.reshape(-1)[idx]
        errors.append(relative_error(a, n))
    return errors
