"""Central finite-difference gradient checking.

The checker perturbs every element of every leaf input of a scalar-valued
function and compares the two-sided difference quotient against the
analytic gradient from the backward pass. Meant to run in float64; float32
round-off swamps the h^2 truncation term.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor


def fd_gradient(fn: Callable[..., Tensor], tensors: Sequence[Tensor], index: int,
                h: float = 1e-5) -> np.ndarray:
    """Two-sided difference quotient of fn w.r.t. tensors[index], elementwise."""
    target = tensors[index]
    grad = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(*tensors).item()
        flat[i] = orig - h
        lo = fn(*tensors).item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def sampled_rel_error(fn: Callable[[], Tensor], params: Sequence[Tensor],
                      n_elements: int, rng: np.random.Generator,
                      h: float = 1e-5, floor: float = 1e-6) -> float:
    """FD check on randomly chosen scalar elements across a parameter set.

    fn takes no arguments and rebuilds the loss from current parameter
    values; used for whole-model checks where perturbing every element
    would be prohibitive.
    """
    for p in params:
        p.zero_grad()
    loss = fn()
    loss.backward()
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_elements, total), replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    for pick in picks:
        idx = int(np.searchsorted(bounds, pick, side="right"))
        offset = int(pick - (bounds[idx - 1] if idx else 0))
        p = params[idx]
        flat = p.data.reshape(-1)
        orig = flat[offset]
        flat[offset] = orig + h
        hi = fn().item()
        flat[offset] = orig - h
        lo = fn().item()
        flat[offset] = orig
        numeric = (hi - lo) / (2.0 * h)
        analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[offset])
        denom = max(abs(analytic), abs(numeric), floor)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def max_rel_error(fn: Callable[..., Tensor], tensors: Sequence[Tensor],
                  h: float = 1e-5, floor: float = 1e-6) -> float:
    """Worst relative disagreement between analytic and FD gradients.

    Checked for every tensor with requires_grad set. The denominator is
    floored so that exactly-zero gradients on both sides compare clean.
    """
    for t in tensors:
        t.zero_grad()
    loss = fn(*tensors)
    loss.backward()
    worst = 0.0
    for idx, t in enumerate(tensors):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = fd_gradient(fn, tensors, idx, h=h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        rel = np.abs(analytic - numeric) / denom
        worst = max(worst, float(rel.max()))
    return worst
