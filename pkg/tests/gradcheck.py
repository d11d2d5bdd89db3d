"""Central finite-difference gradient checking for custom layers."""

from __future__ import annotations

import torch


def central_difference_gradient(fn, tensor: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Numerical d(fn)/d(tensor) by central differences, element by element.

    ``fn`` must recompute the scalar loss from current tensor contents on
    every call; ``tensor`` is mutated in place and restored.
    """
    grad = torch.zeros_like(tensor)
    flat, gflat = tensor.data.reshape(-1), grad.reshape(-1)
    for i in range(flat.numel()):
        original = flat[i].item()
        flat[i] = original + eps
        hi = fn().item()
        flat[i] = original - eps
        lo = fn().item()
        flat[i] = original
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def max_relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    scale = torch.maximum(analytic.abs(), numeric.abs()).clamp_min(1e-3)
    return float(((analytic - numeric).abs() / scale).max())


def check_gradients(make_loss, tensors: list[torch.Tensor], tol: float = 1e-4) -> float:
    """Compare autograd gradients of ``make_loss()`` against finite
    differences over every tensor; returns the worst relative error.

    All tensors must be float64 leaves with requires_grad set.
    """
    for t in tensors:
        assert t.dtype == torch.float64, "finite differences need double precision"
        if t.grad is not None:
            t.grad = None
    loss = make_loss()
    loss.backward()
    worst = 0.0
    with torch.no_grad():
        for t in tensors:
            numeric = central_difference_gradient(make_loss, t)
            analytic = t.grad if t.grad is not None else torch.zeros_like(t)
            worst = max(worst, max_relative_error(analytic, numeric))
    assert worst <= tol, f"gradient mismatch: max rel err {worst:.3e} > {tol}"
    return worst
