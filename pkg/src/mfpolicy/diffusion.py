"""Denoising-diffusion machinery over flattened hierarchical chunks.

The schedule exposes both the forward-noising coefficients and the
reverse-update triplet used by the sampler:

* forward:  noisy = sqrt(abar_k) * clean + sqrt(1 - abar_k) * eps
* reverse:  x_{k-1} = rev_scale_k * (x_k - eps_coef_k * eps_hat) + noise_std_k * z

with ``rev_scale_k = 1/sqrt(alpha_k)``, ``eps_coef_k = beta_k/sqrt(1-abar_k)``
and ``noise_std_k`` the posterior standard deviation, which vanishes at the
final step so the last update is deterministic.

Steps are indexed 1..K; index 0 of every coefficient array is the identity
boundary (abar_0 = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .temporal import HierarchicalChunk

DEFAULT_STEPS = 100
MAX_BETA = 0.999


def squared_cosine_betas(steps: int, offset: float = 0.008) -> np.ndarray:
    """Noise rates from the squared-cosine decay of the signal fraction."""
    k = np.arange(steps + 1, dtype=np.float64)
    signal = np.cos((k / steps + offset) / (1.0 + offset) * math.pi / 2.0) ** 2
    abar = signal / signal[0]
    betas = 1.0 - abar[1:] / abar[:-1]
    return np.clip(betas, 0.0, MAX_BETA)


@dataclass(frozen=True)
class DiffusionSchedule:
    """Step-indexed coefficient table; entry [k] belongs to step k in 1..K.

    ``rev_scale`` / ``eps_coef`` express the reverse update directly;
    ``clean_coef`` / ``state_coef`` are the same posterior mean written
    against the implied clean sample, which is the numerically stable form
    the sampler uses (the two are algebraically identical).
    """

    betas: np.ndarray  # (K+1,), betas[0] = 0 boundary
    alphas: np.ndarray
    alpha_bars: np.ndarray
    rev_scale: np.ndarray
    eps_coef: np.ndarray
    noise_std: np.ndarray
    clean_coef: np.ndarray
    state_coef: np.ndarray

    @property
    def num_steps(self) -> int:
        return len(self.betas) - 1

    def validate_step(self, k: int) -> None:
        if not 1 <= k <= self.num_steps:
            raise ValueError(f"step {k} outside [1, {self.num_steps}]")


def make_schedule(steps: int = DEFAULT_STEPS, betas: np.ndarray | None = None) -> DiffusionSchedule:
    if steps < 1:
        raise ValueError("schedule needs at least one step")
    if betas is None:
        betas = squared_cosine_betas(steps)
    betas = np.asarray(betas, dtype=np.float64)
    if betas.shape != (steps,):
        raise ValueError(f"need {steps} betas, got shape {betas.shape}")
    if np.any(betas <= 0) or np.any(betas >= 1):
        raise ValueError("betas must lie in (0, 1)")

    betas = np.concatenate([[0.0], betas])  # index by step, abar_0 = 1
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    rev_scale = np.zeros_like(betas)
    eps_coef = np.zeros_like(betas)
    noise_std = np.zeros_like(betas)
    ks = np.arange(1, steps + 1)
    rev_scale[1:] = 1.0 / np.sqrt(alphas[1:])
    eps_coef[1:] = betas[1:] / np.sqrt(1.0 - alpha_bars[1:])
    # posterior std; zero at k=1 because abar_0 = 1
    noise_std[1:] = np.sqrt(
        (1.0 - alpha_bars[ks - 1]) / (1.0 - alpha_bars[ks]) * betas[1:]
    )
    clean_coef = np.zeros_like(betas)
    state_coef = np.zeros_like(betas)
    clean_coef[1:] = np.sqrt(alpha_bars[ks - 1]) * betas[1:] / (1.0 - alpha_bars[1:])
    state_coef[1:] = np.sqrt(alphas[1:]) * (1.0 - alpha_bars[ks - 1]) / (1.0 - alpha_bars[1:])
    return DiffusionSchedule(
        betas=betas, alphas=alphas, alpha_bars=alpha_bars,
        rev_scale=rev_scale, eps_coef=eps_coef, noise_std=noise_std,
        clean_coef=clean_coef, state_coef=state_coef,
    )


def _gather(coeffs: np.ndarray, k: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    values = torch.as_tensor(coeffs, device=like.device, dtype=like.dtype)[k]
    return values.reshape(-1, *([1] * (like.dim() - 1)))


def add_noise(
    clean: torch.Tensor, k: torch.Tensor | int, eps: torch.Tensor, sched: DiffusionSchedule
) -> torch.Tensor:
    """Forward-noise a clean chunk to step k."""
    if eps.shape != clean.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != clean shape {tuple(clean.shape)}")
    if isinstance(k, int):
        sched.validate_step(k)
        k = torch.full((clean.shape[0],), k, dtype=torch.long, device=clean.device)
    else:
        if torch.any(k < 1) or torch.any(k > sched.num_steps):
            raise ValueError("step index outside schedule range")
    abar = _gather(sched.alpha_bars, k, clean)
    return abar.sqrt() * clean + (1.0 - abar).sqrt() * eps


def diffusion_loss(
    model,
    chunk: torch.Tensor,
    visual: torch.Tensor,
    proprio: torch.Tensor,
    sched: DiffusionSchedule,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Noise-prediction objective: per-sample uniform step, standard-normal
    noise, mean squared error between injected and predicted noise."""
    if chunk.shape[0] < 1:
        raise ValueError("empty batch")
    b = chunk.shape[0]
    k = torch.randint(1, sched.num_steps + 1, (b,), generator=generator, device=chunk.device)
    eps = torch.randn(chunk.shape, generator=generator, device=chunk.device, dtype=chunk.dtype)
    noisy = add_noise(chunk, k, eps, sched)
    predicted = model.predict_noise(noisy, k, visual, proprio)
    return torch.mean((eps - predicted) ** 2)


@torch.no_grad()
def sample(
    model,
    visual: torch.Tensor,
    proprio: torch.Tensor,
    sched: DiffusionSchedule,
    n_samples: int = 1,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Draw chunks by iterating the reverse update from pure noise.

    Conditioning features are encoded once and shared across all samples
    and steps, so the N parallel draws amount to one batched trunk pass per
    step. Returns (n_samples, M, L_c, D_a), clipped to [-1, 1].
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    cfg = model.config
    if visual.dim() == 3:
        visual = visual[None]
        proprio = proprio[None]
    device = next(model.parameters()).device
    dtype = next(model.parameters()).dtype
    visual = torch.as_tensor(visual, device=device, dtype=dtype)
    proprio = torch.as_tensor(proprio, device=device, dtype=dtype)
    cond = model.conditioning_features(visual, proprio)

    shape = (n_samples, cfg.trunk_length, cfg.action_dim)
    x = torch.randn(shape, generator=generator, device=device, dtype=dtype)
    for k in range(sched.num_steps, 0, -1):
        eps_hat = model.denoise_with_features(x, k, cond)
        # posterior mean through the implied clean chunk; projecting it onto
        # the known [-1, 1] support keeps large late-schedule betas stable
        abar = sched.alpha_bars[k]
        clean_hat = ((x - math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(abar)).clamp(-1.0, 1.0)
        x = sched.clean_coef[k] * clean_hat + sched.state_coef[k] * x
        if k > 1:
            noise = torch.randn(shape, generator=generator, device=device, dtype=dtype)
            x = x + sched.noise_std[k] * noise
        if not torch.isfinite(x).all():
            raise RuntimeError(
                f"reverse diffusion diverged at step {k}: non-finite chunk state"
            )
    x = x.clamp(-1.0, 1.0)
    return x.reshape(n_samples, cfg.num_frequencies, cfg.chunk_length, cfg.action_dim)


def sample_chunk(
    model,
    visual: torch.Tensor,
    proprio: torch.Tensor,
    sched: DiffusionSchedule,
    generator: torch.Generator | None = None,
) -> HierarchicalChunk:
    """Single-sample convenience wrapper returning a HierarchicalChunk."""
    draws = sample(model, visual, proprio, sched, n_samples=1, generator=generator)
    return HierarchicalChunk(actions=draws[0].cpu().numpy().astype(np.float64))
