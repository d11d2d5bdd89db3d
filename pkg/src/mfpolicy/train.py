"""Training loop for the chunk denoiser.

Each epoch reseeds its batch sampler and noise generator from
(train_seed, epoch), so an interrupted run resumed from a checkpoint
replays exactly the same stream as an uninterrupted one.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import diffusion
from .config import RunConfig
from .dataset import EpisodeRecord, NormalizationStats, sample_batch
from .network import ChunkDenoiser, load_checkpoint, save_checkpoint


@dataclass
class TrainResult:
    model: ChunkDenoiser
    epoch_losses: list[float]
    checkpoint_path: Path | None


def _epoch_seed(train_seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence(entropy=train_seed, spawn_key=(epoch,)).generate_state(1)[0])


def train_policy(
    config: RunConfig,
    episodes: list[EpisodeRecord],
    stats: NormalizationStats,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Train the denoiser on normalized (history, chunk) pairs.

    Saves periodic checkpoints plus ``final.pt`` when ``out_dir`` is given;
    a non-finite loss aborts immediately with a diagnostic.
    """
    config.validate()
    ladder = config.ladder()
    sched = diffusion.make_schedule(config.diffusion_steps)
    start_epoch = 0

    if resume is not None:
        bundle = load_checkpoint(resume)
        model = bundle.model
        if bundle.config != config.denoiser_config():
            raise ValueError("resume checkpoint was trained with a different network config")
        optimizer = _make_optimizer(model, config)
        trainer_state = bundle.trainer_state or {}
        if "optimizer" in trainer_state:
            optimizer.load_state_dict(trainer_state["optimizer"])
        start_epoch = int(trainer_state.get("epoch", 0))
    else:
        torch.manual_seed(config.train_seed)
        model = ChunkDenoiser(config.denoiser_config())
        optimizer = _make_optimizer(model, config)

    model.train()
    total_anchors = sum(len(e) for e in episodes)
    steps = config.steps_per_epoch or max(1, total_anchors // config.batch_size)

    out_path = Path(out_dir) if out_dir is not None else None
    epoch_losses: list[float] = []
    final_path: Path | None = None

    for epoch in range(start_epoch, config.epochs):
        seed = _epoch_seed(config.train_seed, epoch)
        batch_rng = np.random.default_rng(seed)
        noise_gen = torch.Generator().manual_seed(seed)
        losses = []
        for _ in range(steps):
            batch = sample_batch(
                episodes, stats, ladder,
                config.history_length, config.chunk_length,
                config.batch_size, batch_rng,
            )
            chunk = torch.from_numpy(batch.chunk).reshape(
                len(batch), -1, batch.chunk.shape[-1]
            )
            visual = torch.from_numpy(batch.visual)
            proprio = torch.from_numpy(batch.proprio)
            loss = diffusion.diffusion_loss(model, chunk, visual, proprio, sched, noise_gen)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"lr={config.learning_rate}, batch={config.batch_size}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        epoch_losses.append(float(np.mean(losses)))
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs} loss {epoch_losses[-1]:.5f}")

        if out_path is not None:
            trainer_state = {"epoch": epoch + 1, "optimizer": optimizer.state_dict()}
            if (epoch + 1) % config.save_every == 0 and epoch + 1 < config.epochs:
                save_checkpoint(
                    out_path / f"checkpoint_{epoch + 1:04d}.pt",
                    model, stats, ladder, trainer_state,
                )
            if epoch + 1 == config.epochs:
                final_path = save_checkpoint(
                    out_path / "final.pt", model, stats, ladder, trainer_state
                )

    model.eval()
    return TrainResult(model=model, epoch_losses=epoch_losses, checkpoint_path=final_path)


def _make_optimizer(model: ChunkDenoiser, config: RunConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(),
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
        weight_decay=config.weight_decay,
    )
