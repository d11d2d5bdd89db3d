"""Training-loop behavior: convergence direction, resume, persistence."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from mfpolicy import envbench
from mfpolicy.config import RunConfig
from mfpolicy.dataset import fit_normalizer, generate_demos
from mfpolicy.network import load_checkpoint
from mfpolicy.train import train_policy

TINY = dict(
    demos=4, epochs=4, batch_size=32, hidden_width=16,
    unet_channel_mults=(1, 2), diffusion_steps=8, n_samples=3,
    step_embed_dim=16, attention_heads=2, learning_rate=3e-4,
    steps_per_epoch=8, save_every=2,
)


def make_setup(task: str, **overrides):
    config = RunConfig(task=task, **{**TINY, **overrides})
    episodes = generate_demos(task, config.demos, seed=0)
    stats = fit_normalizer(episodes)
    return config, episodes, stats


@pytest.mark.parametrize("task", envbench.registered_tasks())
def test_smoothed_loss_decreases_on_every_task(task):
    config, episodes, stats = make_setup(task)
    result = train_policy(config, episodes, stats)
    assert len(result.epoch_losses) == config.epochs
    # epoch means are already smoothed over the epoch's batches
    assert result.epoch_losses[-1] < result.epoch_losses[0]


def test_training_is_deterministic():
    config, episodes, stats = make_setup("latch_close", epochs=2)
    r1 = train_policy(config, episodes, stats)
    r2 = train_policy(config, episodes, stats)
    assert r1.epoch_losses == r2.epoch_losses
    for a, b in zip(r1.model.state_dict().values(), r2.model.state_dict().values()):
        assert torch.equal(a, b)


def test_resume_continues_epoch_numbering_and_matches_straight_run(tmp_path):
    config, episodes, stats = make_setup("latch_close", epochs=4, save_every=2)
    straight = train_policy(config, episodes, stats, out_dir=tmp_path / "straight")

    train_policy(config, episodes, stats, out_dir=tmp_path / "part")
    mid = tmp_path / "part" / "checkpoint_0002.pt"
    assert mid.exists()
    resumed = train_policy(config, episodes, stats, out_dir=tmp_path / "resumed", resume=mid)
    assert len(resumed.epoch_losses) == 2  # epochs 3..4 only
    assert resumed.epoch_losses == straight.epoch_losses[2:]
    for a, b in zip(
        straight.model.state_dict().values(), resumed.model.state_dict().values()
    ):
        assert torch.equal(a, b)


def test_resume_rejects_mismatched_network(tmp_path):
    config, episodes, stats = make_setup("latch_close", epochs=2)
    train_policy(config, episodes, stats, out_dir=tmp_path)
    other = RunConfig(task="latch_close", **{**TINY, "epochs": 3, "hidden_width": 24})
    with pytest.raises(ValueError, match="different network"):
        train_policy(other, episodes, stats, resume=tmp_path / "final.pt")


def test_final_checkpoint_reloads_with_zero_weight_drift(tmp_path):
    config, episodes, stats = make_setup("latch_close", epochs=1)
    result = train_policy(config, episodes, stats, out_dir=tmp_path)
    bundle = load_checkpoint(result.checkpoint_path)
    for key, tensor in result.model.state_dict().items():
        assert torch.equal(bundle.model.state_dict()[key], tensor), key
    assert bundle.ladder == config.ladder()
    for key, arr in stats.as_arrays().items():
        assert np.array_equal(bundle.stats.as_arrays()[key], arr)


def test_nan_loss_aborts_with_diagnostic():
    config, episodes, stats = make_setup("latch_close", epochs=1, learning_rate=1e12)
    with pytest.raises(RuntimeError, match="non-finite loss"):
        train_policy(config, episodes, stats)
