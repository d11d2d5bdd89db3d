"""Diagnose a trained policy's rollout behavior step by step."""

import sys
import numpy as np
import torch

sys.path.insert(0, "src")

from mfpolicy import diffusion, envbench
from mfpolicy.config import RunConfig
from mfpolicy.dataset import fit_normalizer, generate_demos, normalize, sample_batch
from mfpolicy.executor import RolloutConfig, rollout
from mfpolicy.train import train_policy

task = sys.argv[1] if len(sys.argv) > 1 else "approach_insert"
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 15

cfg = RunConfig(
    task=task, demos=100, batch_size=128, learning_rate=5e-4,
    hidden_width=24, unet_channel_mults=(1, 2), step_embed_dim=32,
    attention_heads=2, diffusion_steps=40, n_samples=8, epochs=epochs,
)
episodes = generate_demos(task, cfg.demos, seed=0)
stats = fit_normalizer(episodes)
result = train_policy(cfg, episodes, stats, log=None)
model = result.model
sched = diffusion.make_schedule(cfg.diffusion_steps)
print(f"loss: {result.epoch_losses[0]:.3f} -> {result.epoch_losses[-1]:.3f}")

# --- open-loop: sample a chunk at a mid-demo state, compare with expert future
ep = episodes[0]
for t in (5, 20, len(ep) - 12):
    from mfpolicy.temporal import resample_chunk, resample_history
    hist = resample_history(ep, t, cfg.ladder(), cfg.history_length)
    true_chunk = resample_chunk(ep, t, cfg.ladder(), cfg.chunk_length)
    vis = torch.as_tensor(normalize(hist.visual, stats.visual_min, stats.visual_max), dtype=torch.float32)
    pro = torch.as_tensor(normalize(hist.proprio, stats.proprio_min, stats.proprio_max), dtype=torch.float32)
    draws = diffusion.sample(model, vis, pro, sched, 8, torch.Generator().manual_seed(0))
    mean_pred = draws.mean(0).numpy()
    true_norm = normalize(true_chunk.actions, stats.action_min, stats.action_max)
    err = np.abs(mean_pred - true_norm)
    spread = draws.numpy().std(0).mean()
    print(f"t={t:3d}: mean|pred-true|={err.mean():.3f} max={err.max():.3f} spread={spread:.3f}")

# --- closed-loop trace in fixed-high mode
env = envbench.make_env(task, 10_000)
rcfg = RolloutConfig(history_length=cfg.history_length, action_horizon=8,
                     n_samples=1, frequency_override=0)
tr = rollout(model, sched, stats, env, cfg.ladder(), rcfg, torch.Generator().manual_seed(1))
print(f"closed-loop: success={tr.success} steps={tr.base_steps_elapsed} phase={env.state.phase}")
for r in tr.records:
    print(f"  dec {r.index}: t={r.base_step:3d} eff=({r.effector_x:.3f},{r.effector_y:.3f}) "
          f"phase={r.phase} grip={env.state.gripper if r.index==len(tr.records)-1 else '-'}")
print("objects:", env.state.objects, "attached:", env.state.attached)
if task == "approach_insert":
    print("socket:", env.socket)
