"""Fast signal: open-loop prediction quality vs training budget."""

import sys
import time
import numpy as np
import torch

sys.path.insert(0, "src")

from mfpolicy import diffusion
from mfpolicy.config import RunConfig
from mfpolicy.dataset import fit_normalizer, generate_demos, normalize
from mfpolicy.temporal import resample_chunk, resample_history
from mfpolicy.train import train_policy


def openloop_err(cfg, model, episodes, stats, sched, n_eval=30, n_draw=8):
    rng = np.random.default_rng(0)
    errs, spreads = [], []
    for _ in range(n_eval):
        ep = episodes[rng.integers(len(episodes))]
        t = int(rng.integers(len(ep)))
        hist = resample_history(ep, t, cfg.ladder(), cfg.history_length)
        true_chunk = resample_chunk(ep, t, cfg.ladder(), cfg.chunk_length)
        vis = torch.as_tensor(normalize(hist.visual, stats.visual_min, stats.visual_max), dtype=torch.float32)
        pro = torch.as_tensor(normalize(hist.proprio, stats.proprio_min, stats.proprio_max), dtype=torch.float32)
        draws = diffusion.sample(model, vis, pro, sched, n_draw, torch.Generator().manual_seed(t))
        true_norm = normalize(true_chunk.actions, stats.action_min, stats.action_max)
        errs.append(np.abs(np.median(draws.numpy(), axis=0) - true_norm).mean())
        spreads.append(draws.numpy().std(0).mean())
    return float(np.mean(errs)), float(np.mean(spreads))


task = sys.argv[1] if len(sys.argv) > 1 else "approach_insert"
epochs_list = [int(x) for x in (sys.argv[2].split(",") if len(sys.argv) > 2 else ["20", "40", "80"])]
hw = int(sys.argv[3]) if len(sys.argv) > 3 else 16
bs = int(sys.argv[4]) if len(sys.argv) > 4 else 64
lr = float(sys.argv[5]) if len(sys.argv) > 5 else 1e-3

episodes = generate_demos(task, 100, seed=0)
stats = fit_normalizer(episodes)
anchors = sum(len(e) for e in episodes)
print(f"{task}: {anchors} anchors, batch {bs}, {anchors//bs} steps/epoch, hw={hw}, lr={lr}")

prev_epochs = 0
cfg = RunConfig(task=task, demos=100, batch_size=bs, learning_rate=lr,
                hidden_width=hw, unet_channel_mults=(1, 2), step_embed_dim=32,
                attention_heads=2, diffusion_steps=40, epochs=epochs_list[0])
sched = diffusion.make_schedule(cfg.diffusion_steps)
model = None
import mfpolicy.train as tr

for epochs in epochs_list:
    cfg = RunConfig(task=task, demos=100, batch_size=bs, learning_rate=lr,
                    hidden_width=hw, unet_channel_mults=(1, 2), step_embed_dim=32,
                    attention_heads=2, diffusion_steps=40, epochs=epochs)
    t0 = time.time()
    result = train_policy(cfg, episodes, stats, log=None)
    err, spread = openloop_err(cfg, result.model, episodes, stats, sched)
    print(f"epochs={epochs:3d} ({time.time()-t0:4.0f}s): loss={result.epoch_losses[-1]:.3f} "
          f"openloop_err={err:.3f} spread={spread:.3f}")
