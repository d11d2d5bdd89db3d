"""Sampler correctness isolation: recover a two-chunk mixture."""

import sys
import time
import numpy as np
import torch

sys.path.insert(0, "src")

from mfpolicy import diffusion
from mfpolicy.network import ChunkDenoiser, DenoiserConfig

K = int(sys.argv[1]) if len(sys.argv) > 1 else 40
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 2000
hw = int(sys.argv[3]) if len(sys.argv) > 3 else 16

cfg = DenoiserConfig(
    num_frequencies=1, history_length=2, chunk_length=8, action_dim=2,
    visual_dim=2, proprio_dim=2, hidden_width=hw, unet_channel_mults=(1, 2),
    step_embed_dim=32, attention_heads=2,
)
torch.manual_seed(0)
model = ChunkDenoiser(cfg)
sched = diffusion.make_schedule(K)

g = torch.Generator().manual_seed(1)
rng = np.random.default_rng(2)
mode_a = torch.tensor(rng.uniform(-0.8, 0.8, size=(8, 2)), dtype=torch.float32)
mode_b = torch.tensor(rng.uniform(-0.8, 0.8, size=(8, 2)), dtype=torch.float32)
print("mode distance:", float((mode_a - mode_b).abs().mean()))

opt = torch.optim.AdamW(model.parameters(), lr=1e-3, weight_decay=1e-6)
vis = torch.zeros(256, 1, 2, 2)
pro = torch.zeros(256, 1, 2, 2)
t0 = time.time()
for step in range(steps):
    pick = torch.randint(0, 2, (256, 1, 1), generator=g)
    chunk = torch.where(pick.bool(), mode_a[None], mode_b[None])
    loss = diffusion.diffusion_loss(model, chunk, vis, pro, sched, g)
    opt.zero_grad(); loss.backward(); opt.step()
    if step % max(1, steps // 5) == 0:
        print(f"step {step}: loss {float(loss):.4f} ({time.time()-t0:.0f}s)")

model.eval()
draws = diffusion.sample(model, torch.zeros(1, 2, 2), torch.zeros(1, 2, 2), sched,
                         n_samples=400, generator=torch.Generator().manual_seed(3))
flat = draws.reshape(400, -1)
da = (flat - mode_a.reshape(1, -1)).abs().mean(1)
db = (flat - mode_b.reshape(1, -1)).abs().mean(1)
near = torch.minimum(da, db)
mass_a = float((da < db).float().mean())
print(f"mass A={mass_a:.2f} B={1-mass_a:.2f}  mean nearest-mode dist={float(near.mean()):.3f} "
      f"p90={float(near.quantile(0.9)):.3f}")
