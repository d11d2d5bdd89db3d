"""Per-step prediction quality vs the closed-form ideal for a 2-point mixture."""

import sys, math, time
import numpy as np
import torch

sys.path.insert(0, "src")
from mfpolicy import diffusion
from mfpolicy.network import ChunkDenoiser, DenoiserConfig

K = int(sys.argv[1]) if len(sys.argv) > 1 else 40
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 1500
hw = int(sys.argv[3]) if len(sys.argv) > 3 else 16

cfg = DenoiserConfig(num_frequencies=1, history_length=2, chunk_length=8, action_dim=2,
                     visual_dim=2, proprio_dim=2, hidden_width=hw, unet_channel_mults=(1, 2),
                     step_embed_dim=32, attention_heads=2)
torch.manual_seed(0)
model = ChunkDenoiser(cfg)
sched = diffusion.make_schedule(K)
g = torch.Generator().manual_seed(1)
rng = np.random.default_rng(2)
A = torch.tensor(rng.uniform(-0.8, 0.8, (8, 2)), dtype=torch.float32)
B = torch.tensor(rng.uniform(-0.8, 0.8, (8, 2)), dtype=torch.float32)

opt = torch.optim.AdamW(model.parameters(), lr=1e-3, weight_decay=1e-6)
vis = torch.zeros(256, 1, 2, 2); pro = torch.zeros(256, 1, 2, 2)
for step in range(steps):
    pick = torch.randint(0, 2, (256, 1, 1), generator=g)
    chunk = torch.where(pick.bool(), A[None], B[None])
    loss = diffusion.diffusion_loss(model, chunk, vis, pro, sched, g)
    opt.zero_grad(); loss.backward(); opt.step()
model.eval()
print(f"final loss {float(loss):.4f}")


def ideal_eps(x, k):
    abar = float(sched.alpha_bars[k])
    var = 1 - abar
    la = -((x - math.sqrt(abar) * A[None]) ** 2).flatten(1).sum(1) / (2 * var)
    lb = -((x - math.sqrt(abar) * B[None]) ** 2).flatten(1).sum(1) / (2 * var)
    w = torch.softmax(torch.stack([la, lb], 1), dim=1)
    x0_hat = w[:, 0, None, None] * A[None] + w[:, 1, None, None] * B[None]
    return (x - math.sqrt(abar) * x0_hat) / math.sqrt(var)


cond = model.conditioning_features(torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 2, 2))
gg = torch.Generator().manual_seed(5)
for k in range(K, 0, -max(1, K // 10)):
    abar = float(sched.alpha_bars[k])
    pick = torch.randint(0, 2, (128, 1, 1), generator=gg)
    x0 = torch.where(pick.bool(), A[None], B[None])
    eps = torch.randn(128, 8, 2, generator=gg)
    xk = math.sqrt(abar) * x0 + math.sqrt(1 - abar) * eps
    with torch.no_grad():
        pred = model.denoise_with_features(xk, k, cond.expand(128, -1, -1))
    star = ideal_eps(xk, k)
    print(f"k={k:3d} abar={abar:8.2e}: |model-ideal|={float((pred-star).abs().mean()):.4f} "
          f"|model-eps|={float((pred-eps).abs().mean()):.4f} |ideal-eps|={float((star-eps).abs().mean()):.4f}")
