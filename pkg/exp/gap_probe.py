"""Failure attribution for the hierarchy gap on one task."""

import math
import sys
import time

import numpy as np
import torch

sys.path.insert(0, "src")

from mfpolicy import diffusion, envbench
from mfpolicy.config import RunConfig
from mfpolicy.dataset import fit_normalizer, generate_demos
from mfpolicy.executor import RolloutConfig, rollout
from mfpolicy.train import train_policy

task = sys.argv[1] if len(sys.argv) > 1 else "approach_insert"
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 100
n_eval = int(sys.argv[3]) if len(sys.argv) > 3 else 60
seed = int(sys.argv[4]) if len(sys.argv) > 4 else 0
hw = int(sys.argv[5]) if len(sys.argv) > 5 else 16

BASE = dict(demos=100, batch_size=64, learning_rate=1e-3, hidden_width=hw,
            unet_channel_mults=(1, 2), step_embed_dim=32, attention_heads=2,
            diffusion_steps=40, epochs=epochs, train_seed=seed)

episodes = generate_demos(task, 100, seed=0)
stats = fit_normalizer(episodes)

results = {}
for name, extra in (("M3", {}), ("M1", {"strides": (1,), "thresholds": (-math.inf, math.inf)})):
    cfg = RunConfig(task=task, **{**BASE, **extra})
    t0 = time.time()
    model = train_policy(cfg, episodes, stats, log=None).model
    print(f"{name}: trained in {time.time()-t0:.0f}s")
    sched = diffusion.make_schedule(cfg.diffusion_steps)
    rcfg = RolloutConfig(history_length=3, action_horizon=8, n_samples=1, frequency_override=0)
    traces, phases = [], []
    t0 = time.time()
    for i in range(n_eval):
        env = envbench.make_env(task, 10_000 + i)
        tr = rollout(model, sched, stats, env, cfg.ladder(), rcfg,
                     torch.Generator().manual_seed(50_000 + i))
        traces.append((tr, env.state.phase))
    sr = np.mean([t.success for t, _ in traces])
    steps_ok = [t.base_steps_elapsed for t, _ in traces if t.success]
    fail_phases = [p for t, p in traces if not t.success]
    print(f"{name}: SR={sr:.2f} mean_success_steps={np.mean(steps_ok) if steps_ok else -1:.0f} "
          f"fail_phases={np.bincount(fail_phases, minlength=5).tolist()} ({time.time()-t0:.0f}s)")
    results[name] = traces

# stall analysis: among failures that reached the late phase, how long did they
# linger there compared to successful runs?
for name, traces in results.items():
    lingers = []
    for tr, phase in traces:
        if not tr.success and phase >= 2:
            first_p2 = next((r.base_step for r in tr.records if r.phase >= 2), None)
            if first_p2 is not None:
                lingers.append(tr.base_steps_elapsed - first_p2)
    if lingers:
        print(f"{name}: failed-after-reaching-final-phase: n={len(lingers)} "
              f"linger mean={np.mean(lingers):.0f} steps")
