"""Scratch experiment: measure the hierarchy and gating trends on trained models."""

import math
import sys
import time

import numpy as np
import torch

sys.path.insert(0, "src")

from mfpolicy import diffusion, envbench
from mfpolicy.cli import calibrate_thresholds
from mfpolicy.config import RunConfig
from mfpolicy.dataset import fit_normalizer, generate_demos
from mfpolicy.executor import RolloutConfig, rollout
from mfpolicy.network import CheckpointBundle
from mfpolicy.train import train_policy

BASE = dict(
    demos=100, batch_size=64, learning_rate=1e-3,
    hidden_width=16, unet_channel_mults=(1, 2), step_embed_dim=32,
    attention_heads=2, diffusion_steps=40, n_samples=8,
)


def build(task, seed, **kw):
    cfg = RunConfig(task=task, train_seed=seed, **{**BASE, **kw})
    return cfg


def train_variant(task, seed, episodes, stats, single=False, **kw):
    over = dict(kw)
    if single:
        over.update(strides=(1,), thresholds=(-math.inf, math.inf))
    cfg = build(task, seed, **over)
    t0 = time.time()
    result = train_policy(cfg, episodes, stats)
    print(f"  trained {task} single={single} seed={seed} "
          f"loss {result.epoch_losses[0]:.3f}->{result.epoch_losses[-1]:.3f} "
          f"({time.time()-t0:.0f}s)")
    return cfg, result.model


def evaluate(cfg, model, stats, episodes, mode="gated", thresholds=None, n=None):
    sched = diffusion.make_schedule(cfg.diffusion_steps)
    ladder = cfg.ladder() if thresholds is None else cfg.ladder().with_thresholds(thresholds)
    override = None
    n_samp = n if n is not None else cfg.n_samples
    if mode == "fixed-high":
        override, n_samp = 0, 1
    elif mode == "fixed-low":
        override, n_samp = ladder.num_frequencies - 1, 1
    rcfg = RolloutConfig(history_length=cfg.history_length, action_horizon=cfg.action_horizon,
                         n_samples=n_samp, frequency_override=override)
    spec = envbench.task_spec(cfg.task)
    outs = []
    for i in range(episodes):
        env = envbench.make_env(cfg.task, 10_000 + i)
        gen = torch.Generator().manual_seed(50_000 + i)
        outs.append(rollout(model, sched, stats, env, ladder, rcfg, gen))
    sr = np.mean([t.success for t in outs])
    cmds = np.mean([t.executed_commands for t in outs])
    steps = np.mean([t.base_steps_elapsed for t in outs])
    return sr, cmds, steps, outs


def main():
    task = sys.argv[1] if len(sys.argv) > 1 else "approach_insert"
    epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 20
    n_eval = int(sys.argv[3]) if len(sys.argv) > 3 else 50
    seeds = [int(s) for s in (sys.argv[4].split(",") if len(sys.argv) > 4 else ["0"])]

    print(f"== {task} epochs={epochs} eval={n_eval} seeds={seeds}")
    episodes = generate_demos(task, 100, seed=0)
    stats = fit_normalizer(episodes)
    print(f"demos: mean len {np.mean([len(e) for e in episodes]):.0f}")

    for seed in seeds:
        cfg3, m3 = train_variant(task, seed, episodes, stats, epochs=epochs)
        cfg1, m1 = train_variant(task, seed, episodes, stats, single=True, epochs=epochs)

        b3 = CheckpointBundle(model=m3, config=cfg3.denoiser_config(),
                              stats=stats, ladder=cfg3.ladder())
        t0 = time.time()
        try:
            thresholds = calibrate_thresholds(cfg3, b3, (10.0, 70.0), max_episodes=30)
            print(f"  thresholds {tuple(round(t,3) for t in thresholds[1:-1])} ({time.time()-t0:.0f}s)")
        except Exception as e:
            print(f"  calibration failed: {e}")
            thresholds = None

        t0 = time.time()
        sr3g, c3g, s3g, _ = evaluate(cfg3, m3, stats, n_eval, "gated", thresholds)
        sr3h, c3h, s3h, _ = evaluate(cfg3, m3, stats, n_eval, "fixed-high")
        sr3l, c3l, s3l, _ = evaluate(cfg3, m3, stats, n_eval, "fixed-low")
        sr1, c1, s1, _ = evaluate(cfg1, m1, stats, n_eval, "fixed-high")
        print(f"  seed {seed}: M3 gated SR={sr3g:.2f} cmds={c3g:.0f} steps={s3g:.0f} | "
              f"M3 high SR={sr3h:.2f} cmds={c3h:.0f} | M3 low SR={sr3l:.2f} cmds={c3l:.0f} | "
              f"M1 SR={sr1:.2f} cmds={c1:.0f} ({time.time()-t0:.0f}s eval)")


if __name__ == "__main__":
    main()
