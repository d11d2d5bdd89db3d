"""Command-line interface.

Subcommands: ``gen-demos``, ``train``, ``eval``, ``calibrate``,
``plot-entropy``, ``ablate``. Every command takes an optional ``--config``
YAML file plus repeatable ``--set key=value`` overrides; defaults are the
reference hyperparameters. Exit codes: 0 ok, 1 user error, 2 internal
error. The dataset root defaults to ``$MFPOLICY_DATA_ROOT`` or ``./data``.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import math
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import dataset as ds
from . import diffusion, envbench
from .config import RunConfig, apply_overrides, load_config
from .executor import RolloutConfig, read_trace_jsonl, rollout
from .network import CheckpointBundle, load_checkpoint
from .train import train_policy

EVAL_MODES = ("entropy-gated", "fixed-high", "fixed-mid", "fixed-low")


class UsageError(Exception):
    """Invalid invocation or inputs; maps to exit code 1."""


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _build_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides: dict[str, str] = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "task", None):
        overrides["task"] = args.task
    try:
        config = apply_overrides(config, overrides)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from exc
    return config


def _require_task(config: RunConfig) -> envbench.TaskSpec:
    try:
        return envbench.task_spec(config.task)
    except KeyError as exc:
        raise UsageError(str(exc)) from exc


def _episode_generator(base_seed: int, episode_seed: int) -> torch.Generator:
    mixed = np.random.SeedSequence(entropy=base_seed, spawn_key=(episode_seed,))
    return torch.Generator().manual_seed(int(mixed.generate_state(1)[0]))


def _mode_rollout_config(config: RunConfig, bundle: CheckpointBundle, mode: str) -> RolloutConfig:
    m = bundle.config.num_frequencies
    if mode == "entropy-gated":
        if config.n_samples < 2:
            raise UsageError("entropy-gated mode needs n_samples >= 2")
        return RolloutConfig(
            history_length=config.history_length,
            action_horizon=config.action_horizon,
            n_samples=config.n_samples,
            frequency_override=None,
        )
    override = {"fixed-high": 0, "fixed-mid": (m - 1) // 2, "fixed-low": m - 1}[mode]
    # gating disabled: a single draw per decision suffices
    return RolloutConfig(
        history_length=config.history_length,
        action_horizon=config.action_horizon,
        n_samples=1,
        frequency_override=override,
    )


def _make_runner(config: RunConfig, bundle: CheckpointBundle, rollout_cfg: RolloutConfig):
    sched = diffusion.make_schedule(config.diffusion_steps)
    ladder = bundle.ladder.with_thresholds(config.thresholds)

    def runner(env: envbench.ManipulationEnv):
        generator = _episode_generator(config.eval_seed, env.seed)
        return rollout(bundle.model, sched, bundle.stats, env, ladder, rollout_cfg, generator)

    return runner


def _check_checkpoint_config(config: RunConfig, bundle: CheckpointBundle) -> None:
    expected = config.denoiser_config()
    if bundle.config != expected:
        raise UsageError(
            "checkpoint/config mismatch: checkpoint network "
            f"{bundle.config} vs config-derived {expected}"
        )
    if tuple(bundle.ladder.strides) != tuple(config.strides):
        raise UsageError(
            f"checkpoint strides {bundle.ladder.strides} != config strides {config.strides}"
        )


def _append_result(config: RunConfig, entry: dict) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "results.jsonl"
    entry = {"timestamp": datetime.datetime.now().isoformat(timespec="seconds"), **entry}
    with path.open("a") as fh:
        fh.write(json.dumps(entry) + "\n")
    return path


def _print_report_table(rows: list[dict]) -> None:
    header = f"{'task':<24} {'variant':<18} {'SR':>6} {'commands':>9} {'base steps':>11}"
    print(header)
    print("-" * len(header))
    for row in rows:
        print(
            f"{row['task']:<24} {row.get('variant', ''):<18} "
            f"{row['success_rate']:>6.2f} {row['mean_executed_commands']:>9.1f} "
            f"{row['mean_base_steps']:>11.1f}"
        )


# ---------------------------------------------------------------------------
# gen-demos
# ---------------------------------------------------------------------------


def cmd_gen_demos(args: argparse.Namespace) -> int:
    config = _build_config(args)
    _require_task(config)
    root = config.resolved_data_root()
    directory = ds.task_dir(root, config.task)
    existing = sorted(directory.glob("episode_*.npz")) if directory.exists() else []
    if existing and not args.force:
        raise UsageError(
            f"{directory} already holds {len(existing)} episodes; rerun with --force to overwrite"
        )
    for stale in existing:
        stale.unlink()
    episodes = ds.generate_demos(config.task, config.demos, config.demo_seed, config.retry_budget)
    ds.save_episodes(root, episodes)
    stats = ds.fit_normalizer(episodes)
    ds.save_stats(root, config.task, stats)
    print(
        f"wrote {len(episodes)} episodes for {config.task} under {directory} "
        f"(mean length {np.mean([len(e) for e in episodes]):.1f} steps)"
    )
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_training_data(config: RunConfig):
    root = config.resolved_data_root()
    try:
        episodes = ds.load_episodes(root, config.task)
    except FileNotFoundError as exc:
        raise UsageError(f"{exc}; run gen-demos first") from exc
    try:
        stats = ds.load_stats(root, config.task)
    except FileNotFoundError:
        stats = ds.fit_normalizer(episodes)
        ds.save_stats(root, config.task, stats)
    return episodes, stats


def cmd_train(args: argparse.Namespace) -> int:
    config = _build_config(args)
    _require_task(config)
    episodes, stats = _load_training_data(config)
    result = train_policy(
        config, episodes, stats,
        out_dir=config.out_dir, resume=args.resume, log=print,
    )
    if result.checkpoint_path is not None:
        print(f"final checkpoint: {result.checkpoint_path}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    config = _build_config(args)
    spec = _require_task(config)
    bundle = load_checkpoint(args.checkpoint)
    _check_checkpoint_config(config, bundle)
    rollout_cfg = _mode_rollout_config(config, bundle, args.mode)
    runner = _make_runner(config, bundle, rollout_cfg)
    seeds = range(config.eval_seed, config.eval_seed + config.eval_episodes)
    report = envbench.evaluate(
        runner, spec, config.eval_episodes, seeds, keep_traces=args.traces_out is not None
    )
    if args.traces_out:
        out = Path(args.traces_out)
        for i, trace in enumerate(report.traces):
            if trace is not None:
                trace.write_jsonl(out / f"trace_{i:05d}.jsonl")
        print(f"wrote {len(report.traces)} traces under {out}")
    entry = {
        "command": "eval",
        "task": config.task,
        "variant": args.mode,
        "checkpoint": str(args.checkpoint),
        **report.to_dict(),
    }
    path = _append_result(config, entry)
    last = json.loads(path.read_text().splitlines()[-1])
    _print_report_table([last])
    return 0


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

MIN_CALIBRATION_DECISIONS = 100


def percentile_thresholds(
    entropies: np.ndarray, percentiles: tuple[float, ...]
) -> tuple[float, ...]:
    """Sentinel-wrapped thresholds at the given entropy percentiles."""
    if any(b <= a for a, b in zip(percentiles, percentiles[1:])):
        raise UsageError("percentiles must be strictly ascending")
    cuts = [float(np.percentile(entropies, p)) for p in percentiles]
    if any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise UsageError(f"degenerate entropy distribution: percentile cuts {cuts}")
    return (-math.inf, *cuts, math.inf)


def calibrate_thresholds(
    config: RunConfig,
    bundle: CheckpointBundle,
    percentiles: tuple[float, ...] = (10.0, 70.0),
    max_episodes: int | None = None,
) -> tuple[float, ...]:
    """Thresholds from the empirical per-decision entropy distribution.

    Rollouts run with gating disabled (highest frequency) so the collected
    entropies reflect the policy itself rather than a particular gate.
    """
    m = bundle.config.num_frequencies
    if len(percentiles) != m - 1:
        raise UsageError(f"need {m - 1} percentiles for {m} frequencies, got {len(percentiles)}")
    if config.n_samples < 2:
        raise UsageError("calibration needs n_samples >= 2 for entropy estimates")
    rollout_cfg = RolloutConfig(
        history_length=config.history_length,
        action_horizon=config.action_horizon,
        n_samples=config.n_samples,
        frequency_override=0,
    )
    runner = _make_runner(config, bundle, rollout_cfg)
    entropies: list[float] = []
    episodes = max_episodes if max_episodes is not None else config.eval_episodes
    for i in range(episodes):
        env = envbench.make_env(config.task, config.eval_seed + i)
        trace = runner(env)
        entropies.extend(r.entropy for r in trace.records if math.isfinite(r.entropy))
        if len(entropies) >= MIN_CALIBRATION_DECISIONS:
            break
    if len(entropies) < MIN_CALIBRATION_DECISIONS:
        raise UsageError(
            f"insufficient entropy samples: {len(entropies)} decisions < "
            f"{MIN_CALIBRATION_DECISIONS}; increase eval_episodes"
        )
    return percentile_thresholds(np.asarray(entropies), percentiles)


def cmd_calibrate(args: argparse.Namespace) -> int:
    config = _build_config(args)
    _require_task(config)
    bundle = load_checkpoint(args.checkpoint)
    _check_checkpoint_config(config, bundle)
    percentiles = tuple(float(p) for p in args.percentiles)
    thresholds = calibrate_thresholds(config, bundle, percentiles)
    _append_result(config, {
        "command": "calibrate",
        "task": config.task,
        "checkpoint": str(args.checkpoint),
        "percentiles": list(percentiles),
        "thresholds": [str(t) if math.isinf(t) else t for t in thresholds],
    })
    inner = ", ".join(f"{t:.4f}" for t in thresholds[1:-1])
    print(f"calibrated thresholds: (-inf, {inner}, inf)")
    print(f"pass via: --set thresholds=-inf,{inner.replace(' ', '')},inf")
    return 0


# ---------------------------------------------------------------------------
# plot-entropy
# ---------------------------------------------------------------------------


def cmd_plot_entropy(args: argparse.Namespace) -> int:
    trace_path = Path(args.trace)
    if not trace_path.exists():
        raise UsageError(f"trace file {trace_path} does not exist")
    try:
        trace = read_trace_jsonl(trace_path)
    except (ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"malformed trace {trace_path}: {exc}") from exc
    if not trace.records:
        raise UsageError(f"trace {trace_path} holds no decision records")

    out_prefix = Path(args.out or trace_path.with_suffix(""))
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out_prefix.with_suffix(".csv")
    png_path = out_prefix.with_suffix(".png")

    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["decision_index", "base_step", "entropy", "frequency_index"])
        for r in trace.records:
            writer.writerow([r.index, r.base_step, r.entropy, r.frequency_index])

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 3.2))
    xs = [r.index for r in trace.records]
    ys = [r.entropy for r in trace.records]
    bands = plt.cm.viridis(np.linspace(0.25, 0.85, max(r.frequency_index for r in trace.records) + 1))
    for r in trace.records:
        ax.axvspan(r.index - 0.5, r.index + 0.5, color=bands[r.frequency_index], alpha=0.25, lw=0)
    ax.plot(xs, ys, marker="o", ms=3, color="black", lw=1.2)
    ax.set_xlabel("decision index")
    ax.set_ylabel("chunk entropy")
    ax.set_title(f"{trace.task_id}: entropy and selected frequency bands")
    fig.tight_layout()
    fig.savefig(png_path, dpi=130)
    plt.close(fig)
    print(f"wrote {png_path} and {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------


def _ablation_cells(config: RunConfig) -> list[tuple[str, RunConfig]]:
    """Trainable variant grid; window sweep cells overlap the named ones."""
    single = {"strides": (1,), "thresholds": (-math.inf, math.inf)}
    cells = [
        ("full", config),
        ("cond_fixed_low", replace(config, condition_mode="fixed_low")),
        ("cond_fixed_high", replace(config, condition_mode="fixed_high")),
        ("no_fusion", replace(config, use_global_fusion=False)),
        ("single_frequency", replace(config, **single)),
        ("history_1", replace(config, history_length=1)),
        ("history_5", replace(config, history_length=5)),
        ("chunk_4", replace(
            config, chunk_length=4, action_horizon=min(config.action_horizon, 4)
        )),
    ]
    return cells


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _build_config(args)
    spec = _require_task(config)
    episodes, stats = _load_training_data(config)
    rows: list[dict] = []
    checkpoints: dict[str, CheckpointBundle] = {}

    for name, cell_config in _ablation_cells(config):
        try:
            cell_config.validate()
            out_dir = Path(config.out_dir) / "ablate" / name
            result = train_policy(cell_config, episodes, stats, out_dir=out_dir, log=None)
            bundle = load_checkpoint(result.checkpoint_path)
            checkpoints[name] = bundle
            mode = "entropy-gated" if cell_config.n_samples >= 2 else "fixed-high"
            runner = _make_runner(cell_config, bundle, _mode_rollout_config(cell_config, bundle, mode))
            seeds = range(config.eval_seed, config.eval_seed + config.eval_episodes)
            report = envbench.evaluate(runner, spec, config.eval_episodes, seeds)
            row = {"command": "ablate", "variant": name, **report.to_dict()}
        except Exception as exc:  # noqa: BLE001 - partial-failure tolerant grid
            row = {
                "command": "ablate", "variant": name, "task": config.task,
                "error": f"{type(exc).__name__}: {exc}",
                "success_rate": float("nan"),
                "mean_executed_commands": float("nan"),
                "mean_base_steps": float("nan"),
            }
        rows.append(row)
        _append_result(config, row)

    if "full" in checkpoints:
        for n in (2, 5, 10, 100):
            try:
                cell_config = replace(config, n_samples=n)
                bundle = checkpoints["full"]
                runner = _make_runner(
                    cell_config, bundle, _mode_rollout_config(cell_config, bundle, "entropy-gated")
                )
                seeds = range(config.eval_seed, config.eval_seed + config.eval_episodes)
                report = envbench.evaluate(runner, spec, config.eval_episodes, seeds)
                row = {"command": "ablate", "variant": f"samples_{n}", **report.to_dict()}
            except Exception as exc:  # noqa: BLE001
                row = {
                    "command": "ablate", "variant": f"samples_{n}", "task": config.task,
                    "error": f"{type(exc).__name__}: {exc}",
                    "success_rate": float("nan"),
                    "mean_executed_commands": float("nan"),
                    "mean_base_steps": float("nan"),
                }
            rows.append(row)
            _append_result(config, row)

    _print_report_table(rows)
    failed = [r["variant"] for r in rows if "error" in r]
    if failed:
        print(f"failed cells: {', '.join(failed)}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # map argparse usage errors to exit code 1
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mfpolicy", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, task_flag: bool = True) -> None:
        p.add_argument("--config", type=Path, default=None, help="YAML config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        if task_flag:
            p.add_argument("--task", default=None, help="task id override")

    p = sub.add_parser("gen-demos", help="collect scripted demonstrations")
    common(p)
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset")
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("train", help="train the denoiser on stored demos")
    common(p)
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="closed-loop evaluation of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--mode", choices=EVAL_MODES, default="entropy-gated")
    p.add_argument("--traces-out", type=Path, default=None,
                   help="directory for per-episode decision traces")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="derive gating thresholds from entropy percentiles")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--percentiles", nargs="+", type=float, default=[10.0, 70.0])
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("plot-entropy", help="plot a rollout trace's entropy curve")
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="output prefix (.png/.csv)")
    p.set_defaults(func=cmd_plot_entropy)

    p = sub.add_parser("ablate", help="train and evaluate the ablation grid")
    common(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001 - internal failure
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
