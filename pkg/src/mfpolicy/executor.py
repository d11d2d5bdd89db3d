"""Entropy-gated adaptive execution and closed-loop rollouts.

Per decision the policy draws N chunk samples in one batched call, treats
each action coordinate across samples as a Gaussian, and averages the
per-coordinate differential entropies ``log(sqrt(2*pi*e) * std)`` into one
scalar. That scalar is compared against the ladder's ascending thresholds:
low entropy (consistent samples) selects the highest frequency for precise
closed-loop stepping, high entropy selects a lower frequency whose strides
cover more ground per command. The first sample's actions at the selected
frequency are executed for the configured action horizon, then the loop
re-observes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import diffusion
from .dataset import NormalizationStats, denormalize, normalize
from .temporal import FrequencyLadder, resample_history

VARIANCE_FLOOR = 1e-12
LOG_SQRT_2PI_E = 0.5 * (math.log(2.0 * math.pi) + 1.0)
TRACE_SCHEMA_VERSION = 1


@dataclass
class EntropyEstimate:
    """Gaussian entropy estimates per (frequency, chunk position)."""

    per_step: np.ndarray  # (M, L_c)
    overall: float
    n_samples: int


def estimate_entropy(samples: np.ndarray, variance_floor: float = VARIANCE_FLOOR) -> EntropyEstimate:
    """Entropy of N parallel chunk samples, shape (N, M, L_c, D_a).

    Uses the unbiased sample variance per coordinate, floored before the
    log so that degenerate (identical) samples stay finite; per-coordinate
    entropies are averaged over action dimensions and then over all
    (frequency, position) pairs for the overall scalar.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 4:
        raise ValueError(f"expected samples (N, M, L_c, D_a), got {samples.shape}")
    n = samples.shape[0]
    if n < 2:
        raise ValueError("entropy estimation needs at least 2 samples")
    variance = samples.var(axis=0, ddof=1)
    variance = np.maximum(variance, variance_floor)
    per_dim = LOG_SQRT_2PI_E + 0.5 * np.log(variance)
    per_step = per_dim.mean(axis=-1)
    return EntropyEstimate(per_step=per_step, overall=float(per_step.mean()), n_samples=n)


def select_frequency(entropy: float, ladder: FrequencyLadder) -> int:
    """Frequency index for an entropy value, half-open intervals (lo, hi].

    Interval 0 (lowest entropies) maps to the highest frequency; the
    sentinel thresholds guarantee every finite value selects something.
    """
    thresholds = np.asarray(ladder.thresholds)
    idx = int(np.searchsorted(thresholds, entropy, side="left")) - 1
    return min(max(idx, 0), ladder.num_frequencies - 1)


@dataclass
class ExecutionDecision:
    """Outcome of one gated inference call (normalized action space)."""

    frequency_index: int
    actions: np.ndarray  # (L_c, D_a), first sample at the selected frequency
    entropy: EntropyEstimate


def decide(
    model,
    sched: diffusion.DiffusionSchedule,
    visual: torch.Tensor,
    proprio: torch.Tensor,
    ladder: FrequencyLadder,
    n_samples: int,
    generator: torch.Generator | None = None,
) -> ExecutionDecision:
    """Sample N chunks in one batched call, gate on their entropy, and
    return the first sample's actions at the selected frequency."""
    if n_samples < 2:
        raise ValueError("decide needs n_samples >= 2 to estimate entropy")
    draws = diffusion.sample(model, visual, proprio, sched, n_samples, generator)
    samples = draws.cpu().numpy().astype(np.float64)
    estimate = estimate_entropy(samples)
    m = select_frequency(estimate.overall, ladder)
    return ExecutionDecision(frequency_index=m, actions=samples[0, m], entropy=estimate)


# ---------------------------------------------------------------------------
# closed-loop rollout
# ---------------------------------------------------------------------------


@dataclass
class RolloutConfig:
    history_length: int = 3
    action_horizon: int = 8  # commands executed per decision
    n_samples: int = 100
    frequency_override: int | None = None  # None = entropy-gated


@dataclass
class DecisionRecord:
    index: int
    base_step: int
    entropy: float
    frequency_index: int
    stride: int
    commands: int
    phase: int
    effector_x: float
    effector_y: float

    def to_json(self) -> dict:
        d = dict(vars(self))
        d["type"] = "decision"
        return d


@dataclass
class RolloutTrace:
    task_id: str
    success: bool
    executed_commands: int
    base_steps_elapsed: int
    aborted: bool = False
    records: list[DecisionRecord] = field(default_factory=list)

    def write_jsonl(self, path: str | Path) -> Path:
        """One structured record per line: meta, then decisions, then summary."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            fh.write(json.dumps({
                "type": "meta",
                "schema_version": TRACE_SCHEMA_VERSION,
                "task_id": self.task_id,
            }) + "\n")
            for record in self.records:
                fh.write(json.dumps(record.to_json()) + "\n")
            fh.write(json.dumps({
                "type": "summary",
                "success": self.success,
                "aborted": self.aborted,
                "executed_commands": self.executed_commands,
                "base_steps_elapsed": self.base_steps_elapsed,
            }) + "\n")
        return path


def read_trace_jsonl(path: str | Path) -> RolloutTrace:
    records: list[DecisionRecord] = []
    meta: dict = {}
    summary: dict = {}
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            kind = obj.pop("type", None)
            if kind == "meta":
                meta = obj
            elif kind == "decision":
                records.append(DecisionRecord(**obj))
            elif kind == "summary":
                summary = obj
            else:
                raise ValueError(f"malformed trace line in {path}: {line[:80]}")
    if not meta:
        raise ValueError(f"trace {path} is missing its meta record")
    return RolloutTrace(
        task_id=meta.get("task_id", ""),
        success=bool(summary.get("success", False)),
        aborted=bool(summary.get("aborted", False)),
        executed_commands=int(summary.get("executed_commands", 0)),
        base_steps_elapsed=int(summary.get("base_steps_elapsed", 0)),
        records=records,
    )


def rollout(
    model,
    sched: diffusion.DiffusionSchedule,
    stats: NormalizationStats,
    env,
    ladder: FrequencyLadder,
    config: RolloutConfig,
    generator: torch.Generator | None = None,
) -> RolloutTrace:
    """Receding-horizon loop: observe, decide, execute, repeat.

    Each executed action is one environment command; a stride-s action
    advances simulated time by s base steps. Commands and base steps are
    tracked separately. A sampler or environment failure aborts the loop
    but preserves the partial trace.
    """
    if config.action_horizon < 1 or config.action_horizon > model.config.chunk_length:
        raise ValueError("action_horizon must lie in [1, chunk_length]")
    dtype = next(model.parameters()).dtype
    records: list[DecisionRecord] = []
    commands = 0
    aborted = False
    try:
        while not env.done:
            t = env.state.step
            history = resample_history(env, t, ladder, config.history_length)
            visual = torch.as_tensor(
                normalize(history.visual, stats.visual_min, stats.visual_max), dtype=dtype
            )
            proprio = torch.as_tensor(
                normalize(history.proprio, stats.proprio_min, stats.proprio_max), dtype=dtype
            )

            if config.n_samples >= 2:
                draws = diffusion.sample(model, visual, proprio, sched, config.n_samples, generator)
                samples = draws.cpu().numpy().astype(np.float64)
                estimate = estimate_entropy(samples)
                entropy_value = estimate.overall
                m = select_frequency(entropy_value, ladder)
            else:
                draws = diffusion.sample(model, visual, proprio, sched, 1, generator)
                samples = draws.cpu().numpy().astype(np.float64)
                entropy_value = math.nan
                m = 0
            if config.frequency_override is not None:
                m = config.frequency_override
            actions = samples[0, m]

            stride = ladder.strides[m]
            executed = 0
            for j in range(config.action_horizon):
                command = denormalize(actions[j], stats.action_min, stats.action_max)
                env.command(command, stride=stride)
                commands += 1
                executed += 1
                if env.done:
                    break
            records.append(DecisionRecord(
                index=len(records),
                base_step=t,
                entropy=entropy_value,
                frequency_index=m,
                stride=stride,
                commands=executed,
                phase=env.state.phase,
                effector_x=float(env.state.effector[0]),
                effector_y=float(env.state.effector[1]),
            ))
    except RuntimeError:
        aborted = True
    return RolloutTrace(
        task_id=env.spec.task_id,
        success=env.success,
        executed_commands=commands,
        base_steps_elapsed=env.state.step,
        aborted=aborted,
        records=records,
    )
