"""Flat run configuration: one human-editable YAML file, documented keys.

Defaults follow the reference hyperparameters (batch 128, history 3,
action horizon 8, chunk 8, AdamW moments (0.9, 0.999), lr 1e-4, weight
decay 1e-6, step-embedding 128, 100 diffusion steps, 3 frequencies, 100
inference samples). CLI flags override individual keys; unknown keys are
rejected at load time.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .envbench import ACTION_DIM, PROPRIO_DIM, task_spec
from .network import DenoiserConfig
from .temporal import FrequencyLadder

DATA_ROOT_ENV_VAR = "MFPOLICY_DATA_ROOT"


@dataclass
class RunConfig:
    # task / data
    task: str = "approach_insert"
    data_root: str = ""  # empty -> $MFPOLICY_DATA_ROOT or ./data
    out_dir: str = "runs"
    demos: int = 100
    demo_seed: int = 0
    retry_budget: int = 200

    # frequency ladder
    strides: tuple[int, ...] = (1, 2, 4)
    base_rate_hz: float = 15.0
    thresholds: tuple[float, ...] = (-math.inf, -6.0, -5.5, math.inf)

    # windows
    history_length: int = 3  # observation frames per frequency
    chunk_length: int = 8  # predicted actions per frequency
    action_horizon: int = 8  # commands executed per decision

    # training
    batch_size: int = 128
    epochs: int = 30
    steps_per_epoch: int = 0  # 0 -> one pass worth of batches
    learning_rate: float = 1e-4
    weight_decay: float = 1e-6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    train_seed: int = 0
    save_every: int = 10

    # diffusion
    diffusion_steps: int = 100

    # network
    hidden_width: int = 64
    unet_channel_mults: tuple[int, ...] = (1, 2, 4)
    step_embed_dim: int = 128
    attention_heads: int = 4
    groupnorm_groups: int = 8
    kernel_size: int = 5
    condition_mode: str = "hierarchical"
    use_global_fusion: bool = True

    # execution / evaluation
    n_samples: int = 100
    eval_episodes: int = 100
    eval_seed: int = 10_000

    def __post_init__(self) -> None:
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        object.__setattr__(
            self, "unet_channel_mults", tuple(int(m) for m in self.unet_channel_mults)
        )

    # -- derived objects -----------------------------------------------------

    def resolved_data_root(self) -> Path:
        if self.data_root:
            return Path(self.data_root)
        return Path(os.environ.get(DATA_ROOT_ENV_VAR, "data"))

    def ladder(self) -> FrequencyLadder:
        return FrequencyLadder(
            strides=self.strides,
            base_rate_hz=self.base_rate_hz,
            thresholds=self.thresholds,
        )

    def denoiser_config(self) -> DenoiserConfig:
        spec = task_spec(self.task)
        return DenoiserConfig(
            num_frequencies=len(self.strides),
            history_length=self.history_length,
            chunk_length=self.chunk_length,
            action_dim=ACTION_DIM,
            visual_dim=spec.visual_dim,
            proprio_dim=PROPRIO_DIM,
            hidden_width=self.hidden_width,
            unet_channel_mults=self.unet_channel_mults,
            step_embed_dim=self.step_embed_dim,
            attention_heads=self.attention_heads,
            groupnorm_groups=self.groupnorm_groups,
            kernel_size=self.kernel_size,
            condition_mode=self.condition_mode,
            use_global_fusion=self.use_global_fusion,
        )

    def validate(self) -> "RunConfig":
        """Cross-check keys against the module-level constraints."""
        self.ladder()
        self.denoiser_config()
        if not 1 <= self.action_horizon <= self.chunk_length:
            raise ValueError("action_horizon must lie in [1, chunk_length]")
        for name in ("demos", "batch_size", "epochs", "diffusion_steps", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("bad optimizer settings")
        return self


_FIELD_NAMES = {f.name for f in fields(RunConfig)}
_TUPLE_FIELDS = ("strides", "thresholds", "unet_channel_mults")


def config_to_dict(config: RunConfig) -> dict:
    d = asdict(config)
    for key in _TUPLE_FIELDS:
        d[key] = list(d[key])
    return d


def config_from_dict(data: dict) -> RunConfig:
    unknown = set(data) - _FIELD_NAMES
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return RunConfig(**data).validate()


def save_config(config: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config_to_dict(config), sort_keys=True))
    return path


def load_config(path: str | Path) -> RunConfig:
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} does not hold a mapping")
    return config_from_dict(data)


def apply_overrides(config: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Apply ``key=value`` string overrides with per-field type coercion."""
    data = config_to_dict(config)
    for key, raw in overrides.items():
        if key not in _FIELD_NAMES:
            raise ValueError(f"unknown config key: {key}")
        current = data[key]
        if key in _TUPLE_FIELDS:
            data[key] = [float(x) if key == "thresholds" else int(x) for x in raw.split(",")]
        elif isinstance(current, bool):
            data[key] = raw.lower() in ("1", "true", "yes", "on")
        elif isinstance(current, int):
            data[key] = int(raw)
        elif isinstance(current, float):
            data[key] = float(raw)
        else:
            data[key] = raw
    return config_from_dict(data)
