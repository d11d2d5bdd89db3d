"""Demonstration generation, persistence, normalization, batch sampling.

Episodes are stored one file per episode under ``<root>/<task_id>/`` as
``.npz`` archives (schema documented in :data:`SCHEMA_VERSION` and the
README), with min-max normalization statistics fitted over the training
episodes stored alongside. Everything downstream consumes values mapped
to [-1, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import envbench
from .temporal import (
    FrequencyLadder,
    HierarchicalChunk,
    HierarchicalHistory,
    resample_chunk,
    resample_history,
)

SCHEMA_VERSION = 1
DEGENERATE_WIDTH = 1e-6  # constant dims get widened to this range
TERMINAL_HOLD_FRAMES = 6  # extra post-success hold steps recorded per demo


@dataclass
class EpisodeRecord:
    """One stored demonstration at base rate.

    ``visual[t]`` / ``proprio[t]`` are the frames observed before command
    ``actions[t]`` was issued; all three streams have equal length.
    """

    visual: np.ndarray  # (T, D_v)
    proprio: np.ndarray  # (T, D_p)
    actions: np.ndarray  # (T, D_a)
    task_id: str
    success: bool
    seed: int

    def __post_init__(self) -> None:
        t = len(self.visual)
        if t < 1:
            raise ValueError("episode must contain at least one frame")
        if len(self.proprio) != t or len(self.actions) != t:
            raise ValueError("observation and action streams must have equal length")

    def __len__(self) -> int:
        return len(self.actions)


def collect_episode(task_id: str, env_seed: int, expert_seed: int) -> EpisodeRecord:
    """Run the scripted expert once and record the base-rate streams."""
    env = envbench.make_env(task_id, env_seed)
    expert = envbench.make_expert(env, np.random.default_rng(expert_seed))
    actions = []
    while not env.done:
        actions.append(expert.action())
        env.command(actions[-1], stride=1)
    for _ in range(TERMINAL_HOLD_FRAMES):
        actions.append(expert.action())
        env.command(actions[-1], stride=1)
    # drop the final observation so obs[t] pairs with actions[t]
    return EpisodeRecord(
        visual=env.visual[: len(actions)],
        proprio=env.proprio[: len(actions)],
        actions=np.asarray(actions),
        task_id=task_id,
        success=env.success,
        seed=env_seed,
    )


def generate_demos(
    task_id: str, count: int, seed: int, retry_budget: int = 200
) -> list[EpisodeRecord]:
    """Collect ``count`` successful scripted demonstrations.

    Failed scripted runs are discarded and re-seeded deterministically, so
    the returned episodes are a pure function of (task_id, count, seed).
    Raises RuntimeError once ``retry_budget`` extra attempts are spent.
    """
    envbench.task_spec(task_id)
    if count < 1:
        raise ValueError("count must be >= 1")
    episodes: list[EpisodeRecord] = []
    attempt = 0
    while len(episodes) < count:
        if attempt >= count + retry_budget:
            raise RuntimeError(
                f"scripted expert exhausted retry budget on {task_id}: "
                f"{len(episodes)}/{count} successes in {attempt} attempts"
            )
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(attempt,))
        env_seed, expert_seed = (int(s) for s in ss.generate_state(2))
        attempt += 1
        episode = collect_episode(task_id, env_seed, expert_seed)
        if episode.success:
            episodes.append(episode)
    return episodes


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


@dataclass
class NormalizationStats:
    """Per-dimension min/max for actions and both observation fields."""

    action_min: np.ndarray
    action_max: np.ndarray
    visual_min: np.ndarray
    visual_max: np.ndarray
    proprio_min: np.ndarray
    proprio_max: np.ndarray

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {k: np.asarray(v, dtype=np.float64) for k, v in vars(self).items()}


def _widened_bounds(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = data.min(axis=0).astype(np.float64)
    hi = data.max(axis=0).astype(np.float64)
    narrow = (hi - lo) < DEGENERATE_WIDTH
    center = 0.5 * (hi + lo)
    lo = np.where(narrow, center - 0.5 * DEGENERATE_WIDTH, lo)
    hi = np.where(narrow, center + 0.5 * DEGENERATE_WIDTH, hi)
    return lo, hi


def fit_normalizer(episodes: list[EpisodeRecord]) -> NormalizationStats:
    """Min-max bounds over the training episodes, widened on constant dims."""
    if not episodes:
        raise ValueError("cannot fit normalizer on an empty episode list")
    action_lo, action_hi = _widened_bounds(np.concatenate([e.actions for e in episodes]))
    visual_lo, visual_hi = _widened_bounds(np.concatenate([e.visual for e in episodes]))
    proprio_lo, proprio_hi = _widened_bounds(np.concatenate([e.proprio for e in episodes]))
    return NormalizationStats(
        action_min=action_lo, action_max=action_hi,
        visual_min=visual_lo, visual_max=visual_hi,
        proprio_min=proprio_lo, proprio_max=proprio_hi,
    )


def normalize(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Map training-set extrema to [-1, 1] per dimension."""
    return 2.0 * (x - lo) / (hi - lo) - 1.0


def denormalize(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return 0.5 * (x + 1.0) * (hi - lo) + lo


def normalize_history(h: HierarchicalHistory, stats: NormalizationStats) -> HierarchicalHistory:
    return HierarchicalHistory(
        visual=normalize(h.visual, stats.visual_min, stats.visual_max),
        proprio=normalize(h.proprio, stats.proprio_min, stats.proprio_max),
    )


def normalize_chunk(c: HierarchicalChunk, stats: NormalizationStats) -> HierarchicalChunk:
    return HierarchicalChunk(actions=normalize(c.actions, stats.action_min, stats.action_max))


def denormalize_chunk(c: HierarchicalChunk, stats: NormalizationStats) -> HierarchicalChunk:
    return HierarchicalChunk(actions=denormalize(c.actions, stats.action_min, stats.action_max))


# ---------------------------------------------------------------------------
# on-disk layout: <root>/<task_id>/episode_00042.npz + <root>/<task_id>/stats.npz
# ---------------------------------------------------------------------------


def task_dir(root: str | Path, task_id: str) -> Path:
    return Path(root) / task_id


def save_episodes(root: str | Path, episodes: list[EpisodeRecord]) -> Path:
    directory = task_dir(root, episodes[0].task_id)
    directory.mkdir(parents=True, exist_ok=True)
    for i, ep in enumerate(episodes):
        meta = {
            "schema_version": SCHEMA_VERSION,
            "task_id": ep.task_id,
            "success": bool(ep.success),
            "seed": int(ep.seed),
        }
        np.savez(
            directory / f"episode_{i:05d}.npz",
            visual=ep.visual, proprio=ep.proprio, actions=ep.actions,
            meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        )
    return directory


def load_episodes(root: str | Path, task_id: str) -> list[EpisodeRecord]:
    directory = task_dir(root, task_id)
    paths = sorted(directory.glob("episode_*.npz"))
    if not paths:
        raise FileNotFoundError(f"no episodes under {directory}")
    episodes = []
    for path in paths:
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta["schema_version"] != SCHEMA_VERSION:
                raise ValueError(
                    f"{path}: schema version {meta['schema_version']} "
                    f"!= supported {SCHEMA_VERSION}"
                )
            episodes.append(
                EpisodeRecord(
                    visual=data["visual"], proprio=data["proprio"],
                    actions=data["actions"], task_id=meta["task_id"],
                    success=meta["success"], seed=meta["seed"],
                )
            )
    return episodes


def save_stats(root: str | Path, task_id: str, stats: NormalizationStats) -> Path:
    directory = task_dir(root, task_id)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "stats.npz"
    meta = {"schema_version": SCHEMA_VERSION, "task_id": task_id}
    np.savez(
        path,
        meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        **stats.as_arrays(),
    )
    return path


def load_stats(root: str | Path, task_id: str) -> NormalizationStats:
    path = task_dir(root, task_id) / "stats.npz"
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["schema_version"] != SCHEMA_VERSION:
            raise ValueError(f"{path}: unsupported schema version")
        return NormalizationStats(
            action_min=data["action_min"], action_max=data["action_max"],
            visual_min=data["visual_min"], visual_max=data["visual_max"],
            proprio_min=data["proprio_min"], proprio_max=data["proprio_max"],
        )


# ---------------------------------------------------------------------------
# training samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingSample:
    history: HierarchicalHistory  # normalized
    chunk: HierarchicalChunk  # normalized
    t: int
    episode_id: int


@dataclass(frozen=True)
class TrainingBatch:
    """Stacked normalized samples ready for the denoiser."""

    visual: np.ndarray  # (B, M, L_h, D_v)
    proprio: np.ndarray  # (B, M, L_h, D_p)
    chunk: np.ndarray  # (B, M, L_c, D_a)
    t: np.ndarray  # (B,)
    episode_id: np.ndarray  # (B,)

    def __len__(self) -> int:
        return len(self.t)

    def sample(self, i: int) -> TrainingSample:
        return TrainingSample(
            history=HierarchicalHistory(visual=self.visual[i], proprio=self.proprio[i]),
            chunk=HierarchicalChunk(actions=self.chunk[i]),
            t=int(self.t[i]),
            episode_id=int(self.episode_id[i]),
        )


def sample_batch(
    episodes: list[EpisodeRecord],
    stats: NormalizationStats,
    ladder: FrequencyLadder,
    history_length: int,
    chunk_length: int,
    batch: int,
    rng: np.random.Generator,
) -> TrainingBatch:
    """Uniformly sample (episode, t) pairs and build normalized windows.

    Every base index of every episode is a valid anchor; boundary windows
    rely on the resamplers' edge clamping.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    lengths = np.array([len(e) for e in episodes])
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    flat = rng.integers(0, offsets[-1], size=batch)
    ep_idx = np.searchsorted(offsets, flat, side="right") - 1
    t_idx = flat - offsets[ep_idx]

    visual, proprio, chunks = [], [], []
    for e, t in zip(ep_idx, t_idx):
        hist = resample_history(episodes[e], int(t), ladder, history_length)
        chunk = resample_chunk(episodes[e], int(t), ladder, chunk_length)
        visual.append(hist.visual)
        proprio.append(hist.proprio)
        chunks.append(chunk.actions)

    visual_b = normalize(np.stack(visual), stats.visual_min, stats.visual_max)
    proprio_b = normalize(np.stack(proprio), stats.proprio_min, stats.proprio_max)
    chunk_b = normalize(np.stack(chunks), stats.action_min, stats.action_max)
    return TrainingBatch(
        visual=visual_b.astype(np.float32),
        proprio=proprio_b.astype(np.float32),
        chunk=chunk_b.astype(np.float32),
        t=t_idx.astype(np.int64),
        episode_id=ep_idx.astype(np.int64),
    )
