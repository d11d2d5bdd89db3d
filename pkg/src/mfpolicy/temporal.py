"""Frequency ladder and resampling of base-rate streams.

All policies in this package operate on streams recorded at a fixed base
control rate. A :class:`FrequencyLadder` defines M sampling strides over
that base rate (stride 1 = every base step = highest frequency). History
and chunk resampling slice the base-rate stream into per-frequency windows
that share the current frame and are edge-padded at episode boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_STRIDES = (1, 2, 4)
DEFAULT_BASE_RATE_HZ = 15.0
DEFAULT_THRESHOLDS = (-math.inf, -6.0, -5.5, math.inf)


def _default_thresholds(num_frequencies: int) -> tuple[float, ...]:
    """Sentinel-only thresholds: every entropy selects the one frequency."""
    if num_frequencies == 1:
        return (-math.inf, math.inf)
    if num_frequencies == 3:
        return DEFAULT_THRESHOLDS
    inner = tuple(float(i) for i in range(num_frequencies - 1))
    return (-math.inf,) + inner + (math.inf,)


@dataclass(frozen=True)
class FrequencyLadder:
    """The M sampling strides and the entropy thresholds that gate them.

    strides are strictly ascending base-step strides with ``strides[0] == 1``;
    index 0 is the highest frequency. thresholds has M+1 ascending entries
    with -inf / +inf sentinels so that every real entropy value falls into
    exactly one of the M intervals.
    """

    strides: tuple[int, ...] = DEFAULT_STRIDES
    base_rate_hz: float = DEFAULT_BASE_RATE_HZ
    thresholds: tuple[float, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        strides = tuple(int(s) for s in self.strides)
        object.__setattr__(self, "strides", strides)
        if len(strides) < 1:
            raise ValueError("ladder needs at least one stride")
        if strides[0] != 1:
            raise ValueError(f"first stride must be 1, got {strides[0]}")
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise ValueError(f"strides must be strictly ascending: {strides}")
        if self.base_rate_hz <= 0:
            raise ValueError("base_rate_hz must be positive")
        thresholds = self.thresholds
        if thresholds is None:
            thresholds = _default_thresholds(len(strides))
        thresholds = tuple(float(t) for t in thresholds)
        object.__setattr__(self, "thresholds", thresholds)
        if len(thresholds) != len(strides) + 1:
            raise ValueError(
                f"need {len(strides) + 1} thresholds for {len(strides)} "
                f"frequencies, got {len(thresholds)}"
            )
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError(f"thresholds must be strictly ascending: {thresholds}")
        if thresholds[0] != -math.inf:
            raise ValueError("first threshold must be -inf")
        if thresholds[-1] != math.inf:
            raise ValueError("last threshold must be +inf")

    @property
    def num_frequencies(self) -> int:
        return len(self.strides)

    def frequency_hz(self, m: int) -> float:
        """Nominal rate of frequency index m (informational)."""
        return self.base_rate_hz / self.strides[m]

    def with_thresholds(self, thresholds: tuple[float, ...]) -> "FrequencyLadder":
        return FrequencyLadder(self.strides, self.base_rate_hz, tuple(thresholds))


@dataclass(frozen=True)
class Observation:
    """One base-rate frame: low-dim scene state plus proprioception."""

    visual: np.ndarray
    proprio: np.ndarray

    def __post_init__(self) -> None:
        for name in ("visual", "proprio"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, v)
            if v.ndim != 1:
                raise ValueError(f"{name} must be a 1-D vector, got shape {v.shape}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class Action:
    """One low-level command: absolute effector setpoint plus gripper."""

    command: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.command, dtype=np.float64)
        object.__setattr__(self, "command", v)
        if v.ndim != 1:
            raise ValueError(f"command must be a 1-D vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("command contains non-finite entries")


@dataclass(frozen=True)
class HierarchicalHistory:
    """Per-frequency observation windows, stacked struct-of-arrays style.

    ``visual[m, i]`` and ``proprio[m, i]`` hold the i-th (oldest-first) frame
    of the frequency-m window. All M windows end on the same current frame.
    """

    visual: np.ndarray  # (M, L_h, D_v)
    proprio: np.ndarray  # (M, L_h, D_p)

    def __post_init__(self) -> None:
        if self.visual.ndim != 3 or self.proprio.ndim != 3:
            raise ValueError("history arrays must be (M, L_h, D)")
        if self.visual.shape[:2] != self.proprio.shape[:2]:
            raise ValueError(
                f"visual {self.visual.shape} / proprio {self.proprio.shape} "
                "disagree on (M, L_h)"
            )

    @property
    def num_frequencies(self) -> int:
        return self.visual.shape[0]

    @property
    def length(self) -> int:
        return self.visual.shape[1]


@dataclass(frozen=True)
class HierarchicalChunk:
    """Per-frequency action chunks as one (M, L_c, D_a) array.

    Row m holds L_c setpoints spaced ``strides[m]`` base steps apart,
    starting at the prediction time. Concatenation order over m is fixed,
    so the flattened layout always has temporal length M * L_c.
    """

    actions: np.ndarray  # (M, L_c, D_a)

    def __post_init__(self) -> None:
        if self.actions.ndim != 3:
            raise ValueError(f"chunk must be (M, L_c, D_a), got {self.actions.shape}")

    @property
    def num_frequencies(self) -> int:
        return self.actions.shape[0]

    @property
    def length(self) -> int:
        return self.actions.shape[1]

    def at_frequency(self, m: int) -> np.ndarray:
        """The (L_c, D_a) sequence for frequency index m."""
        return self.actions[m]


def history_indices(t: int, ladder: FrequencyLadder, length: int) -> np.ndarray:
    """Base-step indices of the per-frequency history windows ending at t.

    Row m is ``[t - (length-1)*s_m, ..., t - s_m, t]`` clamped below at 0
    (edge padding: the robot is at rest before the episode starts).
    """
    if length < 1:
        raise ValueError("history length must be >= 1")
    if t < 0:
        raise ValueError("t must be >= 0")
    strides = np.asarray(ladder.strides)[:, None]
    offsets = np.arange(length - 1, -1, -1)[None, :]
    return np.maximum(t - offsets * strides, 0)


def chunk_indices(
    t: int, ladder: FrequencyLadder, length: int, horizon: int
) -> np.ndarray:
    """Base-step indices of the per-frequency chunks starting at t.

    Row m is ``[t, t + s_m, ..., t + (length-1)*s_m]`` clamped above at
    ``horizon - 1`` (terminal hold: the final action repeats past the end).
    """
    if length < 1:
        raise ValueError("chunk length must be >= 1")
    if t < 0:
        raise ValueError("t must be >= 0")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    strides = np.asarray(ladder.strides)[:, None]
    offsets = np.arange(length)[None, :]
    return np.minimum(t + offsets * strides, horizon - 1)


def resample_history(
    episode, t: int, ladder: FrequencyLadder, history_length: int
) -> HierarchicalHistory:
    """Slice an episode's observation streams into a hierarchical history.

    ``episode`` is anything with (T, D) float arrays ``visual`` and
    ``proprio``; t indexes into those streams.
    """
    visual, proprio = episode.visual, episode.proprio
    if len(visual) == 0:
        raise ValueError("episode has no frames")
    if t >= len(visual):
        raise ValueError(f"t={t} beyond episode length {len(visual)}")
    idx = history_indices(t, ladder, history_length)
    return HierarchicalHistory(visual=visual[idx], proprio=proprio[idx])


def resample_chunk(
    episode, t: int, ladder: FrequencyLadder, chunk_length: int
) -> HierarchicalChunk:
    """Slice an episode's action stream into a hierarchical chunk."""
    actions = episode.actions
    if len(actions) == 0:
        raise ValueError("episode has no actions")
    if t >= len(actions):
        raise ValueError(f"t={t} beyond episode length {len(actions)}")
    idx = chunk_indices(t, ladder, chunk_length, len(actions))
    return HierarchicalChunk(actions=actions[idx])


def flatten(chunk: HierarchicalChunk) -> np.ndarray:
    """Lay out a chunk as (M*L_c, D_a), frequency-major then time.

    This is the only layout the denoiser may assume: row ``m*L_c + j`` is
    action j of frequency m.
    """
    m, lc, da = chunk.actions.shape
    return np.ascontiguousarray(chunk.actions).reshape(m * lc, da)


def unflatten(flat: np.ndarray, num_frequencies: int, chunk_length: int) -> HierarchicalChunk:
    """Inverse of :func:`flatten`; exact for all shapes."""
    if flat.ndim != 2:
        raise ValueError(f"expected (M*L_c, D_a), got shape {flat.shape}")
    rows = num_frequencies * chunk_length
    if flat.shape[0] != rows:
        raise ValueError(
            f"row count {flat.shape[0]} != M*L_c = {num_frequencies}*{chunk_length}"
        )
    return HierarchicalChunk(
        actions=flat.reshape(num_frequencies, chunk_length, flat.shape[1])
    )
