"""Multi-frequency action-chunking imitation learning.

A desk-scale framework: diffusion-based policies predict action chunks at
several sampling frequencies jointly, and an entropy-gated executor picks
the execution frequency per decision from the spread of parallel samples.
"""

__version__ = "0.1.0"

from .temporal import (
    Action,
    FrequencyLadder,
    HierarchicalChunk,
    HierarchicalHistory,
    Observation,
    flatten,
    resample_chunk,
    resample_history,
    unflatten,
)

__all__ = [
    "Action",
    "FrequencyLadder",
    "HierarchicalChunk",
    "HierarchicalHistory",
    "Observation",
    "flatten",
    "resample_chunk",
    "resample_history",
    "unflatten",
    "__version__",
]
