"""Demo generation, normalization, persistence, and batch sampling."""

from __future__ import annotations

import numpy as np
import pytest

from mfpolicy import dataset as ds
from mfpolicy.temporal import FrequencyLadder

LADDER = FrequencyLadder(strides=(1, 2, 4), thresholds=None)


@pytest.fixture(scope="module")
def demos():
    return ds.generate_demos("latch_close", count=6, seed=0)


# -- generation ----------------------------------------------------------------


def test_generate_demos_all_successful(demos):
    assert len(demos) == 6
    assert all(e.success for e in demos)
    assert all(e.task_id == "latch_close" for e in demos)
    assert all(len(e) >= 1 for e in demos)


def test_generate_demos_deterministic(demos):
    again = ds.generate_demos("latch_close", count=6, seed=0)
    for a, b in zip(demos, again):
        assert np.array_equal(a.visual, b.visual)
        assert np.array_equal(a.proprio, b.proprio)
        assert np.array_equal(a.actions, b.actions)
        assert a.seed == b.seed


def test_generate_demos_validates_inputs():
    with pytest.raises(ValueError):
        ds.generate_demos("latch_close", count=0, seed=0)
    with pytest.raises(KeyError):
        ds.generate_demos("no_such_task", count=1, seed=0)


def test_retry_budget_exhaustion(monkeypatch):
    original = ds.collect_episode

    def always_failing(task_id, env_seed, expert_seed):
        record = original(task_id, env_seed, expert_seed)
        record.success = False
        return record

    monkeypatch.setattr(ds, "collect_episode", always_failing)
    with pytest.raises(RuntimeError, match="retry budget"):
        ds.generate_demos("latch_close", count=1, seed=0, retry_budget=2)


def test_episode_record_validates_lengths():
    with pytest.raises(ValueError):
        ds.EpisodeRecord(
            visual=np.zeros((3, 2)), proprio=np.zeros((3, 2)),
            actions=np.zeros((2, 3)), task_id="x", success=True, seed=0,
        )


# -- normalization ---------------------------------------------------------------


def test_normalize_maps_extrema_to_unit_interval(demos):
    stats = ds.fit_normalizer(demos)
    acts = np.concatenate([e.actions for e in demos])
    normed = ds.normalize(acts, stats.action_min, stats.action_max)
    assert normed.min() >= -1.0 - 1e-12 and normed.max() <= 1.0 + 1e-12
    # per-dim extrema hit exactly +-1 (degenerate dims excepted)
    spans = acts.max(axis=0) - acts.min(axis=0)
    live = spans >= ds.DEGENERATE_WIDTH
    assert np.allclose(normed.max(axis=0)[live], 1.0)
    assert np.allclose(normed.min(axis=0)[live], -1.0)


def test_constant_dimension_widened_and_centered():
    eps = [
        ds.EpisodeRecord(
            visual=np.full((4, 2), 0.7), proprio=np.zeros((4, 1)),
            actions=np.linspace(0, 1, 12).reshape(4, 3),
            task_id="x", success=True, seed=0,
        )
    ]
    stats = ds.fit_normalizer(eps)
    assert np.all(stats.visual_max - stats.visual_min >= ds.DEGENERATE_WIDTH * 0.99)
    normed = ds.normalize(np.full((1, 2), 0.7), stats.visual_min, stats.visual_max)
    assert np.allclose(normed, 0.0)


def test_normalize_round_trip_tight():
    rng = np.random.default_rng(1)
    lo, hi = np.array([-3.0, 0.1]), np.array([2.0, 0.9])
    x = rng.uniform(-3, 2, size=(100, 2))
    back = ds.denormalize(ds.normalize(x, lo, hi), lo, hi)
    assert np.max(np.abs(back - x)) < 1e-9


def test_fit_normalizer_empty():
    with pytest.raises(ValueError):
        ds.fit_normalizer([])


# -- persistence -----------------------------------------------------------------


def test_episode_and_stats_round_trip(tmp_path, demos):
    stats = ds.fit_normalizer(demos)
    ds.save_episodes(tmp_path, demos)
    ds.save_stats(tmp_path, "latch_close", stats)
    loaded = ds.load_episodes(tmp_path, "latch_close")
    assert len(loaded) == len(demos)
    for a, b in zip(demos, loaded):
        assert np.array_equal(a.visual, b.visual)
        assert np.array_equal(a.actions, b.actions)
        assert (a.task_id, a.success, a.seed) == (b.task_id, b.success, b.seed)
    loaded_stats = ds.load_stats(tmp_path, "latch_close")
    for key, value in stats.as_arrays().items():
        assert np.array_equal(loaded_stats.as_arrays()[key], value)


def test_load_missing_dataset(tmp_path):
    with pytest.raises(FileNotFoundError):
        ds.load_episodes(tmp_path, "latch_close")


# -- batch sampling ----------------------------------------------------------------


def test_sample_batch_shapes_and_range(demos):
    stats = ds.fit_normalizer(demos)
    rng = np.random.default_rng(0)
    batch = ds.sample_batch(demos, stats, LADDER, 3, 8, batch=128, rng=rng)
    d_v = demos[0].visual.shape[1]
    assert batch.visual.shape == (128, 3, 3, d_v)
    assert batch.proprio.shape == (128, 3, 3, 3)
    assert batch.chunk.shape == (128, 3, 8, 3)
    assert np.all(batch.chunk >= -1.0) and np.all(batch.chunk <= 1.0)
    sample = batch.sample(0)
    assert sample.chunk.actions.shape == (3, 8, 3)


def test_sample_batch_deterministic(demos):
    stats = ds.fit_normalizer(demos)
    b1 = ds.sample_batch(demos, stats, LADDER, 3, 8, 32, np.random.default_rng(7))
    b2 = ds.sample_batch(demos, stats, LADDER, 3, 8, 32, np.random.default_rng(7))
    assert np.array_equal(b1.chunk, b2.chunk)
    assert np.array_equal(b1.t, b2.t)


def test_sample_batch_single_step_episode_degenerate():
    ep = ds.EpisodeRecord(
        visual=np.array([[0.3, 0.4]]), proprio=np.array([[0.1, 0.2, 0.0]]),
        actions=np.array([[0.5, 0.5, 1.0]]), task_id="x", success=True, seed=0,
    )
    stats = ds.fit_normalizer([ep])
    batch = ds.sample_batch([ep], stats, LADDER, 3, 8, 16, np.random.default_rng(0))
    assert np.all(batch.t == 0)
    # every window is the fully clamped constant pair
    assert np.allclose(batch.visual, batch.visual[0, 0, 0])
    assert np.allclose(batch.chunk, batch.chunk[0, 0, 0])


def test_uniform_coverage_over_anchor_indices():
    t_len = 40
    ep = ds.EpisodeRecord(
        visual=np.zeros((t_len, 2)), proprio=np.zeros((t_len, 3)),
        actions=np.linspace(0, 1, t_len * 3).reshape(t_len, 3),
        task_id="x", success=True, seed=0,
    )
    stats = ds.fit_normalizer([ep])
    rng = np.random.default_rng(123)
    draws = 100_000
    counts = np.zeros(t_len)
    for _ in range(draws // 1000):
        batch = ds.sample_batch([ep], stats, LADDER, 2, 2, 1000, rng)
        counts += np.bincount(batch.t, minlength=t_len)
    p = 1.0 / t_len
    sigma = np.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) <= 3.5 * sigma)
