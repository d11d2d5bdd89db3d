"""Entropy estimation, threshold gating, and rollout mechanics."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from mfpolicy import diffusion, envbench
from mfpolicy.dataset import fit_normalizer, generate_demos
from mfpolicy.executor import (
    RolloutConfig,
    decide,
    estimate_entropy,
    read_trace_jsonl,
    rollout,
    select_frequency,
)
from mfpolicy.network import ChunkDenoiser, DenoiserConfig
from mfpolicy.temporal import FrequencyLadder

GAUSS_ENTROPY_1 = 0.5 * (math.log(2 * math.pi) + 1.0)  # entropy of N(0, 1)


def chunks_from_scalars(values, m=1, lc=1, da=1) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).reshape(-1, 1, 1, 1) * np.ones((1, m, lc, da))


# -- entropy oracle ------------------------------------------------------------


def test_entropy_matches_numeric_integration_for_unit_gaussian():
    # independent oracle: differential entropy of N(0,1) by quadrature
    pdf = lambda x: math.exp(-x * x / 2) / math.sqrt(2 * math.pi)
    oracle, _ = quad(lambda x: -pdf(x) * math.log(pdf(x)), -12, 12)
    est = estimate_entropy(chunks_from_scalars([-1.0, 0.0, 1.0]))
    assert est.overall == pytest.approx(oracle, abs=1e-9)
    assert est.overall == pytest.approx(GAUSS_ENTROPY_1, abs=1e-12)


def test_entropy_of_identical_samples_floors():
    est = estimate_entropy(chunks_from_scalars([0.4] * 10, m=2, lc=3, da=2))
    assert est.per_step.shape == (2, 3)
    assert np.allclose(est.per_step, GAUSS_ENTROPY_1 + math.log(1e-6))
    assert est.overall == pytest.approx(-12.396572, abs=1e-5)


def test_entropy_zero_at_reference_spread():
    sigma = 1.0 / math.sqrt(2 * math.pi * math.e)
    est = estimate_entropy(chunks_from_scalars([-sigma, 0.0, sigma]))
    assert abs(est.overall) < 1e-12


def test_entropy_averages_dimensions_then_positions():
    rng = np.random.default_rng(0)
    samples = rng.normal(size=(50, 2, 4, 3))
    est = estimate_entropy(samples)
    var = samples.var(axis=0, ddof=1)
    per_dim = GAUSS_ENTROPY_1 + 0.5 * np.log(var)
    assert np.allclose(est.per_step, per_dim.mean(axis=-1))
    assert est.overall == pytest.approx(est.per_step.mean())


def test_entropy_needs_two_samples():
    with pytest.raises(ValueError):
        estimate_entropy(np.zeros((1, 1, 1, 1)))


def test_entropy_scaling_adds_log_c():
    rng = np.random.default_rng(3)
    samples = rng.normal(size=(40, 3, 8, 2))
    base = estimate_entropy(samples)
    for c in (2.0, 5.0):
        scaled = estimate_entropy(samples * c)
        assert np.allclose(scaled.per_step, base.per_step + math.log(c), atol=1e-12)


def test_entropy_translation_invariance():
    rng = np.random.default_rng(4)
    samples = rng.normal(size=(30, 2, 4, 3))
    shifted = samples + rng.normal(size=(1, 2, 4, 3))
    a, b = estimate_entropy(samples), estimate_entropy(shifted)
    assert np.allclose(a.per_step, b.per_step, atol=1e-10)
    assert a.overall == pytest.approx(b.overall, abs=1e-10)


def test_entropy_estimator_consistency_over_sigma_range():
    # for N(mu, sigma^2) draws, the estimate converges to log(sqrt(2*pi*e)*sigma)
    rng = np.random.default_rng(11)
    for sigma in (0.01, 0.1, 1.0):
        draws = rng.normal(2.0, sigma, size=(1000, 100))
        estimates = [
            estimate_entropy(chunks_from_scalars(draws[i])).overall for i in range(1000)
        ]
        truth = GAUSS_ENTROPY_1 + math.log(sigma)
        bias = abs(np.mean(estimates) - truth)
        assert bias <= 0.05 * abs(truth)


# -- frequency selection --------------------------------------------------------


REFERENCE_LADDER = FrequencyLadder(
    strides=(1, 2, 4), thresholds=(-math.inf, -6.0, -5.5, math.inf)
)


@pytest.mark.parametrize(
    "entropy,expected",
    [(-6.5, 0), (-5.7, 1), (-5.0, 2)],
)
def test_reference_threshold_table(entropy, expected):
    assert select_frequency(entropy, REFERENCE_LADDER) == expected


def test_threshold_boundaries_use_half_open_intervals():
    # value at a threshold belongs to the interval it closes: (lo, hi]
    assert select_frequency(-6.0, REFERENCE_LADDER) == 0
    assert select_frequency(-5.5, REFERENCE_LADDER) == 1


@given(
    cuts=st.lists(
        st.floats(-20, 20, allow_nan=False), min_size=1, max_size=4, unique=True
    ),
    value=st.floats(-25, 25, allow_nan=False),
)
@settings(max_examples=120, deadline=None)
def test_select_frequency_is_a_pure_step_function(cuts, value):
    cuts = sorted(cuts)
    if any(b - a < 1e-9 for a, b in zip(cuts, cuts[1:])):
        return
    strides = tuple(2**i for i in range(len(cuts) + 1))
    ladder = FrequencyLadder(strides=strides, thresholds=(-math.inf, *cuts, math.inf))
    idx = select_frequency(value, ladder)
    # piecewise-constant: same interval -> same index
    assert idx == sum(value > c for c in cuts)
    inside = value
    for other in (inside - 1e-12, inside + 1e-12):
        if sum(other > c for c in cuts) == idx:
            assert select_frequency(other, ladder) == idx


# -- decide ----------------------------------------------------------------------


class CollapsingModel(torch.nn.Module):
    """Fake denoiser whose reverse step sends every sample to zero.

    With a single-step schedule the prediction x / eps_coef makes the
    update alpha * (x - eps_coef * x / eps_coef) vanish, so all N draws
    are identical.
    """

    def __init__(self, config: DenoiserConfig, sched: diffusion.DiffusionSchedule):
        super().__init__()
        self.config = config
        self._coef = float(sched.eps_coef[sched.num_steps])
        self._dummy = torch.nn.Parameter(torch.zeros(1))

    def conditioning_features(self, visual, proprio):
        return torch.zeros(1, self.config.trunk_length, 1)

    def denoise_with_features(self, noisy_chunk, k, cond):
        return noisy_chunk / self._coef


SMALL_CONFIG = DenoiserConfig(
    num_frequencies=3, history_length=3, chunk_length=8, action_dim=3,
    visual_dim=3, proprio_dim=3, hidden_width=16, unet_channel_mults=(1, 2),
    step_embed_dim=16, attention_heads=2,
)


def test_decide_degenerate_sampler_selects_highest_frequency():
    sched = diffusion.make_schedule(1)
    model = CollapsingModel(SMALL_CONFIG, sched)
    visual = torch.zeros(3, 3, 3)
    proprio = torch.zeros(3, 3, 3)
    decision = decide(
        model, sched, visual, proprio, REFERENCE_LADDER, n_samples=6,
        generator=torch.Generator().manual_seed(0),
    )
    assert decision.frequency_index == 0
    assert np.allclose(decision.actions, 0.0)
    assert decision.entropy.overall == pytest.approx(-12.396572, abs=1e-5)
    assert decision.entropy.n_samples == 6


def test_decide_requires_two_samples():
    sched = diffusion.make_schedule(1)
    model = CollapsingModel(SMALL_CONFIG, sched)
    with pytest.raises(ValueError):
        decide(model, sched, torch.zeros(3, 3, 3), torch.zeros(3, 3, 3),
               REFERENCE_LADDER, n_samples=1)


def test_decide_deterministic_under_fixed_seed():
    torch.manual_seed(0)
    model = ChunkDenoiser(SMALL_CONFIG).eval()
    sched = diffusion.make_schedule(5)
    visual, proprio = torch.zeros(3, 3, 3), torch.zeros(3, 3, 3)
    d1 = decide(model, sched, visual, proprio, REFERENCE_LADDER, 4,
                torch.Generator().manual_seed(42))
    d2 = decide(model, sched, visual, proprio, REFERENCE_LADDER, 4,
                torch.Generator().manual_seed(42))
    assert d1.frequency_index == d2.frequency_index
    assert np.array_equal(d1.actions, d2.actions)


# -- rollout ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def latch_setup():
    episodes = generate_demos("latch_close", count=4, seed=1)
    stats = fit_normalizer(episodes)
    torch.manual_seed(7)
    config = DenoiserConfig(
        num_frequencies=3, history_length=3, chunk_length=8, action_dim=3,
        visual_dim=3, proprio_dim=3, hidden_width=16, unet_channel_mults=(1, 2),
        step_embed_dim=16, attention_heads=2,
    )
    model = ChunkDenoiser(config).eval()
    sched = diffusion.make_schedule(4)
    return model, sched, stats


def run_once(latch_setup, seed=0, **kwargs):
    model, sched, stats = latch_setup
    env = envbench.make_env("latch_close", seed)
    cfg = RolloutConfig(history_length=3, action_horizon=8, n_samples=3, **kwargs)
    return rollout(model, sched, stats, env, REFERENCE_LADDER, cfg,
                   torch.Generator().manual_seed(seed))


def test_rollout_trace_accounting(latch_setup):
    trace = run_once(latch_setup)
    assert trace.records, "rollout produced no decisions"
    assert trace.executed_commands == sum(r.commands for r in trace.records)
    assert trace.base_steps_elapsed >= trace.executed_commands
    total_steps = sum(r.commands * r.stride for r in trace.records)
    assert trace.base_steps_elapsed == total_steps
    for record in trace.records:
        assert record.stride == REFERENCE_LADDER.strides[record.frequency_index]


def test_rollout_determinism(latch_setup):
    t1 = run_once(latch_setup, seed=3)
    t2 = run_once(latch_setup, seed=3)
    assert t1.records == t2.records
    assert (t1.success, t1.executed_commands, t1.base_steps_elapsed) == (
        t2.success, t2.executed_commands, t2.base_steps_elapsed)


def test_fixed_override_matches_collapsed_thresholds(latch_setup):
    model, sched, stats = latch_setup
    forced = run_once(latch_setup, seed=5, frequency_override=0)

    collapsed = FrequencyLadder(
        strides=(1, 2, 4), thresholds=(-math.inf, 1e300, 2e300, math.inf)
    )
    env = envbench.make_env("latch_close", 5)
    cfg = RolloutConfig(history_length=3, action_horizon=8, n_samples=3)
    gated = rollout(model, sched, stats, env, collapsed, cfg,
                    torch.Generator().manual_seed(5))
    assert [r.frequency_index for r in gated.records] == [0] * len(gated.records)
    assert [r.effector_x for r in gated.records] == [r.effector_x for r in forced.records]
    assert gated.executed_commands == forced.executed_commands


def test_rollout_trace_jsonl_round_trip(latch_setup, tmp_path):
    trace = run_once(latch_setup, seed=2)
    path = trace.write_jsonl(tmp_path / "trace.jsonl")
    loaded = read_trace_jsonl(path)
    assert loaded.task_id == trace.task_id
    assert loaded.success == trace.success
    assert loaded.executed_commands == trace.executed_commands
    assert loaded.records == trace.records


def test_rollout_validates_action_horizon(latch_setup):
    model, sched, stats = latch_setup
    env = envbench.make_env("latch_close", 0)
    cfg = RolloutConfig(history_length=3, action_horizon=9, n_samples=2)
    with pytest.raises(ValueError):
        rollout(model, sched, stats, env, REFERENCE_LADDER, cfg)
