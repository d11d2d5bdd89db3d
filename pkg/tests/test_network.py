"""Denoiser building blocks: modulation, attention pooling, trunk, weights IO."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from gradcheck import check_gradients
from mfpolicy.dataset import NormalizationStats
from mfpolicy.network import (
    ChunkDenoiser,
    CrossAttentionPool,
    DenoiserConfig,
    FiLM,
    SinusoidalStepEmbedding,
    StepEmbedding,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)
from mfpolicy.temporal import FrequencyLadder

TINY = DenoiserConfig(
    num_frequencies=3, history_length=3, chunk_length=8, action_dim=3,
    visual_dim=4, proprio_dim=3, hidden_width=16, unet_channel_mults=(1, 2),
    step_embed_dim=16, attention_heads=2,
)


def random_inputs(cfg: DenoiserConfig, batch=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    chunk = torch.randn(batch, cfg.trunk_length, cfg.action_dim, generator=g)
    visual = torch.randn(batch, cfg.num_frequencies, cfg.history_length, cfg.visual_dim, generator=g)
    proprio = torch.randn(batch, cfg.num_frequencies, cfg.history_length, cfg.proprio_dim, generator=g)
    return chunk, visual, proprio


# -- FiLM ---------------------------------------------------------------------


def test_film_identity_at_identity_weights():
    film = FiLM(4, 4)
    with torch.no_grad():
        film.scale.weight.zero_()
        film.scale.bias.fill_(1.0)
        film.shift.weight.zero_()
        film.shift.bias.zero_()
    x = torch.randn(2, 5, 4)
    cond = torch.randn(2, 5, 4)
    assert torch.equal(film(cond, x), x)


def test_film_zero_input_returns_shift():
    film = FiLM(3, 3)
    with torch.no_grad():
        film.shift.weight.normal_()
        film.shift.bias.normal_()
    cond = torch.randn(2, 4, 3)
    out = film(cond, torch.zeros(2, 4, 3))
    assert torch.allclose(out, film.shift(cond))


def test_film_rejects_mismatched_shapes():
    film = FiLM(3, 3)
    with pytest.raises(ValueError):
        film(torch.zeros(2, 4, 3), torch.zeros(2, 5, 3))


def test_film_gradients_match_finite_differences():
    torch.manual_seed(0)
    film = FiLM(3, 3).double()
    with torch.no_grad():
        for p in film.parameters():
            p.normal_()
    cond = torch.randn(2, 2, 3, dtype=torch.float64, requires_grad=True)
    x = torch.randn(2, 2, 3, dtype=torch.float64, requires_grad=True)
    weight = torch.randn(2, 2, 3, dtype=torch.float64)

    def loss():
        return (film(cond, x) * weight).sum()

    tensors = [cond, x] + list(film.parameters())
    check_gradients(loss, tensors, tol=1e-4)


# -- cross-attention pooling -----------------------------------------------------


def make_identity_attention(dim: int, heads: int = 2) -> CrossAttentionPool:
    pool = CrossAttentionPool(dim, heads)
    with torch.no_grad():
        for lin in (pool.to_query, pool.to_key, pool.to_value, pool.to_out):
            lin.weight.copy_(torch.eye(dim))
            lin.bias.zero_()
    return pool


def test_attention_identical_values_returns_that_value():
    pool = make_identity_attention(4)
    token = torch.randn(1, 1, 4).repeat(2, 6, 1)
    out = pool(token)
    assert torch.allclose(out, token[:, :1], atol=1e-6)


def test_attention_single_token_identity_projections():
    pool = make_identity_attention(4)
    token = torch.randn(3, 1, 4)
    out = pool(token)
    assert torch.allclose(out, token, atol=1e-6)


def test_attention_weights_sum_to_one():
    torch.manual_seed(1)
    pool = CrossAttentionPool(8, heads=4)
    tokens = torch.randn(3, 11, 8)
    _, weights = pool(tokens, return_weights=True)
    assert weights.shape == (3, 4, 11)
    assert torch.allclose(weights.sum(-1), torch.ones(3, 4), atol=1e-6)


def test_attention_gradients_match_finite_differences():
    torch.manual_seed(0)
    pool = CrossAttentionPool(4, heads=2).double()
    tokens = torch.randn(2, 3, 4, dtype=torch.float64, requires_grad=True)
    weight = torch.randn(2, 1, 4, dtype=torch.float64)

    def loss():
        return (pool(tokens) * weight).sum()

    check_gradients(loss, [tokens] + list(pool.parameters()), tol=1e-4)


# -- step embedding ----------------------------------------------------------------


def test_step_embedding_is_injective_over_schedule_range():
    emb = SinusoidalStepEmbedding(128)
    ks = torch.arange(1, 101)
    out = emb(ks)
    assert out.shape == (100, 128)
    diffs = torch.cdist(out, out) + torch.eye(100) * 1e9
    assert diffs.min() > 1e-3


def test_step_embedding_changes_prediction():
    torch.manual_seed(0)
    model = ChunkDenoiser(TINY).eval()
    chunk, visual, proprio = random_inputs(TINY)
    with torch.no_grad():
        low = model.predict_noise(chunk, 1, visual, proprio)
        high = model.predict_noise(chunk, 100, visual, proprio)
    assert not torch.allclose(low, high)


def test_step_embedding_gradients_match_finite_differences():
    torch.manual_seed(2)
    emb = StepEmbedding(8).double()
    weight = torch.randn(3, 8, dtype=torch.float64)
    ks = torch.tensor([1, 4, 9])

    def loss():
        return (emb(ks) * weight).sum()

    check_gradients(loss, list(emb.parameters()), tol=1e-4)


# -- observation encoding -----------------------------------------------------------


def test_encoder_shape_and_shared_weights():
    torch.manual_seed(0)
    model = ChunkDenoiser(TINY)
    _, visual, proprio = random_inputs(TINY)
    feats = model.encode_observations(visual, proprio)
    assert feats.shape == (2, 3, 3, 16)
    # identical per-frequency inputs -> identical features (shared weights)
    visual_same = visual[:, :1].repeat(1, 3, 1, 1)
    proprio_same = proprio[:, :1].repeat(1, 3, 1, 1)
    feats_same = model.encode_observations(visual_same, proprio_same)
    assert torch.allclose(feats_same[:, 0], feats_same[:, 1])
    assert torch.allclose(feats_same[:, 0], feats_same[:, 2])


def test_encoder_per_frequency_independence():
    torch.manual_seed(0)
    model = ChunkDenoiser(TINY)
    _, visual, proprio = random_inputs(TINY)
    feats = model.encode_observations(visual, proprio)
    visual2 = visual.clone()
    visual2[:, 1] += 1.0
    feats2 = model.encode_observations(visual2, proprio)
    assert torch.allclose(feats[:, 0], feats2[:, 0])
    assert torch.allclose(feats[:, 2], feats2[:, 2])
    assert not torch.allclose(feats[:, 1], feats2[:, 1])


def test_encoder_rejects_wrong_dims():
    model = ChunkDenoiser(TINY)
    with pytest.raises(ValueError):
        model.encode_observations(torch.zeros(1, 3, 3, 5), torch.zeros(1, 3, 3, 3))
    with pytest.raises(ValueError):
        model.encode_observations(torch.zeros(1, 2, 3, 4), torch.zeros(1, 2, 3, 3))


# -- full denoiser -------------------------------------------------------------------


def test_predict_noise_shape_and_determinism():
    torch.manual_seed(0)
    model = ChunkDenoiser(TINY).eval()
    chunk, visual, proprio = random_inputs(TINY)
    with torch.no_grad():
        a = model.predict_noise(chunk, 3, visual, proprio)
        b = model.predict_noise(chunk, 3, visual, proprio)
    assert a.shape == chunk.shape
    assert torch.equal(a, b)


def test_predict_noise_validates_inputs():
    model = ChunkDenoiser(TINY)
    chunk, visual, proprio = random_inputs(TINY)
    with pytest.raises(ValueError):
        model.predict_noise(chunk[:, :5], 1, visual, proprio)
    with pytest.raises(ValueError):
        model.predict_noise(chunk, 0, visual, proprio)


def test_conditioning_path_is_live_for_random_weights():
    torch.manual_seed(3)
    model = ChunkDenoiser(TINY).eval()
    with torch.no_grad():
        for p in model.parameters():
            p.normal_(std=0.3)
    chunk, visual, proprio = random_inputs(TINY)
    cond = model.conditioning_features(visual, proprio)
    with torch.no_grad():
        with_obs = model.denoise_with_features(chunk, 2, cond)
        without_obs = model.denoise_with_features(chunk, 2, torch.zeros_like(cond))
    assert not torch.allclose(with_obs, without_obs)


@pytest.mark.parametrize("mode,src", [("fixed_high", 0), ("fixed_low", 2)])
def test_fixed_condition_modes_tile_one_frequency(mode, src):
    torch.manual_seed(0)
    cfg = DenoiserConfig(**{**vars(TINY), "condition_mode": mode})
    model = ChunkDenoiser(cfg).eval()
    _, visual, proprio = random_inputs(cfg)
    cond = model.conditioning_features(visual, proprio)
    reference = ChunkDenoiser(TINY)
    reference.load_state_dict(model.state_dict())
    feats = reference.encode_observations(visual, proprio)
    tiled = reference._align_to_chunk(feats[:, src : src + 1].repeat(1, 3, 1, 1))
    assert torch.allclose(cond, tiled)


def test_no_fusion_variant_runs_and_differs():
    torch.manual_seed(0)
    cfg_off = DenoiserConfig(**{**vars(TINY), "use_global_fusion": False})
    model = ChunkDenoiser(cfg_off).eval()
    chunk, visual, proprio = random_inputs(cfg_off)
    with torch.no_grad():
        out = model.predict_noise(chunk, 2, visual, proprio)
    assert out.shape == chunk.shape
    assert count_parameters(cfg_off) < count_parameters(TINY)


def test_single_frequency_and_short_history_paths():
    for cfg in (
        DenoiserConfig(**{**vars(TINY), "num_frequencies": 1}),
        DenoiserConfig(**{**vars(TINY), "history_length": 1}),
        DenoiserConfig(**{**vars(TINY), "history_length": 5}),
    ):
        torch.manual_seed(0)
        model = ChunkDenoiser(cfg).eval()
        chunk, visual, proprio = random_inputs(cfg)
        with torch.no_grad():
            out = model.predict_noise(chunk, 1, visual, proprio)
        assert out.shape == chunk.shape


def test_parameter_count_is_config_function():
    torch.manual_seed(0)
    a = count_parameters(DenoiserConfig())
    torch.manual_seed(99)
    b = count_parameters(DenoiserConfig())
    assert a == b == 4_636_059  # frozen regression values
    assert count_parameters(TINY) == 79_819


def test_trunk_length_divisibility_validated():
    with pytest.raises(ValueError):
        DenoiserConfig(num_frequencies=1, chunk_length=6, unet_channel_mults=(1, 2, 4))


# -- checkpoint round trip --------------------------------------------------------------


def test_checkpoint_round_trip_bit_exact(tmp_path):
    torch.manual_seed(5)
    model = ChunkDenoiser(TINY)
    stats = NormalizationStats(
        action_min=np.array([0.0, 0.0, 0.0]), action_max=np.array([1.0, 1.0, 1.0]),
        visual_min=np.zeros(4), visual_max=np.ones(4),
        proprio_min=np.zeros(3), proprio_max=np.ones(3),
    )
    ladder = FrequencyLadder()
    path = save_checkpoint(tmp_path / "ckpt.pt", model, stats, ladder, {"epoch": 3})
    bundle = load_checkpoint(path)
    assert bundle.config == TINY
    assert bundle.ladder == ladder
    assert bundle.trainer_state["epoch"] == 3
    for key, tensor in model.state_dict().items():
        assert torch.equal(bundle.model.state_dict()[key], tensor), key
    for key, arr in stats.as_arrays().items():
        assert np.array_equal(bundle.stats.as_arrays()[key], arr)


def test_checkpoint_rejects_other_schema(tmp_path):
    path = tmp_path / "bad.pt"
    torch.save({"schema_version": 999}, path)
    with pytest.raises(ValueError):
        load_checkpoint(path)
