"""Noise-prediction network for hierarchical multi-frequency chunks.

The denoiser consumes a flattened hierarchical chunk (frequency-major
layout, temporal length M * L_c) plus the per-frequency observation
histories, and predicts the injected noise at a given diffusion step:

1. per-position action embedding of the noisy chunk,
2. feature-wise modulation by the matching frequency's observation
   features (encoder weights shared across frequencies),
3. optional global fusion: a learned CLS query cross-attends over all
   per-frequency tokens, its output is concatenated on the temporal axis
   and projected back to M * L_c positions,
4. a second modulation stage, then
5. a 1-D convolutional U-Net with the diffusion-step embedding applied
   as a per-channel scale/shift inside every residual block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

CONDITION_MODES = ("hierarchical", "fixed_high", "fixed_low")


@dataclass(frozen=True)
class DenoiserConfig:
    num_frequencies: int = 3
    history_length: int = 3
    chunk_length: int = 8
    action_dim: int = 3
    visual_dim: int = 4
    proprio_dim: int = 3
    hidden_width: int = 64
    unet_channel_mults: tuple[int, ...] = (1, 2, 4)
    step_embed_dim: int = 128
    attention_heads: int = 4
    groupnorm_groups: int = 8
    kernel_size: int = 5
    condition_mode: str = "hierarchical"
    use_global_fusion: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "unet_channel_mults", tuple(self.unet_channel_mults))
        for name in (
            "num_frequencies", "history_length", "chunk_length", "action_dim",
            "visual_dim", "proprio_dim", "hidden_width", "step_embed_dim",
            "attention_heads", "groupnorm_groups", "kernel_size",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.condition_mode not in CONDITION_MODES:
            raise ValueError(f"condition_mode must be one of {CONDITION_MODES}")
        if self.hidden_width % self.attention_heads:
            raise ValueError("attention_heads must divide hidden_width")
        down_factor = 2 ** (len(self.unet_channel_mults) - 1)
        if self.trunk_length % down_factor:
            raise ValueError(
                f"trunk length M*L_c = {self.trunk_length} must be divisible "
                f"by {down_factor} for {len(self.unet_channel_mults)} levels"
            )

    @property
    def trunk_length(self) -> int:
        return self.num_frequencies * self.chunk_length


class SinusoidalStepEmbedding(nn.Module):
    """Classic sin/cos positional features over the diffusion step index."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, k: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        scale = math.log(10000.0) / max(half - 1, 1)
        freqs = torch.exp(torch.arange(half, device=k.device, dtype=torch.float64) * -scale)
        angles = k.double()[:, None] * freqs[None, :]
        emb = torch.cat([angles.sin(), angles.cos()], dim=-1)
        if self.dim % 2:
            emb = F.pad(emb, (0, 1))
        return emb


class StepEmbedding(nn.Module):
    """Sinusoidal features of the step index refined by a small MLP."""

    def __init__(self, dim: int):
        super().__init__()
        self.sinusoid = SinusoidalStepEmbedding(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim),
            nn.Mish(),
            nn.Linear(4 * dim, dim),
        )

    def forward(self, k: torch.Tensor) -> torch.Tensor:
        raw = self.sinusoid(k).to(self.mlp[0].weight.dtype)
        return self.mlp(raw)


class FiLM(nn.Module):
    """Per-position feature-wise linear modulation.

    ``film(cond, x) = scale(cond) * x + shift(cond)`` with scale and shift
    learned affine maps of the conditioning feature. The scale bias starts
    at one so the layer opens near identity.
    """

    def __init__(self, cond_dim: int, channels: int):
        super().__init__()
        self.scale = nn.Linear(cond_dim, channels)
        self.shift = nn.Linear(cond_dim, channels)
        # near-identity start; small nonzero weights keep gradients flowing
        # into whatever produces the conditioning
        nn.init.normal_(self.scale.weight, std=0.02)
        nn.init.ones_(self.scale.bias)
        nn.init.normal_(self.shift.weight, std=0.02)
        nn.init.zeros_(self.shift.bias)

    def forward(self, cond: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        if cond.shape != x.shape and cond.shape[:-1] != x.shape[:-1]:
            raise ValueError(f"cond shape {tuple(cond.shape)} incompatible with x {tuple(x.shape)}")
        return self.scale(cond) * x + self.shift(cond)


class CrossAttentionPool(nn.Module):
    """A learned CLS query attending over a token set.

    Returns a single global token per batch element; the attention weights
    over the inputs sum to one by construction.
    """

    def __init__(self, dim: int, heads: int = 4):
        super().__init__()
        if dim % heads:
            raise ValueError("heads must divide dim")
        self.dim = dim
        self.heads = heads
        self.cls = nn.Parameter(torch.randn(1, 1, dim) * 0.02)
        self.to_query = nn.Linear(dim, dim)
        self.to_key = nn.Linear(dim, dim)
        self.to_value = nn.Linear(dim, dim)
        self.to_out = nn.Linear(dim, dim)

    def forward(
        self, tokens: torch.Tensor, return_weights: bool = False
    ) -> torch.Tensor | tuple[torch.Tensor, torch.Tensor]:
        b, s, _ = tokens.shape
        head_dim = self.dim // self.heads

        def split(x: torch.Tensor) -> torch.Tensor:
            return x.reshape(b, -1, self.heads, head_dim).transpose(1, 2)

        q = split(self.to_query(self.cls.to(tokens.dtype).expand(b, -1, -1)))
        k = split(self.to_key(tokens))
        v = split(self.to_value(tokens))
        logits = q @ k.transpose(-2, -1) / math.sqrt(head_dim)
        weights = logits.softmax(dim=-1)  # (b, heads, 1, s)
        pooled = (weights @ v).transpose(1, 2).reshape(b, 1, self.dim)
        out = self.to_out(pooled)
        if return_weights:
            return out, weights.squeeze(2)
        return out


class ObservationEncoder(nn.Module):
    """Shared per-frame encoder: one small MLP per modality, then a joint
    projection to the hidden width. Applied identically at every frequency."""

    def __init__(self, visual_dim: int, proprio_dim: int, width: int):
        super().__init__()
        self.visual_mlp = nn.Sequential(
            nn.Linear(visual_dim, width), nn.Mish(), nn.Linear(width, width)
        )
        self.proprio_mlp = nn.Sequential(
            nn.Linear(proprio_dim, width), nn.Mish(), nn.Linear(width, width)
        )
        self.joint = nn.Linear(2 * width, width)

    def forward(self, visual: torch.Tensor, proprio: torch.Tensor) -> torch.Tensor:
        v = self.visual_mlp(visual)
        p = self.proprio_mlp(proprio)
        return self.joint(torch.cat([v, p], dim=-1))


class Conv1dBlock(nn.Module):
    """Conv1d -> GroupNorm -> Mish."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, groups: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv1d(in_channels, out_channels, kernel_size, padding=kernel_size // 2),
            nn.GroupNorm(min(groups, out_channels), out_channels),
            nn.Mish(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.block(x)


class ResidualStepBlock(nn.Module):
    """Two conv blocks with a per-channel scale/shift from the step embedding."""

    def __init__(
        self, in_channels: int, out_channels: int, cond_dim: int,
        kernel_size: int, groups: int,
    ):
        super().__init__()
        self.block1 = Conv1dBlock(in_channels, out_channels, kernel_size, groups)
        self.block2 = Conv1dBlock(out_channels, out_channels, kernel_size, groups)
        self.cond_proj = nn.Sequential(nn.Mish(), nn.Linear(cond_dim, 2 * out_channels))
        self.residual = (
            nn.Conv1d(in_channels, out_channels, 1)
            if in_channels != out_channels
            else nn.Identity()
        )

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.block1(x)
        scale, shift = self.cond_proj(cond)[..., None].chunk(2, dim=1)
        h = (1.0 + scale) * h + shift
        h = self.block2(h)
        return h + self.residual(x)


class TemporalUNet(nn.Module):
    """1-D conv U-Net over the trunk with step-embedding conditioning."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        c = config.hidden_width
        channels = [c * m for m in config.unet_channel_mults]
        cond_dim = config.step_embed_dim
        kwargs = dict(cond_dim=cond_dim, kernel_size=config.kernel_size,
                      groups=config.groupnorm_groups)

        self.downs = nn.ModuleList()
        in_ch = c
        for i, ch in enumerate(channels):
            last = i == len(channels) - 1
            self.downs.append(nn.ModuleList([
                ResidualStepBlock(in_ch, ch, **kwargs),
                ResidualStepBlock(ch, ch, **kwargs),
                nn.Conv1d(ch, ch, 3, 2, 1) if not last else nn.Identity(),
            ]))
            in_ch = ch

        mid = channels[-1]
        self.mid1 = ResidualStepBlock(mid, mid, **kwargs)
        self.mid2 = ResidualStepBlock(mid, mid, **kwargs)

        self.ups = nn.ModuleList()
        for i, ch in enumerate(reversed(channels)):
            last = i == len(channels) - 1
            out_ch = channels[max(len(channels) - 2 - i, 0)]
            self.ups.append(nn.ModuleList([
                ResidualStepBlock(ch * 2, out_ch, **kwargs),
                ResidualStepBlock(out_ch, out_ch, **kwargs),
                nn.ConvTranspose1d(out_ch, out_ch, 4, 2, 1) if not last else nn.Identity(),
            ]))

        self.final = nn.Sequential(
            Conv1dBlock(c, c, config.kernel_size, config.groupnorm_groups),
            nn.Conv1d(c, c, 1),
        )

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        skips = []
        for block1, block2, down in self.downs:
            x = block2(block1(x, cond), cond)
            skips.append(x)
            x = down(x)
        x = self.mid2(self.mid1(x, cond), cond)
        for block1, block2, up in self.ups:
            x = torch.cat([x, skips.pop()], dim=1)
            x = block2(block1(x, cond), cond)
            x = up(x)
        return self.final(x)


class ChunkDenoiser(nn.Module):
    """Full noise predictor over flattened hierarchical chunks."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        c = config.hidden_width
        self.obs_encoder = ObservationEncoder(config.visual_dim, config.proprio_dim, c)
        self.action_embed = nn.Linear(config.action_dim, c)
        self.film_pre = FiLM(c, c)
        self.film_post = FiLM(c, c)
        if config.use_global_fusion:
            self.global_pool = CrossAttentionPool(c, config.attention_heads)
            fused_len = (config.num_frequencies + 1) * config.chunk_length
            self.fuse_proj = nn.Linear(fused_len, config.trunk_length)
        self.step_embedding = StepEmbedding(config.step_embed_dim)
        self.unet = TemporalUNet(config)
        self.head = nn.Conv1d(c, config.action_dim, 1)

    # -- observation path ----------------------------------------------------

    def encode_observations(self, visual: torch.Tensor, proprio: torch.Tensor) -> torch.Tensor:
        """Per-frequency features, shape (B, M, L_h, C); weights are shared
        across frequencies so equal inputs produce equal features."""
        cfg = self.config
        if visual.shape[-1] != cfg.visual_dim or proprio.shape[-1] != cfg.proprio_dim:
            raise ValueError(
                f"observation dims {visual.shape[-1]}/{proprio.shape[-1]} do not "
                f"match config {cfg.visual_dim}/{cfg.proprio_dim}"
            )
        if visual.shape[1] != cfg.num_frequencies or visual.shape[2] != cfg.history_length:
            raise ValueError(
                f"history shape {tuple(visual.shape)} does not match "
                f"(B, {cfg.num_frequencies}, {cfg.history_length}, D)"
            )
        return self.obs_encoder(visual, proprio)

    def conditioning_features(self, visual: torch.Tensor, proprio: torch.Tensor) -> torch.Tensor:
        """Observation features aligned to chunk positions, (B, M*L_c, C)."""
        feats = self.encode_observations(visual, proprio)
        m = self.config.num_frequencies
        if self.config.condition_mode == "fixed_high":
            feats = feats[:, :1].expand(-1, m, -1, -1)
        elif self.config.condition_mode == "fixed_low":
            feats = feats[:, -1:].expand(-1, m, -1, -1)
        return self._align_to_chunk(feats)

    def _align_to_chunk(self, feats: torch.Tensor) -> torch.Tensor:
        b, m, l_h, c = feats.shape
        l_c = self.config.chunk_length
        if l_h == l_c:
            return feats.reshape(b, m * l_c, c)
        x = feats.reshape(b * m, l_h, c).transpose(1, 2)
        if l_h == 1:
            x = x.expand(-1, -1, l_c)
        else:
            x = F.interpolate(x, size=l_c, mode="linear", align_corners=True)
        return x.transpose(1, 2).reshape(b, m * l_c, c)

    # -- denoising path --------------------------------------------------------

    def predict_noise(
        self,
        noisy_chunk: torch.Tensor,
        k: torch.Tensor | int,
        visual: torch.Tensor,
        proprio: torch.Tensor,
    ) -> torch.Tensor:
        """Predicted noise with the same (B, M*L_c, D_a) shape as the input."""
        cond = self.conditioning_features(visual, proprio)
        return self.denoise_with_features(noisy_chunk, k, cond)

    def denoise_with_features(
        self, noisy_chunk: torch.Tensor, k: torch.Tensor | int, cond: torch.Tensor
    ) -> torch.Tensor:
        """Denoise against precomputed conditioning features.

        Splitting the observation path out lets callers encode conditioning
        once and reuse it across all diffusion steps and parallel samples.
        """
        cfg = self.config
        if noisy_chunk.dim() != 3 or noisy_chunk.shape[1:] != (cfg.trunk_length, cfg.action_dim):
            raise ValueError(
                f"expected chunk (B, {cfg.trunk_length}, {cfg.action_dim}), "
                f"got {tuple(noisy_chunk.shape)}"
            )
        b = noisy_chunk.shape[0]
        if isinstance(k, int):
            k = torch.full((b,), k, dtype=torch.long, device=noisy_chunk.device)
        if torch.any(k < 1):
            raise ValueError("diffusion step k must be >= 1")
        if cond.shape[0] == 1 and b > 1:
            cond = cond.expand(b, -1, -1)

        x = self.action_embed(noisy_chunk)
        x = self.film_pre(cond, x)
        if cfg.use_global_fusion:
            global_token = self.global_pool(x)
            fused = torch.cat([x, global_token.expand(-1, cfg.chunk_length, -1)], dim=1)
            x = self.fuse_proj(fused.transpose(1, 2)).transpose(1, 2)
        x = self.film_post(cond, x)

        emb = self.step_embedding(k)
        h = self.unet(x.transpose(1, 2), emb)
        return self.head(h).transpose(1, 2)

    forward = predict_noise


def count_parameters(config: DenoiserConfig) -> int:
    """Total trainable parameter count implied by a config."""
    model = ChunkDenoiser(config)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


# ---------------------------------------------------------------------------
# checkpoint file: weights + denoiser config + normalization stats + ladder
# ---------------------------------------------------------------------------

CHECKPOINT_SCHEMA_VERSION = 1


@dataclass
class CheckpointBundle:
    model: ChunkDenoiser
    config: DenoiserConfig
    stats: "NormalizationStats"
    ladder: "FrequencyLadder"
    trainer_state: dict | None = None


def save_checkpoint(path, model: ChunkDenoiser, stats, ladder, trainer_state: dict | None = None):
    """Persist weights plus everything needed to run the policy standalone.

    Weight tensors round-trip bit-exactly; numpy stats are stored as
    tensors so the file stays loadable with ``weights_only=True``.
    """
    from pathlib import Path

    payload = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "config": dict(vars(model.config)),
        "state_dict": model.state_dict(),
        "stats": {k: torch.from_numpy(v.copy()) for k, v in stats.as_arrays().items()},
        "ladder": {
            "strides": list(ladder.strides),
            "base_rate_hz": float(ladder.base_rate_hz),
            "thresholds": list(ladder.thresholds),
        },
        "trainer_state": trainer_state,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> CheckpointBundle:
    from .dataset import NormalizationStats
    from .temporal import FrequencyLadder

    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("schema_version")
    if version != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"{path}: checkpoint schema {version} unsupported")
    cfg_dict = dict(payload["config"])
    cfg_dict["unet_channel_mults"] = tuple(cfg_dict["unet_channel_mults"])
    config = DenoiserConfig(**cfg_dict)
    model = ChunkDenoiser(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    stats = NormalizationStats(**{k: v.numpy() for k, v in payload["stats"].items()})
    ladder = FrequencyLadder(
        strides=tuple(payload["ladder"]["strides"]),
        base_rate_hz=payload["ladder"]["base_rate_hz"],
        thresholds=tuple(payload["ladder"]["thresholds"]),
    )
    return CheckpointBundle(
        model=model, config=config, stats=stats, ladder=ladder,
        trainer_state=payload.get("trainer_state"),
    )
