"""Temporal fusion of per-frame geometry latents into pooled history tokens."""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .config import ModelConfig
from .nn_blocks import CrossAttnBlock, SelfAttnBlock


@dataclass
class HistoryRepresentation:
    tokens: torch.Tensor   # [L_hist, D_model]
    window: tuple          # (t - T, t)

    def __post_init__(self):
        assert torch.isfinite(self.tokens).all()


class HistoryAggregator(nn.Module):
    """Temporal attention over [T, P] latent tokens, then learned-query pooling."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.proj = nn.Linear(cfg.d_geom, cfg.d_model)
        self.temporal_pos = nn.Parameter(
            torch.randn(cfg.history_len, cfg.d_model) * 0.02)
        self.temporal_block = SelfAttnBlock(cfg.d_model, cfg.n_heads, cfg.d_ff)
        self.pool_queries = nn.Parameter(
            torch.randn(cfg.history_tokens, cfg.d_model) * 0.02)
        self.pool = CrossAttnBlock(cfg.d_model, cfg.n_heads, cfg.d_ff)

    def forward(self, latents: torch.Tensor, use_temporal_pos=None) -> torch.Tensor:
        """latents [B, T, P, D_g] -> pooled history tokens [B, L_hist, D_model]."""
        if latents.dim() != 4:
            raise ValueError("expected latents of shape [B, T, P, D_g]")
        b, t, p, _ = latents.shape
        if t != self.cfg.history_len:
            raise ValueError(
                f"history window mismatch: got {t}, config says {self.cfg.history_len}")
        if use_temporal_pos is None:
            use_temporal_pos = self.cfg.use_temporal_pos
        x = self.proj(latents)
        if use_temporal_pos:
            x = x + self.temporal_pos[:, None, :]
        x = x.reshape(b, t * p, -1)
        x = self.temporal_block(x)
        q = self.pool_queries.expand(b, -1, -1)
        return self.pool(q, x)


def aggregate_4d(feats, aggregator: HistoryAggregator, t: int,
                 use_temporal_pos=None) -> HistoryRepresentation:
    """GeometryFeatures over the history window -> HistoryRepresentation at t."""
    times = np.asarray(feats.frame_times)
    if np.any(times >= t):
        raise ValueError("history window must contain only frames before t")
    tokens = aggregator(feats.latents.unsqueeze(0), use_temporal_pos)[0]
    return HistoryRepresentation(tokens=tokens,
                                 window=(t - aggregator.cfg.history_len, t))


def causal_mask_check(episode, t: int, geometry, aggregator,
                      history_len: int = None, eps: float = 0.25,
                      trials: int = 2) -> bool:
    """True iff perturbing frames at time >= t leaves the aggregate unchanged.

    Witness-based: perturbs a few random future frames and recomputes the
    pooled history output through the real feature path.
    """
    from .geometry import aggregate_3d
    from .training.data import history_window

    if history_len is None:
        history_len = aggregator.cfg.history_len
    if t < 1 or t >= len(episode):
        raise IndexError(f"t={t} out of range for episode of length {len(episode)}")

    def compute(frames_all):
        window = history_window(frames_all, t, history_len)
        feats = aggregate_3d(window, geometry)
        return aggregator(feats.latents.unsqueeze(0))[0]

    base = compute(episode.frames)
    rng = np.random.default_rng(0)
    for _ in range(trials):
        tf = int(rng.integers(t, len(episode)))
        frames = episode.frames.copy()
        frames[tf] = np.clip(frames[tf] + rng.uniform(-eps, eps, frames[tf].shape), 0, 1)
        if not torch.allclose(compute(frames), base, atol=0, rtol=0):
            return False
    return True
