"""Multi-frame geometry transformer: latent 3D features and depth decoding.

Alternating frame-local and cross-frame attention over patch tokens; a depth
head decodes per-token patches back to a full-resolution depth map. Trained
once on synthetic depth supervision, then frozen for policy training.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .containers import (GEOMETRY_MAGIC, arrays_to_state_dict, read_container,
                         state_dict_to_arrays, write_container)
from .nn_blocks import SelfAttnBlock

MAX_FRAMES = 32


class DivergenceError(Exception):
    pass


@dataclass
class GeometryFeatures:
    latents: torch.Tensor      # [T, P, D_g]
    frame_times: np.ndarray    # [T], strictly increasing

    def __post_init__(self):
        assert torch.isfinite(self.latents).all()
        times = np.asarray(self.frame_times)
        assert times.ndim == 1 and len(times) == self.latents.shape[0]
        assert np.all(np.diff(times) > 0) or len(times) <= 1


class GeometryEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.grid = cfg.image_size // cfg.patch_size
        self.n_patches = self.grid ** 2
        patch_dim = cfg.patch_size ** 2 * 3
        self.patch_embed = nn.Linear(patch_dim, cfg.d_geom)
        self.pos = nn.Parameter(torch.randn(self.n_patches, cfg.d_geom) * 0.02)
        self.time_embed = nn.Embedding(MAX_FRAMES, cfg.d_geom)
        nn.init.normal_(self.time_embed.weight, std=0.02)
        self.local_blocks = nn.ModuleList(
            SelfAttnBlock(cfg.d_geom, cfg.geom_heads, 2 * cfg.d_geom)
            for _ in range(cfg.geom_blocks))
        self.global_blocks = nn.ModuleList(
            SelfAttnBlock(cfg.d_geom, cfg.geom_heads, 2 * cfg.d_geom)
            for _ in range(cfg.geom_blocks))
        self.depth_norm = nn.LayerNorm(cfg.d_geom)
        self.depth_head = nn.Linear(cfg.d_geom, cfg.patch_size ** 2)

    def _patchify(self, frames: torch.Tensor) -> torch.Tensor:
        b, h, w, c = frames.shape
        s, p = self.cfg.image_size, self.cfg.patch_size
        if (h, w, c) != (s, s, 3):
            raise ValueError(f"expected [{s},{s},3] frames, got {tuple(frames.shape[1:])}")
        x = frames.reshape(b, self.grid, p, self.grid, p, c)
        return x.permute(0, 1, 3, 2, 4, 5).reshape(b, self.n_patches, p * p * c)

    def forward(self, frames: torch.Tensor, frame_times=None,
                use_time_encoding=None) -> torch.Tensor:
        """frames [B, T, H, W, 3] -> latents [B, T, P, D_g]."""
        b, t = frames.shape[:2]
        if frame_times is None:
            frame_times = torch.arange(t, device=frames.device)
        else:
            frame_times = torch.as_tensor(np.asarray(frame_times)).long()
        if use_time_encoding is None:
            use_time_encoding = self.cfg.use_time_encoding
        x = self.patch_embed(self._patchify(frames.reshape(b * t, *frames.shape[2:])))
        x = x + self.pos
        if use_time_encoding:
            te = self.time_embed(frame_times.clamp(0, MAX_FRAMES - 1) % MAX_FRAMES)
            x = x + te.repeat(b, 1).reshape(b * t, 1, -1)
        for local, global_ in zip(self.local_blocks, self.global_blocks):
            x = local(x)                                   # within each frame
            x = x.reshape(b, t * self.n_patches, -1)
            x = global_(x)                                 # across frames
            x = x.reshape(b * t, self.n_patches, -1)
        return x.reshape(b, t, self.n_patches, -1)

    def decode_depth_tokens(self, latents: torch.Tensor) -> torch.Tensor:
        """latents [..., P, D_g] -> depth [..., H, W], non-negative."""
        lead = latents.shape[:-2]
        x = self.depth_head(self.depth_norm(latents))
        p, g = self.cfg.patch_size, self.grid
        x = x.reshape(*lead, g, g, p, p)
        x = x.movedim(-2, -3).reshape(*lead, g * p, g * p)
        return F.softplus(x)


def aggregate_3d(frames, encoder: GeometryEncoder, frame_times=None,
                 use_time_encoding=None) -> GeometryFeatures:
    """Frame sequence [T, H, W, 3] -> GeometryFeatures. Deterministic."""
    t = torch.as_tensor(np.asarray(frames), dtype=torch.float32)
    if t.dim() != 4:
        raise ValueError("frames must be [T, H, W, 3]")
    if frame_times is None:
        frame_times = np.arange(t.shape[0])
    with torch.no_grad():
        latents = encoder(t.unsqueeze(0), frame_times, use_time_encoding)[0]
    return GeometryFeatures(latents=latents, frame_times=np.asarray(frame_times))


def decode_depth(feats: GeometryFeatures, encoder: GeometryEncoder) -> torch.Tensor:
    with torch.no_grad():
        return encoder.decode_depth_tokens(feats.latents)


def make_future_labels(episode, t: int, n: int, encoder: GeometryEncoder):
    """Supervision targets from the frame at t+n only (single-frame window).

    Returns (depth [H, W], latents [P, D_g]); both detached so no gradient can
    reach the label path.
    """
    if t + n >= len(episode):
        raise IndexError(f"horizon overflow: t+n = {t + n} >= {len(episode)}")
    frame = episode.frames[t + n]
    feats = aggregate_3d(frame[None], encoder, frame_times=[0],
                         use_time_encoding=False)
    depth = decode_depth(feats, encoder)[0]
    return depth.detach(), feats.latents[0].detach()


def batch_future_depth_labels(frames: torch.Tensor, encoder: GeometryEncoder) -> torch.Tensor:
    """Batched label generation: future frames [B, H, W, 3] -> depth [B, H, W]."""
    with torch.no_grad():
        latents = encoder(frames.unsqueeze(1), frame_times=[0],
                          use_time_encoding=False)[:, 0]
        return encoder.decode_depth_tokens(latents)


def pretrain_geometry(episodes, cfg: ModelConfig, steps: int = 300,
                      lr: float = 1e-3, batch_size: int = 16, seed: int = 0,
                      window: int = 2, log_every: int = 50, quiet: bool = True):
    """Train a GeometryEncoder on rendered depth, freeze it, return it.

    Minimizes mean-squared depth error on random multi-frame windows drawn
    from `episodes`. Deterministic given `seed`.
    """
    torch.manual_seed(seed)
    encoder = GeometryEncoder(cfg)
    gen = torch.Generator().manual_seed(seed + 1)
    opt = torch.optim.Adam(encoder.parameters(), lr=lr)
    frames = [torch.as_tensor(ep.frames) for ep in episodes]
    depths = [torch.as_tensor(ep.depths) for ep in episodes]
    curve = []
    for step in range(steps):
        eps_idx = torch.randint(0, len(episodes), (batch_size,), generator=gen)
        fb, db, times = [], [], []
        for ei in eps_idx.tolist():
            t_max = frames[ei].shape[0] - window
            t0 = int(torch.randint(0, t_max, (1,), generator=gen))
            fb.append(frames[ei][t0:t0 + window])
            db.append(depths[ei][t0:t0 + window])
        fb = torch.stack(fb)
        db = torch.stack(db)
        latents = encoder(fb, frame_times=np.arange(window))
        pred = encoder.decode_depth_tokens(latents)
        loss = F.mse_loss(pred, db)
        if not torch.isfinite(loss):
            raise DivergenceError(f"geometry pretraining diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        curve.append(loss.item())
        if not quiet and step % log_every == 0:
            print(f"[geometry] step {step} depth mse {loss:.5f}")
    for p in encoder.parameters():
        p.requires_grad_(False)
    encoder.eval()
    encoder.training_curve = curve
    return encoder


def save_geometry(encoder: GeometryEncoder, path, seed: int = 0) -> None:
    from .config import config_to_dict
    meta = {"config": config_to_dict(encoder.cfg), "seed": seed}
    write_container(path, GEOMETRY_MAGIC, meta,
                    state_dict_to_arrays(encoder.state_dict()))


def load_geometry(path) -> GeometryEncoder:
    meta, arrays = read_container(path, GEOMETRY_MAGIC)
    cfg = ModelConfig(**meta["config"])
    encoder = GeometryEncoder(cfg)
    encoder.load_state_dict(arrays_to_state_dict(arrays))
    for p in encoder.parameters():
        p.requires_grad_(False)
    encoder.eval()
    return encoder
