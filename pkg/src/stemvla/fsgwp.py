"""Future spatial-geometry predictor head and its L2 supervision loss.

Active in training only; the inference path never executes it (see
`execution_plan` in `model.py`).
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .nn_blocks import CrossAttnBlock


class ShapeError(Exception):
    pass


@dataclass
class FutureGeometryPrediction:
    d_hat: torch.Tensor   # [H, W] (or [B, H, W]) predicted future depth
    horizon: int

    def __post_init__(self):
        assert torch.isfinite(self.d_hat).all()
        assert (self.d_hat >= 0).all()


class FutureGeometryHead(nn.Module):
    """Cross-attention upsampling from the 9 world-embedding tokens.

    A learned coarse query grid attends to the world embedding; each grid
    token then decodes one pixel patch. `calls` counts forward executions so
    the inference skip guard is checkable.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.grid = cfg.image_size // 4
        self.queries = nn.Parameter(torch.randn(self.grid ** 2, cfg.d_model) * 0.02)
        self.block = CrossAttnBlock(cfg.d_model, cfg.n_heads, cfg.d_ff)
        self.out = nn.Linear(cfg.d_model, 16)  # one 4x4 pixel patch per token
        self.latent_out = nn.Linear(cfg.d_model, cfg.d_geom)
        self.calls = 0

    def forward(self, w: torch.Tensor) -> torch.Tensor:
        """World embedding [B, 9, D] -> predicted depth [B, H, W]."""
        self.calls += 1
        b = w.shape[0]
        q = self.queries.expand(b, -1, -1)
        x = self.block(q, w)
        g = self.grid
        patch = self.out(x).reshape(b, g, g, 4, 4)
        depth = patch.movedim(-2, -3).reshape(b, g * 4, g * 4)
        return F.softplus(depth)

    def forward_latents(self, w: torch.Tensor) -> torch.Tensor:
        """Alternative target: predicted future latents [B, P, D_geom]."""
        self.calls += 1
        b = w.shape[0]
        p = (self.cfg.image_size // self.cfg.patch_size) ** 2
        q = self.queries[:p].expand(b, -1, -1)
        return self.latent_out(self.block(q, w))


def predict_future_geometry(w: torch.Tensor, head: FutureGeometryHead,
                            horizon: int) -> FutureGeometryPrediction:
    if w.dim() == 2:
        d_hat = head(w.unsqueeze(0))[0]
    else:
        d_hat = head(w)
    return FutureGeometryPrediction(d_hat=d_hat, horizon=horizon)


def fsgwp_loss(d_hat: torch.Tensor, d: torch.Tensor) -> torch.Tensor:
    """Mean squared per-pixel depth error over the H x W grid."""
    if d_hat.shape != d.shape:
        raise ShapeError(f"shape mismatch: {tuple(d_hat.shape)} vs {tuple(d.shape)}")
    if not (torch.isfinite(d_hat).all() and torch.isfinite(d).all()):
        raise ValueError("non-finite depth input")
    return ((d_hat - d) ** 2).mean()
