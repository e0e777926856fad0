"""Small pre-norm transformer building blocks shared across the model."""

import torch
import torch.nn as nn


class NumericError(Exception):
    """Non-finite activations; carries the offending layer index."""


class SelfAttnBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, d_ff), nn.GELU(), nn.Linear(d_ff, d_model))

    def forward(self, x, attn_mask=None, key_padding_mask=None):
        h = self.norm1(x)
        a, _ = self.attn(h, h, h, attn_mask=attn_mask,
                         key_padding_mask=key_padding_mask, need_weights=False)
        x = x + a
        x = x + self.mlp(self.norm2(x))
        return x


class CrossAttnBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.norm_q = nn.LayerNorm(d_model)
        self.norm_kv = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, d_ff), nn.GELU(), nn.Linear(d_ff, d_model))

    def forward(self, q, kv, key_padding_mask=None):
        h = self.norm_q(q)
        k = self.norm_kv(kv)
        a, _ = self.attn(h, k, k, key_padding_mask=key_padding_mask,
                         need_weights=False)
        q = q + a
        q = q + self.mlp(self.norm2(q))
        return q


def check_finite(x: torch.Tensor, where: str):
    if not torch.isfinite(x).all():
        raise NumericError(f"non-finite activations at {where}")
