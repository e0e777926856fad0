"""Decoder-style multimodal backbone with dual learnable query banks.

Token order is fixed: [history | text | state | image | spatial-geometric
queries | action queries]. Context tokens attend only to context; spatial
queries additionally attend to themselves; action queries attend to
everything (the action-to-spatial edge is toggleable).
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .config import ModelConfig
from .nn_blocks import NumericError, SelfAttnBlock, check_finite


@dataclass
class WorldEmbedding:
    w: torch.Tensor  # [9, D] or [B, 9, D]

    def __post_init__(self):
        assert torch.isfinite(self.w).all()


@dataclass
class ActionEmbedding:
    z: torch.Tensor  # [9, D] or [B, 9, D]

    def __post_init__(self):
        assert torch.isfinite(self.z).all()


class QueryBank(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.spatial_geometric_queries = nn.Parameter(
            torch.randn(cfg.n_queries, cfg.d_model) * 0.02)
        self.action_queries = nn.Parameter(
            torch.randn(cfg.n_queries, cfg.d_model) * 0.02)


class SequenceLayout:
    """Index bookkeeping for the assembled token sequence."""

    def __init__(self, cfg: ModelConfig):
        self.n_history = cfg.history_tokens
        self.n_text = cfg.text_max_len
        self.n_state = cfg.state_tokens
        self.n_image = (cfg.image_size // cfg.patch_size) ** 2
        self.n_queries = cfg.n_queries
        self.n_context = self.n_history + self.n_text + self.n_state + self.n_image
        self.total = self.n_context + 2 * self.n_queries
        self.spatial = slice(self.n_context, self.n_context + self.n_queries)
        self.action = slice(self.n_context + self.n_queries, self.total)
        self.text = slice(self.n_history, self.n_history + self.n_text)


def build_attention_mask(layout: SequenceLayout,
                         action_attends_spatial: bool) -> torch.Tensor:
    """Boolean [L, L] mask, True = attention disallowed."""
    L = layout.total
    disallow = torch.zeros(L, L, dtype=torch.bool)
    ctx = slice(0, layout.n_context)
    # context rows never see query columns
    disallow[ctx, layout.spatial] = True
    disallow[ctx, layout.action] = True
    # spatial query rows never see action query columns
    disallow[layout.spatial, layout.action] = True
    if not action_attends_spatial:
        disallow[layout.action, layout.spatial] = True
    return disallow


def assemble_tokens(history: torch.Tensor, text: torch.Tensor,
                    state: torch.Tensor, image: torch.Tensor,
                    queries: QueryBank, layout: SequenceLayout,
                    text_mask=None, action_attends_spatial: bool = True):
    """Batched block embeddings -> (sequence [B, L, D], attn mask, pad mask).

    All blocks must share the model width; text padding positions are folded
    into the key-padding mask.
    """
    parts = [history, text, state, image]
    widths = {p.shape[-1] for p in parts}
    if len(widths) != 1:
        raise ValueError(f"token blocks disagree on model width: {widths}")
    b = history.shape[0]
    for name, block, expect in (("history", history, layout.n_history),
                                ("text", text, layout.n_text),
                                ("state", state, layout.n_state),
                                ("image", image, layout.n_image)):
        if block.shape[1] != expect:
            raise ValueError(f"{name} block has {block.shape[1]} tokens, "
                             f"expected {expect}")
    q = torch.cat([queries.spatial_geometric_queries,
                   queries.action_queries]).expand(b, -1, -1)
    seq = torch.cat([history, text, state, image, q], dim=1)
    attn_mask = build_attention_mask(layout, action_attends_spatial).to(seq.device)
    key_padding = torch.zeros(b, layout.total, dtype=torch.bool, device=seq.device)
    if text_mask is not None:
        key_padding[:, layout.text] = ~torch.as_tensor(
            np.asarray(text_mask), dtype=torch.bool, device=seq.device)
    return seq, attn_mask, key_padding


class PolicyBackbone(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.layout = SequenceLayout(cfg)
        self.pos = nn.Parameter(torch.randn(self.layout.total, cfg.d_model) * 0.02)
        self.layers = nn.ModuleList(
            SelfAttnBlock(cfg.d_model, cfg.n_heads, cfg.d_ff)
            for _ in range(cfg.n_layers))
        self.final_norm = nn.LayerNorm(cfg.d_model)

    def forward(self, seq: torch.Tensor, attn_mask: torch.Tensor,
                key_padding: torch.Tensor):
        """Assembled sequence -> (world embedding [B,9,D], action embedding [B,9,D])."""
        x = seq + self.pos
        for i, layer in enumerate(self.layers):
            x = layer(x, attn_mask=attn_mask, key_padding_mask=key_padding)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activations after backbone layer {i}")
        x = self.final_norm(x)
        return x[:, self.layout.spatial], x[:, self.layout.action]


def dual_query_dependency_report(run_fn, queries: QueryBank, h: float = 1e-3,
                                 n_probes: int = 3, seed: int = 0):
    """Finite-difference sensitivity of each output to the other bank's params.

    `run_fn()` must return (w, z) tensors for a fixed sample using `queries`.
    Returns a 2x2 matrix: rows (w, z), columns (spatial params, action params).
    """
    rng = np.random.default_rng(seed)
    report = np.zeros((2, 2))
    banks = [queries.spatial_geometric_queries, queries.action_queries]
    with torch.no_grad():
        for col, bank in enumerate(banks):
            for _ in range(n_probes):
                i = int(rng.integers(0, bank.shape[0]))
                j = int(rng.integers(0, bank.shape[1]))
                orig = float(bank[i, j])
                bank[i, j] = orig + h
                w_hi, z_hi = run_fn()
                bank[i, j] = orig - h
                w_lo, z_lo = run_fn()
                bank[i, j] = orig
                report[0, col] += float((w_hi - w_lo).abs().max()) / (2 * h)
                report[1, col] += float((z_hi - z_lo).abs().max()) / (2 * h)
    return report / n_probes
