"""The full policy: encoders, history fusion, dual-query backbone, heads."""

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import PolicyBackbone, QueryBank, SequenceLayout, assemble_tokens
from .config import ModelConfig
from .diffusion import Denoiser, denoise_loss, make_schedule, sample_actions
from .encoders import ImageEncoder, StateEncoder, TextEncoder, Vocabulary, build_default_vocab
from .fsgwp import FutureGeometryHead, fsgwp_loss
from .geometry import GeometryEncoder
from .history import HistoryAggregator


class ContractViolation(Exception):
    """A train-only head was touched on the inference path."""


def execution_plan(mode: str) -> dict:
    """Which heads run in each mode; train-only heads are skipped at inference."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    train = mode == "train"
    return {"fsgwp": train, "pixel": train, "diffusion_sampler": not train}


class PixelHead(nn.Module):
    """Low-resolution future-frame reconstruction from the world embedding."""

    def __init__(self, cfg: ModelConfig, downsample: int = 4):
        super().__init__()
        self.downsample = downsample
        self.side = cfg.image_size // downsample
        self.net = nn.Sequential(
            nn.LayerNorm(cfg.d_model),
            nn.Linear(cfg.d_model, 2 * cfg.d_model), nn.GELU(),
            nn.Linear(2 * cfg.d_model, self.side ** 2 * 3))
        self.calls = 0

    def forward(self, w: torch.Tensor) -> torch.Tensor:
        self.calls += 1
        b = w.shape[0]
        out = self.net(w.mean(dim=1))
        return torch.sigmoid(out).reshape(b, self.side, self.side, 3)

    def target(self, frames: torch.Tensor) -> torch.Tensor:
        """Average-pool future frames [B, H, W, 3] down to the head resolution."""
        x = frames.permute(0, 3, 1, 2)
        x = F.avg_pool2d(x, self.downsample)
        return x.permute(0, 2, 3, 1)


class StemVLAPolicy(nn.Module):
    def __init__(self, cfg: ModelConfig, geometry: GeometryEncoder,
                 vocab: Vocabulary = None, seed: int = 0,
                 no_4d_history: bool = False):
        super().__init__()
        torch.manual_seed(seed)
        self.cfg = cfg
        self.seed = seed
        self.no_4d_history = no_4d_history
        self.vocab = vocab or build_default_vocab()
        self.geometry = geometry  # frozen feature extractor and label generator
        self.text_encoder = TextEncoder(self.vocab, cfg.d_model, cfg.text_max_len)
        self.image_encoder = ImageEncoder(cfg.image_size, cfg.patch_size,
                                          cfg.d_model, cfg.n_heads, cfg.d_ff)
        self.state_encoder = StateEncoder(cfg.state_dim, cfg.state_tokens,
                                          cfg.d_model, cfg.n_heads, cfg.d_ff)
        self.history_aggregator = HistoryAggregator(cfg)
        self.constant_history = nn.Parameter(
            torch.randn(cfg.history_tokens, cfg.d_model) * 0.02)
        self.queries = QueryBank(cfg)
        self.backbone = PolicyBackbone(cfg)
        self.fsgwp_head = FutureGeometryHead(cfg)
        self.pixel_head = PixelHead(cfg)
        self.denoiser = Denoiser(cfg)
        self.schedule = make_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max)
        self.layout = SequenceLayout(cfg)

    @property
    def dtype(self):
        return self.backbone.pos.dtype

    def history_tokens(self, history_frames: torch.Tensor) -> torch.Tensor:
        b = history_frames.shape[0]
        if self.no_4d_history:
            return self.constant_history.expand(b, -1, -1)
        with torch.no_grad():  # geometry is frozen
            latents = self.geometry(history_frames)
        return self.history_aggregator(latents)

    def _forward(self, batch: dict):
        """Fused forward pass -> (world emb, action emb, percept tokens)."""
        hist = self.history_tokens(batch["history_frames"])
        text = self.text_encoder(batch["text_ids"])
        state = self.state_encoder(batch["state"])
        image = self.image_encoder(batch["frame"])
        seq, attn_mask, key_pad = assemble_tokens(
            hist, text, state, image, self.queries, self.layout,
            text_mask=batch.get("text_mask"),
            action_attends_spatial=self.cfg.action_attends_spatial)
        w, z = self.backbone(seq, attn_mask, key_pad)
        return w, z, torch.cat([image, state], dim=1)

    def embeddings(self, batch: dict):
        """Fused forward pass -> (world embedding, action embedding), [B, 9, D]."""
        w, z, _ = self._forward(batch)
        return w, z

    def conditioning(self, w: torch.Tensor, z: torch.Tensor,
                     percepts: torch.Tensor = None) -> torch.Tensor:
        """Denoiser conditioning tokens.

        The fused queries carry task intent; the raw image and state tokens
        are appended so current-scene evidence stays directly visible to the
        denoiser instead of having to survive the backbone's bottleneck.
        """
        parts = [z]
        if self.cfg.condition_on_world:
            parts.append(w)
        if self.cfg.condition_on_percepts:
            if percepts is None:
                raise ValueError("percept tokens required when "
                                 "condition_on_percepts is set")
            parts.append(percepts)
        return torch.cat(parts, dim=1)

    def training_losses(self, batch: dict, generator: torch.Generator = None,
                        no_fsgwp: bool = False, no_pixel_loss: bool = False,
                        diffusion_k=None, diffusion_eps=None) -> dict:
        """Per-component losses for one batch; skipped heads are not executed."""
        w, z, percepts = self._forward(batch)
        out = {}
        cond = self.conditioning(w, z, percepts)
        out["action"] = denoise_loss(self.denoiser, batch["actions"], cond,
                                     self.schedule, generator,
                                     k=diffusion_k, eps=diffusion_eps)
        if not no_fsgwp:
            if self.cfg.fsgwp_target == "latent":
                from .geometry import aggregate_3d
                with torch.no_grad():
                    target = self.geometry(batch["future_frame"].unsqueeze(1),
                                           frame_times=[0],
                                           use_time_encoding=False)[:, 0]
                pred = self.fsgwp_head.forward_latents(w)
                out["fsgwp"] = ((pred - target.detach()) ** 2).mean()
            else:
                from .geometry import batch_future_depth_labels
                target = batch_future_depth_labels(batch["future_frame"], self.geometry)
                out["fsgwp"] = fsgwp_loss(self.fsgwp_head(w), target.detach())
        if not no_pixel_loss:
            target = self.pixel_head.target(batch["future_frame"])
            pred = self.pixel_head(w)
            out["pixel"] = ((pred - target.detach()) ** 2).mean()
        return out

    @torch.no_grad()
    def act(self, batch: dict, generator: torch.Generator = None) -> torch.Tensor:
        """Inference: sample an action chunk. Train-only heads never run."""
        plan = execution_plan("infer")
        assert not plan["fsgwp"] and not plan["pixel"]
        w, z, percepts = self._forward(batch)
        cond = self.conditioning(w, z, percepts)
        return sample_actions(self.denoiser, cond, self.schedule, generator)


def make_batch(observations, model: StemVLAPolicy) -> dict:
    """Stack Observation objects into model input tensors."""
    dtype = model.dtype
    frames_hist, frames, states, ids, masks = [], [], [], [], []
    for obs in observations:
        i, m = model.vocab.encode(obs.instruction, model.cfg.text_max_len)
        ids.append(i)
        masks.append(m)
        frames_hist.append(obs.frames_history)
        frames.append(obs.frame)
        states.append(obs.state)
    return {
        "history_frames": torch.as_tensor(np.stack(frames_hist), dtype=dtype),
        "frame": torch.as_tensor(np.stack(frames), dtype=dtype),
        "state": torch.as_tensor(np.stack(states), dtype=dtype),
        "text_ids": torch.as_tensor(np.stack(ids)),
        "text_mask": np.stack(masks),
    }


class DiffusionPolicyRunner:
    """Wraps the model as an observation -> action policy for the evaluator.

    Samples an n-step chunk, plays out the first `replan_every` actions, then
    replans from the fresh observation. `reset` clears the queue at task
    boundaries.
    """

    def __init__(self, model: StemVLAPolicy, seed: int = 0,
                 replan_every: int = None):
        self.model = model
        self.generator = torch.Generator().manual_seed(seed)
        self.replan_every = replan_every or model.cfg.horizon
        assert 1 <= self.replan_every <= model.cfg.horizon
        self.queue = []

    def reset(self):
        self.queue = []

    def __call__(self, obs) -> np.ndarray:
        if not self.queue:
            batch = make_batch([obs], self.model)
            chunk = self.model.act(batch, self.generator)[0]
            self.queue = [a.numpy().astype(np.float64)
                          for a in chunk[:self.replan_every]]
        return self.queue.pop(0)
