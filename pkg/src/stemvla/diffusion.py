"""Conditional DDPM over action chunks: schedule, noising, loss, sampler."""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import ModelConfig
from .nn_blocks import CrossAttnBlock, NumericError, SelfAttnBlock


class ScheduleError(Exception):
    pass


@dataclass
class DiffusionSchedule:
    steps: int
    betas: torch.Tensor        # [K] in (0, 1)
    alphas: torch.Tensor       # [K] = 1 - betas
    alpha_bars: torch.Tensor   # [K] cumulative products, strictly decreasing

    def __post_init__(self):
        assert self.betas.shape == (self.steps,)
        assert ((self.betas > 0) & (self.betas < 1)).all()
        assert torch.all(self.alpha_bars[1:] < self.alpha_bars[:-1]) or self.steps == 1


def make_schedule(steps: int, beta_min: float = 0.05,
                  beta_max: float = 0.7) -> DiffusionSchedule:
    """Linear beta schedule; beta_min == beta_max is allowed (constant)."""
    if steps < 1:
        raise ScheduleError("need at least one diffusion step")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ScheduleError(f"invalid beta range [{beta_min}, {beta_max}]")
    betas = torch.linspace(beta_min, beta_max, steps, dtype=torch.float64)
    alphas = 1.0 - betas
    return DiffusionSchedule(steps=steps, betas=betas, alphas=alphas,
                             alpha_bars=torch.cumprod(alphas, dim=0))


def q_sample(a0: torch.Tensor, k, eps: torch.Tensor,
             sched: DiffusionSchedule) -> torch.Tensor:
    """Forward noising: sqrt(ab_k) * a0 + sqrt(1 - ab_k) * eps."""
    k = torch.as_tensor(k)
    if ((k < 0) | (k >= sched.steps)).any():
        raise IndexError(f"step index out of range [0, {sched.steps})")
    ab = sched.alpha_bars.to(a0.dtype)[k]
    while ab.dim() < a0.dim():
        ab = ab.unsqueeze(-1)
    return torch.sqrt(ab) * a0 + torch.sqrt(1.0 - ab) * eps


class Denoiser(nn.Module):
    """Transformer noise predictor over the n action tokens.

    Conditioning enters twice: a global vector computed from the flattened
    conditioning tokens is added to every action token at the input, and
    each layer additionally cross-attends to the token sequence. The
    additive path gives the optimizer a direct route from conditioning to
    prediction; cross-attention alone has to first learn where to look,
    which is slow when most of the objective is explained by the noisy
    actions themselves."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.n_cond = cfg.n_queries * (2 if cfg.condition_on_world else 1)
        if cfg.condition_on_percepts:
            self.n_cond += (cfg.image_size // cfg.patch_size) ** 2 + cfg.state_tokens
        self.in_proj = nn.Linear(cfg.action_dim, cfg.d_model)
        self.pos = nn.Parameter(torch.randn(cfg.horizon, cfg.d_model) * 0.02)
        self.step_embed = nn.Embedding(cfg.diffusion_steps, cfg.d_model)
        nn.init.normal_(self.step_embed.weight, std=0.02)
        self.cond_inject = nn.Sequential(
            nn.Flatten(), nn.LayerNorm(self.n_cond * cfg.d_model),
            nn.Linear(self.n_cond * cfg.d_model, cfg.d_model), nn.GELU(),
            nn.Linear(cfg.d_model, cfg.d_model))
        self.self_blocks = nn.ModuleList(
            SelfAttnBlock(cfg.d_model, cfg.n_heads, cfg.d_ff)
            for _ in range(cfg.denoiser_layers))
        self.cross_blocks = nn.ModuleList(
            CrossAttnBlock(cfg.d_model, cfg.n_heads, cfg.d_ff)
            for _ in range(cfg.denoiser_layers))
        self.out_norm = nn.LayerNorm(cfg.d_model)
        self.out = nn.Linear(cfg.d_model, cfg.action_dim)

    def forward(self, x_k: torch.Tensor, k, cond: torch.Tensor) -> torch.Tensor:
        """x_k [B, n, A], k scalar or [B], cond [B, Lc, D] -> predicted noise."""
        b = x_k.shape[0]
        k = torch.as_tensor(k, device=x_k.device).long().reshape(-1)
        if k.numel() == 1:
            k = k.expand(b)
        if cond.shape[1] != self.n_cond:
            raise ValueError(f"expected {self.n_cond} conditioning tokens, "
                             f"got {cond.shape[1]}")
        g = self.cond_inject(cond).unsqueeze(1)
        x = self.in_proj(x_k) + self.pos + self.step_embed(k).unsqueeze(1) + g
        for sb, cb in zip(self.self_blocks, self.cross_blocks):
            x = sb(x)
            x = cb(x, cond)
        return self.out(self.out_norm(x))


def denoise_loss(denoiser: Denoiser, a0: torch.Tensor, cond: torch.Tensor,
                 sched: DiffusionSchedule, generator: torch.Generator = None,
                 k=None, eps=None) -> torch.Tensor:
    """Noise-prediction MSE, averaged over chunk elements and batch.

    Step indices and noise are drawn from `generator` unless injected.
    """
    b = a0.shape[0]
    if k is None:
        k = torch.randint(0, sched.steps, (b,), generator=generator)
    if eps is None:
        eps = torch.randn(a0.shape, generator=generator, dtype=a0.dtype)
    x_k = q_sample(a0, k, eps, sched)
    pred = denoiser(x_k, k, cond)
    loss = ((eps - pred) ** 2).mean()
    if not torch.isfinite(loss):
        raise NumericError("non-finite denoising loss")
    return loss


def sample_actions(denoiser, cond: torch.Tensor, sched: DiffusionSchedule,
                   generator: torch.Generator = None, shape=None,
                   clamp: bool = True) -> torch.Tensor:
    """Ancestral DDPM reverse process; deterministic given the generator."""
    if shape is None:
        shape = (cond.shape[0], denoiser.cfg.horizon, denoiser.cfg.action_dim)
    dtype = cond.dtype if torch.is_tensor(cond) else torch.float32
    x = torch.randn(shape, generator=generator, dtype=dtype)
    ab = sched.alpha_bars.to(dtype)
    alphas = sched.alphas.to(dtype)
    betas = sched.betas.to(dtype)
    for k in range(sched.steps - 1, -1, -1):
        eps_hat = denoiser(x, k, cond)
        mean = (x - betas[k] / torch.sqrt(1.0 - ab[k]) * eps_hat) / torch.sqrt(alphas[k])
        if not torch.isfinite(mean).all():
            raise NumericError(f"non-finite sampler state at step {k}")
        if k > 0:
            sigma = torch.sqrt(betas[k] * (1.0 - ab[k - 1]) / (1.0 - ab[k]))
            x = mean + sigma * torch.randn(shape, generator=generator, dtype=dtype)
        else:
            x = mean
    return x.clamp(-1.0, 1.0) if clamp else x
