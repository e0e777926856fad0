"""Two-group AdamW with decoupled decay and the warmup-cosine schedule."""

import math

import torch

from ..config import TrainConfig


class PartitionError(Exception):
    pass


def lr_at(step: int, total_steps: int, peak_lr: float,
          warmup_fraction: float) -> float:
    """Linear ramp 0 -> peak over the warmup span, then cosine decay to 0."""
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} out of range [0, {total_steps}]")
    warmup_steps = warmup_fraction * total_steps
    if step <= warmup_steps:
        return peak_lr * step / warmup_steps if warmup_steps > 0 else peak_lr
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def partition_parameters(model):
    """Split trainable parameters into (vlm group, diffusion group).

    The diffusion group is the denoiser; everything else trainable belongs to
    the VLM group. Frozen parameters land in neither.
    """
    diffusion_ids = {id(p) for p in model.denoiser.parameters()}
    vlm, diff = [], []
    for p in model.parameters():
        if not p.requires_grad:
            continue
        (diff if id(p) in diffusion_ids else vlm).append(p)
    seen = {id(p) for p in vlm} | {id(p) for p in diff}
    for name, p in model.named_parameters():
        if p.requires_grad and id(p) not in seen:
            raise PartitionError(f"trainable parameter {name} is in no group")
    if {id(p) for p in vlm} & {id(p) for p in diff}:
        raise PartitionError("parameter groups overlap")
    return vlm, diff


def build_optimizer(model, config: TrainConfig) -> torch.optim.AdamW:
    vlm, diff = partition_parameters(model)
    if not vlm or not diff:
        raise PartitionError("both parameter groups must be non-empty")
    return torch.optim.AdamW(
        [
            {"params": vlm, "lr": config.vlm_lr, "name": "vlm"},
            {"params": diff, "lr": config.diffusion_lr, "name": "diffusion"},
        ],
        betas=(0.9, 0.999), eps=1e-8, weight_decay=config.weight_decay)


def apply_schedule(optimizer, step: int, total_steps: int, config: TrainConfig):
    peaks = {"vlm": config.vlm_lr, "diffusion": config.diffusion_lr}
    for group in optimizer.param_groups:
        group["lr"] = lr_at(step, total_steps, peaks[group["name"]],
                            config.warmup_fraction)
