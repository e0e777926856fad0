"""Composite weighted training loss and the pixel reconstruction loss."""

import torch

from ..config import TrainConfig


class LossError(Exception):
    pass


def pixel_loss(prediction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared reconstruction error of the downsampled future frame."""
    if prediction.shape != target.shape:
        raise LossError(f"shape mismatch: {tuple(prediction.shape)} vs "
                        f"{tuple(target.shape)}")
    return ((prediction - target) ** 2).mean()


def composite_loss(batch: dict, model, config: TrainConfig,
                   generator: torch.Generator = None,
                   diffusion_k=None, diffusion_eps=None):
    """Weighted sum of the action, future-geometry, and pixel losses.

    Ablation flags both zero the weight and skip the head's forward pass.
    Returns (total, components dict).
    """
    components = model.training_losses(
        batch, generator,
        no_fsgwp=config.no_fsgwp,
        no_pixel_loss=config.no_pixel_loss,
        diffusion_k=diffusion_k, diffusion_eps=diffusion_eps)
    for name, value in components.items():
        if not torch.isfinite(value):
            raise LossError(f"non-finite loss component {name!r}")
    total = config.action_weight * components["action"]
    if "fsgwp" in components:
        total = total + config.wk_weight * components["fsgwp"]
    if "pixel" in components:
        total = total + config.pixel_weight * components["pixel"]
    return total, components
