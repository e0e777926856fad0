"""Configuration dataclasses and YAML round-trip helpers."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml


@dataclass
class ModelConfig:
    # shared widths
    d_model: int = 128
    image_size: int = 32
    patch_size: int = 8
    # text encoder
    text_max_len: int = 16
    # state encoder
    state_dim: int = 4
    state_tokens: int = 2
    # geometry encoder
    d_geom: int = 128
    geom_blocks: int = 2
    geom_heads: int = 4
    use_time_encoding: bool = True
    # history aggregator
    history_len: int = 4
    history_tokens: int = 8
    use_temporal_pos: bool = True
    # backbone
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    n_queries: int = 9
    action_attends_spatial: bool = True
    # action head
    horizon: int = 8
    action_dim: int = 4
    diffusion_steps: int = 10
    beta_min: float = 0.05
    beta_max: float = 0.7
    denoiser_layers: int = 2
    condition_on_world: bool = True
    condition_on_percepts: bool = True
    # fsgwp head
    fsgwp_target: str = "depth"  # "depth" | "latent"


@dataclass
class TrainConfig:
    batch_size: int = 20
    epochs: int = 40
    vlm_lr: float = 6e-4
    diffusion_lr: float = 1.5e-4
    weight_decay: float = 1e-4
    warmup_fraction: float = 0.05
    pixel_weight: float = 0.1
    wk_weight: float = 0.1
    action_weight: float = 1.0
    seed: int = 0
    no_fsgwp: bool = False
    no_4d_history: bool = False
    no_pixel_loss: bool = False
    # desk-scale knobs (not part of the published recipe)
    windows_per_episode: int = 2
    val_fraction: float = 0.1
    val_rollouts_per_task: int = 2
    geom_pretrain_steps: int = 300
    geom_lr: float = 1e-3

    def __post_init__(self):
        if not (0.0 < self.warmup_fraction < 1.0):
            raise ValueError("warmup_fraction must lie in (0, 1)")
        for name in ("batch_size", "epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("vlm_lr", "diffusion_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("pixel_weight", "wk_weight", "action_weight", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_train_config(path) -> TrainConfig:
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**raw)


def save_train_config(cfg: TrainConfig, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(config_to_dict(cfg), f, sort_keys=False)
