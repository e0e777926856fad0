"""End-to-end training, checkpointing, and evaluation driver."""

import copy
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from ..config import ModelConfig, TrainConfig, config_hash, config_to_dict
from ..containers import (POLICY_MAGIC, arrays_to_state_dict, read_container,
                          state_dict_to_arrays, write_container)
from ..encoders import Vocabulary
from ..geometry import GeometryEncoder, pretrain_geometry
from ..model import DiffusionPolicyRunner, StemVLAPolicy
from ..world import (DEFAULT_SUITE, average_chain_length, read_dataset,
                     rollout_chain, sample_chains, success_rate)
from .data import WindowSampler
from .losses import LossError, composite_loss
from .optim import apply_schedule, build_optimizer

log = logging.getLogger(__name__)


class CheckpointError(Exception):
    pass


@dataclass
class MetricsReport:
    per_task_sr: dict = field(default_factory=dict)
    mean_sr: float = 0.0
    avg_chain_length: float = 0.0
    per_chain_completed: list = field(default_factory=list)
    loss_curves: dict = field(default_factory=dict)
    val_sr_curve: list = field(default_factory=list)
    config_hash: str = ""
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "per_task_sr": self.per_task_sr,
            "mean_sr": self.mean_sr,
            "avg_chain_length": self.avg_chain_length,
            "per_chain_completed": self.per_chain_completed,
            "loss_curves": self.loss_curves,
            "val_sr_curve": self.val_sr_curve,
            "config_hash": self.config_hash,
            "seed": self.seed,
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    def render(self) -> str:
        lines = [f"mean SR: {self.mean_sr:.3f}   avg chain length: "
                 f"{self.avg_chain_length:.2f}"]
        for task, sr in self.per_task_sr.items():
            lines.append(f"  {task:<18s} {sr:.3f}")
        return "\n".join(lines)


def save_policy(model: StemVLAPolicy, path, train_config: TrainConfig = None):
    meta = {
        "model_config": config_to_dict(model.cfg),
        "train_config": config_to_dict(train_config) if train_config else None,
        "vocab": model.vocab.id_to_word,
        "no_4d_history": model.no_4d_history,
        "seed": model.seed,
    }
    write_container(path, POLICY_MAGIC, meta,
                    state_dict_to_arrays(model.state_dict()))


def load_policy(path):
    meta, arrays = read_container(path, POLICY_MAGIC)
    cfg = ModelConfig(**meta["model_config"])
    geometry = GeometryEncoder(cfg)
    vocab = Vocabulary.__new__(Vocabulary)
    vocab.id_to_word = meta["vocab"]
    vocab.word_to_id = {w: i for i, w in enumerate(vocab.id_to_word)}
    model = StemVLAPolicy(cfg, geometry, vocab=vocab, seed=meta["seed"],
                          no_4d_history=meta["no_4d_history"])
    state = arrays_to_state_dict(arrays)
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing or unexpected:
        raise CheckpointError(
            f"checkpoint/config mismatch: missing={missing} unexpected={unexpected}")
    for p in model.geometry.parameters():
        p.requires_grad_(False)
    train_cfg = (TrainConfig(**meta["train_config"])
                 if meta.get("train_config") else None)
    return model, train_cfg


def split_episodes(episodes, val_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(episodes))
    n_val = max(1, int(round(val_fraction * len(episodes))))
    val_idx = set(order[:n_val].tolist())
    train = [ep for i, ep in enumerate(episodes) if i not in val_idx]
    val = [ep for i, ep in enumerate(episodes) if i in val_idx]
    return train, val


def validation_success(model, config: TrainConfig, suite, epoch: int):
    if config.val_rollouts_per_task <= 0:
        return None
    runner = DiffusionPolicyRunner(model, seed=config.seed * 1000 + epoch)
    _, mean = success_rate(runner, suite,
                           episodes_per_task=config.val_rollouts_per_task,
                           seed=config.seed + 90000 + epoch,
                           history_len=model.cfg.history_len)
    return mean


def train(config: TrainConfig, episodes=None, dataset_path=None,
          model_cfg: ModelConfig = None, suite=DEFAULT_SUITE,
          checkpoint_path=None, geometry=None, quiet: bool = True,
          max_steps: int = None):
    """Train the policy per the configured recipe; keep the best-SR checkpoint.

    Returns (model at best checkpoint, MetricsReport).
    """
    if episodes is None:
        if dataset_path is None:
            raise ValueError("need episodes or a dataset path")
        episodes = read_dataset(dataset_path)
    model_cfg = model_cfg or ModelConfig()
    torch.manual_seed(config.seed)

    train_eps, _val_eps = split_episodes(episodes, config.val_fraction, config.seed)
    if geometry is None:
        geometry = pretrain_geometry(train_eps, model_cfg,
                                     steps=config.geom_pretrain_steps,
                                     seed=config.seed, quiet=quiet)
    model = StemVLAPolicy(model_cfg, geometry, seed=config.seed,
                          no_4d_history=config.no_4d_history)
    optimizer = build_optimizer(model, config)
    sampler = WindowSampler(train_eps, model_cfg.horizon, model_cfg.history_len,
                            config.windows_per_episode, seed=config.seed + 1)
    steps_per_epoch = max(1, len(train_eps) * config.windows_per_episode
                          // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)
    generator = torch.Generator().manual_seed(config.seed + 2)

    report = MetricsReport(config_hash=config_hash(config), seed=config.seed)
    report.loss_curves = {"total": [], "action": [], "fsgwp": [], "pixel": []}
    best_sr, best_state, best_epoch = -1.0, None, -1
    step = 0
    t0 = time.time()
    try:
        for epoch in range(config.epochs):
            if step >= total_steps:
                break
            for batch in sampler.batches(config.batch_size, model.vocab,
                                         model_cfg.text_max_len, model.dtype):
                if step >= total_steps:
                    break
                apply_schedule(optimizer, step, total_steps, config)
                total, components = composite_loss(batch, model, config, generator)
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                report.loss_curves["total"].append(total.item())
                for name in ("action", "fsgwp", "pixel"):
                    if name in components:
                        report.loss_curves[name].append(components[name].item())
                step += 1
            sr = validation_success(model, config, suite, epoch)
            report.val_sr_curve.append(sr)
            if not quiet:
                log.info("epoch %d step %d loss %.4f val SR %s (%.0fs)",
                         epoch, step, report.loss_curves["total"][-1],
                         "n/a" if sr is None else f"{sr:.3f}",
                         time.time() - t0)
            if sr is not None and sr > best_sr:
                best_sr = sr
                best_epoch = epoch
                best_state = copy.deepcopy(model.state_dict())
    except LossError as e:
        log.error("training diverged (%s); keeping last good checkpoint", e)
    if best_state is not None:
        model.load_state_dict(best_state)
    if checkpoint_path is not None:
        save_policy(model, checkpoint_path, config)
    report.best_epoch = best_epoch
    return model, report


def evaluate(model: StemVLAPolicy, suite=DEFAULT_SUITE, n_chains: int = 20,
             episodes_per_task: int = 10, seed: int = 0,
             policy=None) -> MetricsReport:
    """Success rates plus CALVIN-style 5-task chain statistics."""
    if policy is None:
        policy = DiffusionPolicyRunner(model, seed=seed)
    hist = model.cfg.history_len if model is not None else 4
    per_task, mean = success_rate(policy, suite,
                                  episodes_per_task=episodes_per_task,
                                  seed=seed, history_len=hist)
    report = MetricsReport(per_task_sr=per_task, mean_sr=mean, seed=seed)
    if n_chains > 0:
        chains = sample_chains(n_chains, seed)
        results = []
        for chain, chain_seed in chains:
            if hasattr(policy, "reset"):
                policy.reset()
            results.append(rollout_chain(policy, chain, chain_seed,
                                         suite=suite, history_len=hist))
        report.per_chain_completed = [r.completed for r in results]
        report.avg_chain_length = average_chain_length(results)
    return report
