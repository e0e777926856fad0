"""Ablation harness: identical runs that differ in exactly one flag."""

import dataclasses

from ..config import TrainConfig, config_hash
from .trainer import MetricsReport, train, evaluate

VARIANT_FLAGS = ("no_fsgwp", "no_4d_history")

VARIANT_LABELS = {
    "intact": "intact",
    "no_fsgwp": "without future spatial-geometry knowledge",
    "no_4d_history": "without 4D historical representation",
}


def variant_config(config: TrainConfig, variant: str) -> TrainConfig:
    """Copy `config` with exactly one ablation flag toggled on."""
    if variant == "intact":
        return dataclasses.replace(config)
    if variant not in VARIANT_FLAGS:
        raise ValueError(f"unknown ablation variant {variant!r}")
    return dataclasses.replace(config, **{variant: True})


def ablate(config: TrainConfig, variants=VARIANT_FLAGS, episodes=None,
           dataset_path=None, model_cfg=None, seeds=None,
           eval_chains: int = 0, eval_episodes_per_task: int = 6,
           max_steps=None, quiet=True) -> dict:
    """Train intact plus each requested variant; everything else held fixed.

    Returns {variant: [MetricsReport per seed]}.
    """
    seeds = list(seeds) if seeds is not None else [config.seed]
    results = {}
    for variant in ("intact", *variants):
        results[variant] = []
        for seed in seeds:
            cfg = dataclasses.replace(variant_config(config, variant), seed=seed)
            model, _ = train(cfg, episodes=episodes, dataset_path=dataset_path,
                             model_cfg=model_cfg, quiet=quiet, max_steps=max_steps)
            report = evaluate(model, n_chains=eval_chains,
                              episodes_per_task=eval_episodes_per_task,
                              seed=seed + 500)
            report.config_hash = config_hash(cfg)
            results[variant].append(report)
    return results


def render_ablation_table(results: dict) -> str:
    """Side-by-side per-task table, one row per variant plus intact."""
    tasks = list(next(iter(results.values()))[0].per_task_sr)
    header = f"{'method':<44s}" + "".join(f"{t:>18s}" for t in tasks) + f"{'mean':>8s}"
    lines = [header, "-" * len(header)]
    for variant, reports in results.items():
        label = VARIANT_LABELS.get(variant, variant)
        per_task = {t: sum(r.per_task_sr[t] for r in reports) / len(reports)
                    for t in tasks}
        mean = sum(r.mean_sr for r in reports) / len(reports)
        lines.append(f"{label:<44s}"
                     + "".join(f"{per_task[t]:>18.3f}" for t in tasks)
                     + f"{mean:>8.3f}")
    return "\n".join(lines)
