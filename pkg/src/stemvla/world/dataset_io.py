"""Sharded episode container IO (magic "STEMVLA1")."""

import numpy as np

from ..containers import DATASET_MAGIC, read_container, write_container
from .episodes import Episode


def write_dataset(episodes, path) -> None:
    arrays = {}
    meta = {"version": 1, "episodes": []}
    for i, ep in enumerate(episodes):
        prefix = f"ep{i:06d}"
        arrays[f"{prefix}/frames"] = ep.frames.astype(np.float32)
        arrays[f"{prefix}/depths"] = ep.depths.astype(np.float32)
        arrays[f"{prefix}/states"] = ep.states.astype(np.float32)
        arrays[f"{prefix}/actions"] = ep.actions.astype(np.float32)
        meta["episodes"].append({
            "prefix": prefix,
            "instruction": ep.instruction,
            "task_id": ep.task_id,
            "seed": ep.seed,
        })
    write_container(path, DATASET_MAGIC, meta, arrays)


def read_dataset(path) -> list:
    meta, arrays = read_container(path, DATASET_MAGIC)
    episodes = []
    for ent in meta["episodes"]:
        p = ent["prefix"]
        episodes.append(Episode(
            frames=arrays[f"{p}/frames"],
            depths=arrays[f"{p}/depths"],
            states=arrays[f"{p}/states"],
            actions=arrays[f"{p}/actions"],
            instruction=ent["instruction"],
            task_id=ent["task_id"],
            seed=ent["seed"],
        ))
    return episodes
