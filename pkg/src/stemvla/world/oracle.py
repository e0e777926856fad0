"""Scripted controllers that provably solve each task.

Each controller is a pure function of the full world state, so it can be
replayed and used as a privileged reference policy during evaluation.
Actions are float64 in [-1, 1]^4: (dx, dy, dz, gripper).
"""

import numpy as np

from .env import EnvConfig, TaskInstance, WorldState, check_success, _footprint_contains

TRAVEL_Z = 0.6


def _clamp(v: float) -> float:
    return float(np.clip(v, -1.0, 1.0))


QUANT_LEVELS = (1.0, 0.5, 0.25)
QUANT_EDGES = (0.75, 0.375, 0.1)


def _quant(v: float) -> float:
    """Snap a proportional command to a small set of discrete levels.

    Bang-bang-style demonstrations are far easier to imitate than smooth
    proportional ones: the learner only has to get signs and coarse
    magnitudes right, and closed-loop replanning absorbs the rest.
    """
    s = 1.0 if v >= 0 else -1.0
    m = abs(v)
    for edge, level in zip(QUANT_EDGES, QUANT_LEVELS):
        if m >= edge:
            return s * level
    return 0.0


def _travel(state: WorldState, tx, ty, tz, grip: float, cfg: EnvConfig) -> np.ndarray:
    return np.array([
        _quant((tx - state.eff_x) / cfg.max_step),
        _quant((ty - state.eff_y) / cfg.max_step),
        _quant((tz - state.eff_z) / cfg.z_step),
        grip,
    ])


def _hold(grip: float) -> np.ndarray:
    return np.array([0.0, 0.0, 0.0, grip])


def _release_clear(state: WorldState, cfg: EnvConfig) -> np.ndarray:
    """Drop a leftover held block somewhere it will not stack on anything."""
    held = state.block_by_id(state.held)
    for other in state.blocks:
        if other.id == held.id:
            continue
        d = np.hypot(other.x - state.eff_x, other.y - state.eff_y)
        if d <= cfg.stack_radius + 0.04:
            away_x = state.eff_x + (0.08 if state.eff_x <= other.x else -0.08)
            away_y = state.eff_y + (0.08 if state.eff_y <= other.y else -0.08)
            return _travel(state, away_x, away_y, state.eff_z, 1.0, cfg)
    return _hold(-1.0)


def _approach_and_grasp(state: WorldState, block, cfg: EnvConfig) -> np.ndarray:
    """Move above the block, descend, close the gripper."""
    dist = np.hypot(block.x - state.eff_x, block.y - state.eff_y)
    if dist > 0.06:
        return _travel(state, block.x, block.y, TRAVEL_Z, -1.0, cfg)
    if state.eff_z >= cfg.contact_z * 0.6:
        return np.array([0.0, 0.0, -1.0, -1.0])
    return _hold(1.0)


def _oracle_push(state: WorldState, task: TaskInstance, cfg: EnvConfig,
                 direction: float) -> np.ndarray:
    b = state.block_by_id(task.target_block)
    if state.held is not None:
        return _release_clear(state, cfg)
    inside = _footprint_contains(b, state.eff_x, state.eff_y, -0.01)
    if inside and state.eff_z < cfg.contact_z:
        goal_x = task.ref_x + direction * (cfg.push_distance + 0.05)
        return np.array([_quant((goal_x - b.x) / cfg.max_step), 0.0, 0.0, -1.0])
    if inside:
        return np.array([0.0, 0.0, -1.0, -1.0])
    return _travel(state, b.x, b.y, TRAVEL_Z, -1.0, cfg)


def _oracle_lift(state: WorldState, task: TaskInstance, cfg: EnvConfig) -> np.ndarray:
    b = state.block_by_id(task.target_block)
    if state.held is not None and state.held != b.id:
        return _release_clear(state, cfg)
    if state.held == b.id:
        return np.array([0.0, 0.0, 1.0 if b.z < cfg.lift_height + 0.1 else 0.0, 1.0])
    return _approach_and_grasp(state, b, cfg)


def _oracle_carry(state: WorldState, task: TaskInstance, cfg: EnvConfig,
                  dest_x: float, dest_y: float) -> np.ndarray:
    b = state.block_by_id(task.target_block)
    if state.held is not None and state.held != b.id:
        return _release_clear(state, cfg)
    if state.held == b.id:
        dist = np.hypot(dest_x - state.eff_x, dest_y - state.eff_y)
        if dist > 0.05:
            return _travel(state, dest_x, dest_y, TRAVEL_Z, 1.0, cfg)
        return _hold(-1.0)  # drop
    return _approach_and_grasp(state, b, cfg)


def _oracle_drawer(state: WorldState, task: TaskInstance, cfg: EnvConfig) -> np.ndarray:
    if state.held is not None:
        return _release_clear(state, cfg)
    hx, hy = state.drawer_x, cfg.drawer_y
    dist = np.hypot(hx - state.eff_x, hy - state.eff_y)
    if dist <= 0.06 and state.eff_z < cfg.contact_z:
        goal_x = cfg.drawer_closed_x + cfg.drawer_open_dist + 0.04
        return np.array([_quant((goal_x - hx) / cfg.max_step), 0.0, 0.0, -1.0])
    if dist <= 0.06:
        return np.array([0.0, 0.0, -1.0, -1.0])
    return _travel(state, hx, hy, TRAVEL_Z, -1.0, cfg)


def oracle_action(state: WorldState, task: TaskInstance,
                  cfg: EnvConfig = EnvConfig()) -> np.ndarray:
    """Reference action for `task` from `state`; a hold action once solved."""
    if check_success(state, task, cfg):
        return _hold(1.0 if state.held is not None else -1.0)
    tid = task.task_id
    if tid == "push_block_left":
        return _oracle_push(state, task, cfg, -1.0)
    if tid == "push_block_right":
        return _oracle_push(state, task, cfg, +1.0)
    if tid == "lift_block":
        return _oracle_lift(state, task, cfg)
    if tid == "place_on_target":
        gx, gy = state.goal_zone
        return _oracle_carry(state, task, cfg, gx, gy)
    if tid == "stack_blocks":
        base = state.block_by_id(task.base_block)
        return _oracle_carry(state, task, cfg, base.x, base.y)
    if tid == "open_drawer":
        return _oracle_drawer(state, task, cfg)
    raise ValueError(f"unknown task id {tid!r}")
