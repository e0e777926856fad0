"""Deterministic top-down tabletop world.

Positions live in the unit square, the effector is a point with a lift
height in [0, 1], and blocks are axis-aligned colored squares. All dynamics
are pure float64 functions of (state, action); no hidden RNG.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

COLORS = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.75, 0.15),
    "blue": (0.15, 0.25, 0.90),
}
COLOR_NAMES = list(COLORS)


class ConfigurationError(Exception):
    pass


@dataclass(frozen=True)
class EnvConfig:
    image_size: int = 32
    max_step: float = 0.10          # xy distance per unit action
    z_step: float = 0.25            # lift distance per unit action
    contact_z: float = 0.2          # effector height below which it touches the table plane
    grasp_radius: float = 0.12
    push_margin: float = 0.05
    stack_radius: float = 0.14
    block_size: float = 0.16        # footprint edge length
    block_height: float = 0.3
    effector_radius: float = 0.045
    camera_height: float = 2.0
    noise_amp: float = 0.03
    lift_height: float = 0.5        # predicate threshold for "lifted"
    push_distance: float = 0.15
    place_radius: float = 0.11
    drawer_y: float = 0.92
    drawer_closed_x: float = 0.20
    drawer_travel: float = 0.35
    drawer_open_dist: float = 0.15
    handle_radius: float = 0.10
    max_task_steps: int = 40


@dataclass
class Block:
    id: int
    color: str
    x: float
    y: float
    size: float
    z: float = 0.0
    stacked_on: Optional[int] = None

    def copy(self) -> "Block":
        return dataclasses.replace(self)


@dataclass
class TaskInstance:
    task_id: str
    target_block: Optional[int] = None
    base_block: Optional[int] = None
    ref_x: float = 0.0  # target block x at task start (push predicates)


@dataclass
class WorldState:
    blocks: list
    eff_x: float
    eff_y: float
    eff_z: float
    gripper: bool
    held: Optional[int]
    goal_zone: tuple
    drawer_x: float
    goal: Optional[TaskInstance] = None

    def copy(self) -> "WorldState":
        return WorldState(
            blocks=[b.copy() for b in self.blocks],
            eff_x=self.eff_x, eff_y=self.eff_y, eff_z=self.eff_z,
            gripper=self.gripper, held=self.held,
            goal_zone=self.goal_zone, drawer_x=self.drawer_x,
            goal=dataclasses.replace(self.goal) if self.goal else None,
        )

    def block_by_id(self, bid: int) -> Block:
        for b in self.blocks:
            if b.id == bid:
                return b
        raise KeyError(bid)

    def proprio(self) -> np.ndarray:
        """State vector exposed to the policy: effector pose + gripper flag."""
        return np.array(
            [self.eff_x, self.eff_y, self.eff_z, 1.0 if self.gripper else 0.0],
            dtype=np.float64)


TASK_IDS = [
    "push_block_left",
    "push_block_right",
    "lift_block",
    "place_on_target",
    "stack_blocks",
    "open_drawer",
]

INSTRUCTION_TEMPLATES = {
    "push_block_left": [
        "push the {color} block to the left",
        "slide the {color} block leftwards",
        "move the {color} block left",
    ],
    "push_block_right": [
        "push the {color} block to the right",
        "slide the {color} block rightwards",
        "move the {color} block right",
    ],
    "lift_block": [
        "pick up the {color} block",
        "lift the {color} block",
        "grab the {color} block and raise it",
    ],
    "place_on_target": [
        "place the {color} block on the target",
        "put the {color} block onto the marked zone",
        "carry the {color} block to the target area",
    ],
    "stack_blocks": [
        "stack the {color} block on the {base} block",
        "put the {color} block on top of the {base} block",
        "set the {color} block onto the {base} block",
    ],
    "open_drawer": [
        "open the drawer",
        "pull the drawer open",
        "slide the drawer out",
    ],
}


@dataclass(frozen=True)
class TaskSuite:
    name: str
    tasks: tuple
    instruction_templates: dict = field(
        default_factory=lambda: dict(INSTRUCTION_TEMPLATES))

    def __post_init__(self):
        if len(set(self.tasks)) != len(self.tasks):
            raise ConfigurationError("duplicate task ids in suite")
        for t in self.tasks:
            if t not in self.instruction_templates or not self.instruction_templates[t]:
                raise ConfigurationError(f"task {t!r} has no instruction templates")


DEFAULT_SUITE = TaskSuite(name="tabletop6", tasks=tuple(TASK_IDS))


def instruction_for(task: TaskInstance, state: WorldState, template_idx: int,
                    suite: TaskSuite = DEFAULT_SUITE) -> str:
    templates = suite.instruction_templates[task.task_id]
    tpl = templates[template_idx % len(templates)]
    kw = {}
    if task.target_block is not None:
        kw["color"] = state.block_by_id(task.target_block).color
    if task.base_block is not None:
        kw["base"] = state.block_by_id(task.base_block).color
    return tpl.format(**kw)


def sample_scene(rng: np.random.Generator, task_id: str,
                 cfg: EnvConfig = EnvConfig()) -> WorldState:
    """Draw a random scene in which `task_id` is feasible. Deterministic in rng."""
    if task_id not in TASK_IDS:
        raise ConfigurationError(f"unknown task id {task_id!r}")
    for _ in range(200):
        positions = []
        ok = True
        for _ in range(3):
            for _ in range(50):
                p = rng.uniform(0.15, 0.80, size=2)
                if all(np.hypot(p[0] - q[0], p[1] - q[1]) >= 0.24 for q in positions):
                    positions.append(p)
                    break
            else:
                ok = False
        if not ok:
            continue
        goal = rng.uniform(0.15, 0.75, size=2)
        if any(np.hypot(goal[0] - q[0], goal[1] - q[1]) < 0.20 for q in positions):
            continue
        # color roles are fixed across the suite: the red block is always the
        # manipulation target and the blue one the stacking base, so language
        # grounding reduces to detecting a known hue rather than binding an
        # arbitrary color word to an arbitrary block
        blocks = [Block(id=i, color=COLOR_NAMES[i], x=float(positions[i][0]),
                        y=float(positions[i][1]), size=cfg.block_size)
                  for i in range(3)]
        target = 0
        base = 2
        tb = blocks[target]
        if task_id == "push_block_left" and tb.x < 0.18 + cfg.push_distance:
            continue
        if task_id == "push_block_right" and tb.x > 0.82 - cfg.push_distance:
            continue
        eff = rng.uniform(0.1, 0.9, size=2)
        state = WorldState(
            blocks=blocks,
            eff_x=float(eff[0]), eff_y=float(eff[1]),
            eff_z=float(rng.uniform(0.3, 0.7)),
            gripper=False, held=None,
            goal_zone=(float(goal[0]), float(goal[1])),
            drawer_x=cfg.drawer_closed_x,
        )
        state.goal = make_task_instance(task_id, state, target_block=tb.id,
                                        base_block=base if task_id == "stack_blocks" else None)
        return state
    raise ConfigurationError(f"could not sample a feasible scene for {task_id!r}")


def make_task_instance(task_id: str, state: WorldState,
                       target_block: Optional[int] = None,
                       base_block: Optional[int] = None) -> TaskInstance:
    """Bind a task to the current state, capturing push reference positions."""
    if task_id not in TASK_IDS:
        raise ConfigurationError(f"unknown task id {task_id!r}")
    ref_x = 0.0
    if task_id == "open_drawer":
        target_block = None
    elif target_block is None:
        target_block = state.blocks[0].id
    if target_block is not None:
        ref_x = state.block_by_id(target_block).x
    return TaskInstance(task_id=task_id, target_block=target_block,
                        base_block=base_block, ref_x=ref_x)


def check_success(state: WorldState, task: TaskInstance,
                  cfg: EnvConfig = EnvConfig()) -> bool:
    tid = task.task_id
    if tid == "open_drawer":
        return state.drawer_x - cfg.drawer_closed_x >= cfg.drawer_open_dist
    b = state.block_by_id(task.target_block)
    if tid == "push_block_left":
        return b.x <= task.ref_x - cfg.push_distance
    if tid == "push_block_right":
        return b.x >= task.ref_x + cfg.push_distance
    if tid == "lift_block":
        return state.held == b.id and b.z >= cfg.lift_height
    if tid == "place_on_target":
        gx, gy = state.goal_zone
        return (state.held != b.id
                and np.hypot(b.x - gx, b.y - gy) <= cfg.place_radius)
    if tid == "stack_blocks":
        return b.stacked_on == task.base_block
    raise ConfigurationError(f"unknown task id {tid!r}")


def _footprint_contains(b: Block, x: float, y: float, margin: float) -> bool:
    h = b.size / 2.0 + margin
    return abs(x - b.x) <= h and abs(y - b.y) <= h


def transition(state: WorldState, action: np.ndarray,
               cfg: EnvConfig = EnvConfig()) -> WorldState:
    """One deterministic environment step. Returns a new state."""
    s = state.copy()
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    old_x, old_y, old_z = s.eff_x, s.eff_y, s.eff_z
    new_x = float(np.clip(old_x + a[0] * cfg.max_step, 0.0, 1.0))
    new_y = float(np.clip(old_y + a[1] * cfg.max_step, 0.0, 1.0))
    new_z = float(np.clip(old_z + a[2] * cfg.z_step, 0.0, 1.0))
    grip = bool(a[3] > 0.0)
    dx, dy = new_x - old_x, new_y - old_y

    pushing = (s.held is None and not s.gripper and not grip
               and old_z < cfg.contact_z)
    if pushing:
        moved_ids = set()
        for b in s.blocks:
            if b.stacked_on is None and _footprint_contains(b, old_x, old_y, cfg.push_margin):
                b.x = float(np.clip(b.x + dx, 0.0, 1.0))
                b.y = float(np.clip(b.y + dy, 0.0, 1.0))
                moved_ids.add(b.id)
        for b in s.blocks:  # stacked blocks ride their base
            if b.stacked_on in moved_ids:
                base = s.block_by_id(b.stacked_on)
                b.x, b.y = base.x, base.y
        if np.hypot(old_x - s.drawer_x, old_y - cfg.drawer_y) <= cfg.handle_radius:
            s.drawer_x = float(np.clip(s.drawer_x + dx, cfg.drawer_closed_x,
                                       cfg.drawer_closed_x + cfg.drawer_travel))

    s.eff_x, s.eff_y, s.eff_z = new_x, new_y, new_z

    if grip:
        if s.held is None and new_z < cfg.contact_z:
            best, best_d = None, cfg.grasp_radius
            for b in s.blocks:
                if any(o.stacked_on == b.id for o in s.blocks):
                    continue  # something on top; not graspable
                d = float(np.hypot(b.x - new_x, b.y - new_y))
                if d <= best_d:
                    best, best_d = b, d
            if best is not None:
                s.held = best.id
                best.stacked_on = None
    else:
        if s.held is not None:
            b = s.block_by_id(s.held)
            s.held = None
            b.z = 0.0
            for other in s.blocks:
                if other.id == b.id or other.stacked_on is not None:
                    continue
                if (np.hypot(other.x - b.x, other.y - b.y) <= cfg.stack_radius):
                    b.x, b.y = other.x, other.y
                    b.z = cfg.block_height
                    b.stacked_on = other.id
                    break
    s.gripper = grip

    if s.held is not None:
        b = s.block_by_id(s.held)
        b.x, b.y, b.z = s.eff_x, s.eff_y, s.eff_z
    return s
