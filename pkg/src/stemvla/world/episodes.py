"""Episode generation and deterministic replay."""

from dataclasses import dataclass

import numpy as np

from .env import (DEFAULT_SUITE, EnvConfig, TaskSuite, ConfigurationError,
                  check_success, instruction_for, make_task_instance, sample_scene)
from .oracle import oracle_action
from .render import render_observation

MIN_EPISODE_LEN = 14  # >= history window + horizon + 2
PAD_AFTER_SUCCESS = 4


class GenerationError(Exception):
    """The scripted oracle failed to complete a task; internal bug."""


@dataclass
class Episode:
    frames: np.ndarray      # [T_ep, H, W, 3] float32 in [0, 1]
    depths: np.ndarray      # [T_ep, H, W] float32, world units
    states: np.ndarray      # [T_ep, S_dim] float32
    actions: np.ndarray     # [T_ep, A_dim] float32 in [-1, 1]
    instruction: str
    task_id: str
    seed: int

    def __len__(self) -> int:
        return self.frames.shape[0]


def _task_index(task_id: str, suite: TaskSuite) -> int:
    return list(suite.tasks).index(task_id)


def _frame_noise_key(seed: int, task_idx: int, t: int) -> int:
    ss = np.random.SeedSequence(entropy=(seed, task_idx, t))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def init_episode(seed: int, task_id: str, cfg: EnvConfig = EnvConfig(),
                 suite: TaskSuite = DEFAULT_SUITE):
    """Deterministic scene + instruction for (seed, task_id). Shared by
    generation and replay so both consume the RNG identically."""
    if task_id not in suite.tasks:
        raise ConfigurationError(f"task {task_id!r} not in suite {suite.name!r}")
    if seed < 0:
        raise ConfigurationError("seed must be >= 0")
    idx = _task_index(task_id, suite)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(
        entropy=(seed, idx))))
    state = sample_scene(rng, task_id, cfg)
    template_idx = int(rng.integers(0, 3))
    instruction = instruction_for(state.goal, state, template_idx, suite)
    return state, state.goal, instruction


def generate_episode(seed: int, task_id: str, cfg: EnvConfig = EnvConfig(),
                     suite: TaskSuite = DEFAULT_SUITE) -> Episode:
    """Roll the scripted oracle and record a complete demonstration."""
    state, task, instruction = init_episode(seed, task_id, cfg, suite)
    task_idx = _task_index(task_id, suite)
    frames, depths, states, actions = [], [], [], []
    success_at = None
    t = 0
    while True:
        img, depth = render_observation(state, cfg,
                                        noise_key=_frame_noise_key(seed, task_idx, t))
        frames.append(img)
        depths.append(depth)
        states.append(state.proprio())
        a = oracle_action(state, task, cfg).astype(np.float32)
        actions.append(a)
        if success_at is None and check_success(state, task, cfg):
            success_at = t
        t += 1
        done = (success_at is not None
                and t >= success_at + 1 + PAD_AFTER_SUCCESS
                and t >= MIN_EPISODE_LEN)
        if done:
            break
        if success_at is None and t > cfg.max_task_steps:
            raise GenerationError(
                f"oracle failed to complete {task_id!r} within "
                f"{cfg.max_task_steps} steps (seed={seed})")
        state = transition_f32(state, a, cfg)
    return Episode(
        frames=np.asarray(frames, dtype=np.float32),
        depths=np.asarray(depths, dtype=np.float32),
        states=np.asarray(states, dtype=np.float32),
        actions=np.asarray(actions, dtype=np.float32),
        instruction=instruction,
        task_id=task_id,
        seed=seed,
    )


def transition_f32(state, action_f32: np.ndarray, cfg: EnvConfig):
    """Step with a float32 action exactly as generation and replay both do."""
    from .env import transition
    return transition(state, np.asarray(action_f32, dtype=np.float64), cfg)


def replay_states(episode: Episode, cfg: EnvConfig = EnvConfig(),
                  suite: TaskSuite = DEFAULT_SUITE) -> np.ndarray:
    """Re-run the stored actions through the transition function from frame 0."""
    state, _, _ = init_episode(episode.seed, episode.task_id, cfg, suite)
    out = [state.proprio()]
    for i in range(len(episode) - 1):
        state = transition_f32(state, episode.actions[i], cfg)
        out.append(state.proprio())
    return np.asarray(out, dtype=np.float32)
