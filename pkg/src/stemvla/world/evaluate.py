"""Policy evaluation: per-task success rates and 5-task chained rollouts."""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .env import (DEFAULT_SUITE, EnvConfig, TaskInstance, TaskSuite, WorldState,
                  check_success, instruction_for, make_task_instance, sample_scene)
from .episodes import transition_f32
from .oracle import oracle_action
from .render import render_observation

log = logging.getLogger(__name__)

CHAIN_LEN = 5


@dataclass
class Observation:
    """What a policy sees at one control step.

    `world` and `task` are privileged fields for scripted reference policies
    and tests; learned policies must only read the sensor fields above them.
    """
    frames_history: np.ndarray  # [T_hist, H, W, 3] frames strictly before now
    frame: np.ndarray           # [H, W, 3] current frame
    state: np.ndarray           # proprioceptive vector
    instruction: str
    step: int
    world: WorldState = None
    task: TaskInstance = None


@dataclass
class ChainResult:
    completed: int
    per_step_success: list

    def __post_init__(self):
        assert 0 <= self.completed <= CHAIN_LEN
        assert len(self.per_step_success) == CHAIN_LEN
        # monotone prefix: nothing counts after the first failure
        assert self.per_step_success[:self.completed] == [True] * self.completed
        assert all(not s for s in self.per_step_success[self.completed:])


class OraclePolicy:
    """Privileged scripted policy; solves every shipped task by construction."""

    def __init__(self, cfg: EnvConfig = EnvConfig()):
        self.cfg = cfg

    def reset(self):
        pass

    def __call__(self, obs: Observation) -> np.ndarray:
        return oracle_action(obs.world, obs.task, self.cfg)


class ZeroPolicy:
    def reset(self):
        pass

    def __call__(self, obs: Observation) -> np.ndarray:
        return np.zeros(4)


class _FrameHistory:
    """Ring of past frames; left-pads with the earliest frame seen."""

    def __init__(self, length: int):
        self.length = length
        self.frames = []

    def push(self, frame: np.ndarray):
        self.frames.append(frame)
        if len(self.frames) > self.length:
            self.frames.pop(0)

    def stacked(self, current: np.ndarray) -> np.ndarray:
        frames = list(self.frames)
        pad = frames[0] if frames else current
        while len(frames) < self.length:
            frames.insert(0, pad)
        return np.asarray(frames, dtype=np.float32)


def _valid_action(a) -> bool:
    a = np.asarray(a, dtype=np.float64)
    return a.shape == (4,) and bool(np.all(np.isfinite(a))) and bool(np.all(np.abs(a) <= 1.0 + 1e-6))


def run_task(policy, state: WorldState, task: TaskInstance, instruction: str,
             cfg: EnvConfig, noise_rng: np.random.Generator,
             history: Optional[_FrameHistory] = None,
             history_len: int = 4):
    """Roll one task to success or step budget. Returns (success, end_state, history)."""
    if history is None:
        history = _FrameHistory(history_len)
    if hasattr(policy, "reset"):
        policy.reset()
    for step in range(cfg.max_task_steps):
        if check_success(state, task, cfg):
            return True, state, history
        img, _ = render_observation(state, cfg,
                                    noise_key=int(noise_rng.integers(0, 2**63)))
        obs = Observation(
            frames_history=history.stacked(img),
            frame=img.astype(np.float32),
            state=state.proprio().astype(np.float32),
            instruction=instruction,
            step=step,
            world=state,
            task=task,
        )
        action = policy(obs)
        if not _valid_action(action):
            log.warning("policy emitted invalid action %r; counting rollout as failure",
                        action)
            return False, state, history
        history.push(img.astype(np.float32))
        state = transition_f32(state, np.asarray(action, dtype=np.float32), cfg)
    return bool(check_success(state, task, cfg)), state, history


def success_rate(policy, suite: TaskSuite = DEFAULT_SUITE,
                 episodes_per_task: int = 10, seed: int = 0,
                 cfg: EnvConfig = EnvConfig(), history_len: int = 4):
    """Per-task success fractions plus their unweighted mean."""
    assert episodes_per_task >= 1
    per_task = {}
    for ti, task_id in enumerate(suite.tasks):
        wins = 0
        for k in range(episodes_per_task):
            ss = np.random.SeedSequence(entropy=(seed, ti, k, 17))
            rng = np.random.Generator(np.random.PCG64(ss))
            state = sample_scene(rng, task_id, cfg)
            instruction = instruction_for(state.goal, state,
                                          int(rng.integers(0, 3)), suite)
            ok, _, _ = run_task(policy, state, state.goal, instruction, cfg,
                                noise_rng=rng, history_len=history_len)
            wins += int(ok)
        per_task[task_id] = wins / episodes_per_task
    mean = float(np.mean(list(per_task.values())))
    return per_task, mean


def _bind_chain(chain, seed: int, cfg: EnvConfig, suite: TaskSuite):
    """Deterministically build (start state, per-task binding rng) for a chain."""
    ss = np.random.SeedSequence(entropy=(seed, 101))
    rng = np.random.Generator(np.random.PCG64(ss))
    state = sample_scene(rng, chain[0], cfg)
    state.goal = None
    return state, rng


def _next_instance(state: WorldState, task_id: str,
                   rng: np.random.Generator) -> TaskInstance:
    # fixed color roles: block 0 (red) is the target, block 2 (blue) the base
    return make_task_instance(task_id, state,
                              target_block=state.blocks[0].id,
                              base_block=2 if task_id == "stack_blocks" else None)


def rollout_chain(policy, chain, seed: int, cfg: EnvConfig = EnvConfig(),
                  suite: TaskSuite = DEFAULT_SUITE, history_len: int = 4) -> ChainResult:
    """Run 5 tasks back to back without resetting the world; first failure stops."""
    assert len(chain) == CHAIN_LEN, "chains are exactly 5 tasks long"
    state, rng = _bind_chain(chain, seed, cfg, suite)
    history = _FrameHistory(history_len)
    per_step = [False] * CHAIN_LEN
    for i, task_id in enumerate(chain):
        task = _next_instance(state, task_id, rng)
        instruction = instruction_for(task, state, int(rng.integers(0, 3)), suite)
        ok, state, history = run_task(policy, state, task, instruction, cfg,
                                      noise_rng=rng, history=history,
                                      history_len=history_len)
        if not ok:
            break
        per_step[i] = True
    completed = 0
    for s in per_step:
        if not s:
            break
        completed += 1
    return ChainResult(completed=completed, per_step_success=per_step)


def sample_chains(n: int, seed: int, cfg: EnvConfig = EnvConfig(),
                  suite: TaskSuite = DEFAULT_SUITE):
    """Draw n executable (chain, seed) pairs.

    A candidate chain is validated by running the scripted oracle through all
    five tasks; only chains the oracle completes are kept, so every returned
    chain is achievable from its start state.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(
        entropy=(seed, 777))))
    oracle = OraclePolicy(cfg)
    out = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 200 * n:
            raise RuntimeError("chain sampling failed to find executable chains")
        tasks = [t for t in suite.tasks if t != "lift_block"]
        chain = [str(t) for t in rng.choice(tasks, size=CHAIN_LEN - 1, replace=False)]
        chain.append("lift_block")  # composes only as the final task
        chain_seed = int(rng.integers(0, 2**31))
        if rollout_chain(oracle, chain, chain_seed, cfg, suite,
                         history_len=1).completed == CHAIN_LEN:
            out.append((chain, chain_seed))
    return out


def average_chain_length(results) -> float:
    return float(np.mean([r.completed for r in results]))
