from .env import (COLORS, DEFAULT_SUITE, TASK_IDS, Block, ConfigurationError,
                  EnvConfig, TaskInstance, TaskSuite, WorldState, check_success,
                  instruction_for, make_task_instance, sample_scene, transition)
from .episodes import (Episode, GenerationError, generate_episode, init_episode,
                       replay_states)
from .dataset_io import read_dataset, write_dataset
from .evaluate import (ChainResult, Observation, OraclePolicy, ZeroPolicy,
                       average_chain_length, rollout_chain, run_task,
                       sample_chains, success_rate)
from .oracle import oracle_action
from .render import (analytic_block_depth, block_footprint_mask,
                     render_observation)
