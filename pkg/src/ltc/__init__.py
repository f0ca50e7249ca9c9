"""LTC: iterate exploration of text environments and training on the sessions.

Agents talk to an environment (or to a scripted teacher) in one of three
patterns; the sessions become token-level buffers that train a small
transformer with a masked LM + PPO objective.
"""
from .buffer import (
    ReplayStore, Session, Source, TrajectoryBuffer, deserialize, load_buffer, new_session,
    replay_insert, replay_sample, save_buffer, seal, serialize,
)
from .config import LTCConfig, ModelConfig, RunConfig
from .envs import env_vocab, make_env, scripted_expert_act, teacher_analogue, teacher_check
from .estimator import LTCAgent
from .patterns import PatternConfig, run_analogue, run_dialogue, run_monologue
from .policy import Policy, PolicyConfig, init_policy
from .runner import IterationMetrics, evaluate_policy, explore_phase, run_ltc, train_phase, warmup_bc
from .trainer import TrainConfig, compute_gae, loss_entropy, loss_lm, loss_policy, loss_value, train_epoch
from .vocab import Vocabulary, build_vocab, decode, encode

__version__ = "0.1.0"

__all__ = [
    "IterationMetrics", "LTCAgent", "LTCConfig", "ModelConfig", "PatternConfig", "Policy",
    "PolicyConfig", "ReplayStore", "RunConfig", "Session", "Source", "TrainConfig",
    "TrajectoryBuffer", "Vocabulary", "build_vocab", "compute_gae", "decode", "deserialize",
    "encode", "env_vocab", "evaluate_policy", "explore_phase", "init_policy", "load_buffer",
    "loss_entropy", "loss_lm", "loss_policy", "loss_value", "make_env", "new_session",
    "replay_insert", "replay_sample", "run_analogue", "run_dialogue", "run_ltc", "run_monologue",
    "save_buffer", "scripted_expert_act", "seal", "serialize", "teacher_analogue", "teacher_check",
    "train_epoch", "train_phase", "warmup_bc",
]
