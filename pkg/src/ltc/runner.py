"""The LTC loop: behavior-cloning warmup, then explore / replay / train / evaluate.

Exploration runs W worker threads over a frozen policy snapshot. Workers pull
fresh environment seeds until the global completed count reaches ``n_gen``,
wait at a barrier, and the coordinator merges their buffers by (worker id,
local index). The merged tuple is broadcast to every worker's replay view and
then appended to the run's replay store.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .buffer import ReplayStore, Session, TrajectoryBuffer, replay_insert, replay_sample, save_buffer, seal
from .config import LTCConfig
from .envs import env_vocab, make_env
from .envs.arithgen import TeacherOracle
from .patterns import (
    PolicyAgent, expert_agent, run_analogue, run_dialogue, run_monologue, run_single_answer,
    solver_agent, teacher_agent,
)
from .policy import Policy, PolicyConfig
from .trainer import LossReport, train_epoch

log = logging.getLogger(__name__)

EVAL_BIT = 1 << 63
EpisodeFn = Callable[[Policy, int, int], TrajectoryBuffer]


class RunError(RuntimeError):
    def __init__(self, iteration: int, cause: BaseException):
        super().__init__(f"iteration {iteration}: {type(cause).__name__}: {cause}")
        self.iteration = iteration


class ExploreError(RuntimeError):
    pass


@dataclass
class IterationMetrics:
    iteration: int
    success_rate: float
    mean_episode_length: float
    lm_loss: float
    policy_loss: float
    value_loss: float
    entropy_loss: float
    buffers_generated: int
    wall_time: float
    phase: str = "ltc"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValueError("success rate must lie in [0, 1]")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class EvalSummary:
    success_rate: float
    mean_episode_length: float
    successes: list[bool]


# -- seeds ----------------------------------------------------------------------

def _hash64(*parts: int) -> int:
    data = struct.pack(f"<{len(parts)}q", *parts)
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def episode_seed(run_seed: int, iteration: int, worker: int, episode: int) -> int:
    """Training-range seed (top bit clear) for one exploration episode."""
    return _hash64(run_seed, iteration, worker, episode) & (EVAL_BIT - 1)


def eval_seeds(run_seed: int, n: int) -> list[int]:
    """Fixed evaluation seeds (top bit set, disjoint from every training seed)."""
    return [EVAL_BIT | (_hash64(run_seed, -1, -1, k) & (EVAL_BIT - 1)) for k in range(n)]


def _stream_seed(run_seed: int, tag: int, i: int = 0) -> int:
    return _hash64(run_seed, -2, tag, i) & (EVAL_BIT - 1)


_WARMUP_TAG, _TRAIN_TAG, _WARMUP_EVAL_TAG = 1, 2, 3


# -- episodes -------------------------------------------------------------------

def build_policy(cfg: LTCConfig) -> Policy:
    m = cfg.model
    pcfg = PolicyConfig(len(env_vocab()), m.embed_dim, m.hidden_dim, m.num_layers, m.context_len, m.seed)
    return Policy(pcfg, lr=cfg.train.lr, weight_decay=cfg.train.weight_decay)


def run_episode(cfg: LTCConfig, seed: int, mode: str, policy: Policy | None = None,
                temperature: float = 1.0) -> Session:
    """One session on env seed ``seed``.

    ``mode`` is ``expert`` (scripted roles, used for warmup), ``explore``
    (policy student with scripted teacher) or ``eval`` (policy alone, greedy).
    """
    run, pcfg, vocab = cfg.run, cfg.pattern_config(), env_vocab()
    env = make_env(run.env, seed, **run.params)
    pattern = run.resolved_pattern
    if mode != "expert":
        if policy is None:
            raise ValueError(f"{mode} episodes need a policy")
        t = 0.0 if mode == "eval" else temperature
        student = PolicyAgent(policy, vocab, t, seed=seed ^ 0x5EED, label="student")
    if mode == "expert":
        student = solver_agent() if pattern == "analogue" else expert_agent(env)
    if pattern == "monologue":
        return run_monologue(student, env, pcfg, vocab)
    if pattern == "dialogue":
        if mode == "eval":
            teacher = PolicyAgent(policy, vocab, 0.0, seed=seed ^ 0x7EAC, label="teacher")
        else:
            teacher = teacher_agent(env)
        return run_dialogue(student, teacher, env, pcfg, vocab)
    if mode == "eval":
        return run_single_answer(student, env.problem, pcfg, vocab)
    return run_analogue(student, TeacherOracle(), env.problem, pcfg, vocab, rng_seed=seed)


def make_episode_fn(cfg: LTCConfig, mode: str = "explore") -> EpisodeFn:
    vocab = env_vocab()
    temperature = cfg.run.exploration_temperature

    def episode(snapshot: Policy, seed: int, worker: int) -> TrajectoryBuffer:
        session = run_episode(cfg, seed, mode, snapshot, temperature)
        return seal(session, vocab, snapshot)

    return episode


def evaluate_policy(policy: Policy, cfg: LTCConfig, seeds) -> EvalSummary:
    """Greedy evaluation; touches neither the replay store nor the policy."""
    successes, lengths = [], []
    for seed in seeds:
        s = run_episode(cfg, int(seed), "eval", policy)
        successes.append(s.terminal_reward == 1)
        lengths.append(len(s))
    n = max(len(successes), 1)
    return EvalSummary(sum(successes) / n, sum(lengths) / n, successes)


def expert_baseline(cfg: LTCConfig, seeds) -> float:
    wins = [run_episode(cfg, int(s), "expert").terminal_reward == 1 for s in seeds]
    return sum(wins) / max(len(wins), 1)


# -- warmup ---------------------------------------------------------------------

@dataclass
class WarmupReport:
    lm_losses: list[float]
    successes: list[float]          # stop-rule metric per epoch
    greedy_successes: list[float]
    baseline_success: float
    buffers: int
    reached_target: bool


def sampled_success(policy: Policy, cfg: LTCConfig, seeds) -> float:
    """Success of exploration-mode episodes (sampled at the exploration temperature)."""
    t = cfg.run.exploration_temperature
    wins = [run_episode(cfg, int(s), "explore", policy, t).terminal_reward == 1 for s in seeds]
    return sum(wins) / max(len(wins), 1)


def warmup_bc(policy: Policy, cfg: LTCConfig, n_expert: int | None = None) -> WarmupReport:
    """LM-only training on positive scripted-expert sessions.

    Stops once success on the warmup eval seeds reaches ``run.warmup_target``
    or after ``run.warmup_max_epochs`` passes. ``run.warmup_metric`` picks
    the success measure: sampled exploration episodes (default) or greedy.
    """
    run = cfg.run
    n_expert = run.n_expert if n_expert is None else n_expert
    seeds = [EVAL_BIT | _stream_seed(run.seed, _WARMUP_EVAL_TAG, k) for k in range(run.warmup_eval_episodes)]
    baseline = evaluate_policy(policy, cfg, seeds).success_rate
    if n_expert == 0:
        return WarmupReport([], [], [], baseline, 0, False)
    vocab = env_vocab()
    sessions = [run_episode(cfg, _stream_seed(run.seed, _WARMUP_TAG, k), "expert") for k in range(n_expert)]
    buffers = [seal(s, vocab, policy) for s in sessions if s.terminal_reward == 1]
    tcfg = dataclasses.replace(cfg.train, ppo_epochs=1)
    losses, successes, greedy = [], [], []
    for epoch in range(run.warmup_max_epochs):
        reports = train_epoch(policy, buffers, tcfg, rng_seed=_stream_seed(run.seed, _WARMUP_TAG, epoch),
                              lm_only=True, lr=run.warmup_lr)
        losses.append(float(np.mean([r.lm for r in reports])))
        greedy.append(evaluate_policy(policy, cfg, seeds).success_rate)
        successes.append(greedy[-1] if run.warmup_metric == "greedy" else sampled_success(policy, cfg, seeds))
        log.info("warmup epoch %d: lm %.4f %s success %.3f greedy %.3f", epoch, losses[-1],
                 run.warmup_metric, successes[-1], greedy[-1])
        if successes[-1] >= run.warmup_target:
            return WarmupReport(losses, successes, greedy, baseline, len(buffers), True)
    log.warning("warmup stopped at the epoch cap with success %.3f < %.3f",
                successes[-1] if successes else 0.0, run.warmup_target)
    return WarmupReport(losses, successes, greedy, baseline, len(buffers), False)


# -- exploration ----------------------------------------------------------------

@dataclass
class Worker:
    wid: int
    replay: ReplayStore
    local: list[TrajectoryBuffer] = field(default_factory=list)
    error: BaseException | None = None


def make_workers(n: int, window: int = 2) -> list[Worker]:
    return [Worker(w, ReplayStore(window)) for w in range(n)]


def explore_phase(snapshot: Policy, cfg: LTCConfig, iteration: int = 0,
                  workers: list[Worker] | None = None,
                  episode_fn: EpisodeFn | None = None) -> list[TrajectoryBuffer]:
    """Collect at least ``n_gen`` sealed buffers with W worker threads.

    A worker starts an episode only while the global completed count is below
    ``n_gen``, so the result holds between ``n_gen`` and ``n_gen + W - 1``
    buffers. A worker that raises has its buffers from this phase discarded
    and the others keep going until the count is met again.
    """
    run = cfg.run
    n_gen = run.resolved_n_gen
    if workers is None:
        workers = make_workers(run.workers, run.replay_window)
    episode_fn = episode_fn or make_episode_fn(cfg)
    cond = threading.Condition()
    state = {"completed": 0, "in_flight": 0}
    barrier = threading.Barrier(len(workers))

    def claim() -> bool:
        with cond:
            while True:
                if state["completed"] < n_gen:
                    state["in_flight"] += 1
                    return True
                if state["in_flight"] == 0:
                    cond.notify_all()
                    return False
                cond.wait()

    def body(worker: Worker) -> None:
        e = 0
        while claim():
            seed = episode_seed(run.seed, iteration, worker.wid, e)
            e += 1
            try:
                buf = episode_fn(snapshot, seed, worker.wid)
            except Exception as exc:  # reported by the coordinator
                # one critical section, so nobody sees the quota met in between
                with cond:
                    state["in_flight"] -= 1
                    state["completed"] -= len(worker.local)
                    worker.local = []
                    worker.error = exc
                    cond.notify_all()
                log.warning("worker %d failed: %s", worker.wid, exc)
                break
            with cond:
                state["in_flight"] -= 1
                state["completed"] += 1
                worker.local.append(buf)
                cond.notify_all()
        barrier.wait()

    for w in workers:
        w.local, w.error = [], None
    threads = [threading.Thread(target=body, args=(w,), name=f"ltc-worker-{w.wid}") for w in workers]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    merged = [b for w in sorted(workers, key=lambda w: w.wid) for b in w.local]
    if len(merged) < n_gen:
        errors = "; ".join(f"worker {w.wid}: {w.error}" for w in workers if w.error)
        raise ExploreError(f"all workers failed before reaching {n_gen} buffers ({errors})")
    for w in workers:
        w.replay.insert(iteration, merged)
    return merged


# -- training -------------------------------------------------------------------

def train_phase(policy: Policy, replay: ReplayStore, cfg: LTCConfig, iteration: int = 0) -> list[LossReport]:
    batch = replay_sample(replay, cfg.run.n_train, _stream_seed(cfg.run.seed, _TRAIN_TAG, iteration))
    return train_epoch(policy, batch, cfg.train, rng_seed=_stream_seed(cfg.run.seed, _TRAIN_TAG, -iteration - 1))


def expected_updates(n_batch: int, cfg: LTCConfig) -> int:
    return cfg.train.ppo_epochs * math.ceil(n_batch / cfg.train.batch_size)


# -- full run -------------------------------------------------------------------

def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_metrics(path, rows: list[IterationMetrics]) -> None:
    _atomic_text(Path(path), "".join(json.dumps(r.as_dict()) + "\n" for r in rows))


def read_metrics(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def run_ltc(cfg: LTCConfig, out_dir=None, policy: Policy | None = None) -> list[IterationMetrics]:
    """Warmup followed by ``max_iterations`` explore/train/evaluate iterations.

    With ``out_dir`` set, ``metrics.jsonl`` is rewritten after every row and a
    ``ckpt-<iter>`` checkpoint is saved (``ckpt-0`` is the warmed-up policy).
    """
    run = cfg.run
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.ini")
    policy = policy or build_policy(cfg)
    seeds = eval_seeds(run.seed, run.eval_episodes)
    rows: list[IterationMetrics] = []

    def persist(i: int) -> None:
        if out is not None:
            write_metrics(out / "metrics.jsonl", rows)
            policy.save(out / f"ckpt-{i}")

    t0 = time.perf_counter()
    try:
        warm = warmup_bc(policy, cfg)
        ev = evaluate_policy(policy, cfg, seeds)
    except Exception as exc:
        raise RunError(0, exc) from exc
    rows.append(IterationMetrics(
        0, ev.success_rate, ev.mean_episode_length, warm.lm_losses[-1] if warm.lm_losses else 0.0,
        0.0, 0.0, 0.0, warm.buffers, time.perf_counter() - t0, phase="warmup",
        extra={"baseline_success": warm.baseline_success, "warmup_lm_losses": warm.lm_losses,
               "warmup_successes": warm.successes, "warmup_greedy_successes": warm.greedy_successes,
               "reached_target": warm.reached_target},
    ))
    persist(0)
    log.info("warmup done: success %.3f", ev.success_rate)

    replay = ReplayStore(run.replay_window)
    workers = make_workers(run.workers, run.replay_window)
    episode_fn = make_episode_fn(cfg)
    for i in range(1, run.max_iterations + 1):
        t0 = time.perf_counter()
        try:
            merged = explore_phase(policy.snapshot(), cfg, i, workers, episode_fn)
            replay_insert(replay, i, merged)
            if out is not None and run.dump_buffers:
                d = out / "buffers" / str(i)
                d.mkdir(parents=True, exist_ok=True)
                for k, b in enumerate(merged):
                    save_buffer(b, d / f"b{k}.ltcb")
            reports = train_phase(policy, replay, cfg, i)
            ev = evaluate_policy(policy, cfg, seeds)
        except Exception as exc:
            raise RunError(i, exc) from exc
        mean = {k: float(np.mean([getattr(r, k) for r in reports])) for k in ("lm", "policy", "value", "entropy")}
        rows.append(IterationMetrics(
            i, ev.success_rate, ev.mean_episode_length, mean["lm"], mean["policy"], mean["value"],
            mean["entropy"], len(merged), time.perf_counter() - t0,
            extra={"explore_success": float(np.mean([b.terminal_reward == 1 for b in merged])),
                   "replay_size": len(replay), "policy_version": policy.version},
        ))
        persist(i)
        log.info("iteration %d: success %.3f explore %.3f lm %.3f pol %.4f val %.4f (%.1fs)", i,
                 ev.success_rate, rows[-1].extra["explore_success"], mean["lm"], mean["policy"],
                 mean["value"], rows[-1].wall_time)
    return rows
