"""``ltc`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error. Every subcommand reads
the optional ``--config`` file, then applies ``--set section.key=value``
overrides and ``--seed``. The output directory defaults to ``$LTC_OUT_DIR``
or ``./ltc-out``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .buffer import BufferFormatError, ReplayStore, load_buffer, message_token_spans, save_buffer
from .config import ConfigError, LTCConfig, all_keys
from .envs import env_vocab, make_env
from .policy import Policy
from .runner import (
    EVAL_BIT, build_policy, eval_seeds, evaluate_policy, expert_baseline, explore_phase,
    make_workers, run_episode, run_ltc, warmup_bc,
)
from .trainer import train_epoch

OUT_ENV = "LTC_OUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# -- prompt-token report ----------------------------------------------------------

def _prompt_ids(kind: str, seed: int, shots: int) -> list[int]:
    vocab = env_vocab()
    cfg = LTCConfig().replace(**{"run.env": kind})
    prefix: list[int] = []
    for j in range(shots):
        demo = run_episode(cfg, EVAL_BIT | (seed * 1009 + j + 1), "expert")
        ids, _, _ = message_token_spans(demo, vocab)
        prefix += ids
    task = make_env(kind, seed).task_text
    return [vocab.bos_id] + prefix + vocab.encode(task)


def report_prompt_tokens(kind: str, mode: str, episodes: int = 100) -> int:
    """Average input-prompt length in tokens over ``episodes`` seeded tasks.

    ``zero_shot`` is the task description alone; ``few_shot_k`` prepends k
    expert transcripts of other tasks of the same environment.
    """
    if mode == "zero_shot":
        shots = 0
    elif mode.startswith("few_shot_") and mode[len("few_shot_"):].isdigit():
        shots = int(mode[len("few_shot_"):])
    else:
        raise ValueError(f"mode must be zero_shot or few_shot_<k>, got {mode!r}")
    make_env(kind, 0)  # validates kind
    lengths = [len(_prompt_ids(kind, s, shots)) for s in range(episodes)]
    return int(round(float(np.mean(lengths))))


# -- subcommands ------------------------------------------------------------------

def _config(args) -> LTCConfig:
    cfg = LTCConfig.load(args.config) if args.config else LTCConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    return cfg.replace(**overrides) if overrides else cfg


def _out(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "ltc-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args, cfg: LTCConfig) -> None:
    out = _out(args)
    rows = run_ltc(cfg, out)
    last = rows[-1]
    print(f"iterations {len(rows) - 1} final success {last.success_rate:.3f} -> {out / 'metrics.jsonl'}")


def cmd_warmup(args, cfg: LTCConfig) -> None:
    out = _out(args)
    policy = build_policy(cfg)
    rep = warmup_bc(policy, cfg)
    policy.save(out / "ckpt-0")
    print(f"epochs {len(rep.lm_losses)} baseline {rep.baseline_success:.3f} "
          f"success {rep.successes[-1] if rep.successes else 0.0:.3f} -> {out / 'ckpt-0'}")


def cmd_explore(args, cfg: LTCConfig) -> None:
    out = _out(args)
    policy = Policy.load(args.ckpt)
    buffers = explore_phase(policy.snapshot(), cfg, args.iteration,
                            make_workers(cfg.run.workers, cfg.run.replay_window))
    d = out / "buffers" / str(args.iteration)
    d.mkdir(parents=True, exist_ok=True)
    for k, b in enumerate(buffers):
        save_buffer(b, d / f"b{k}.ltcb")
    wins = sum(b.terminal_reward == 1 for b in buffers)
    print(f"buffers {len(buffers)} success {wins / len(buffers):.3f} -> {d}")


def cmd_train(args, cfg: LTCConfig) -> None:
    policy = Policy.load(args.ckpt)
    files = sorted(Path(args.buffers).glob("*.ltcb"))
    if not files:
        raise FileNotFoundError(f"no .ltcb files in {args.buffers}")
    replay = ReplayStore(cfg.run.replay_window)
    replay.insert(0, [load_buffer(f) for f in files])
    batch = replay.sample(cfg.run.n_train, cfg.run.seed)
    reports = train_epoch(policy, batch, cfg.train, rng_seed=cfg.run.seed)
    target = Path(args.save or args.ckpt)
    policy.save(target)
    for r in reports:
        print(f"pass {r.pass_index} lm {r.lm:.4f} policy {r.policy:.4f} value {r.value:.4f} "
              f"entropy {r.entropy:.5f} total {r.total:.4f}")
    print(f"updates {len(reports)} -> {target}")


def cmd_eval(args, cfg: LTCConfig) -> None:
    policy = Policy.load(args.ckpt)
    n = args.episodes or cfg.run.eval_episodes
    ev = evaluate_policy(policy, cfg, eval_seeds(cfg.run.seed, n))
    print(f"success_rate {ev.success_rate:.4f}")
    print(f"mean_episode_length {ev.mean_episode_length:.2f}")


def cmd_inspect(args, cfg: LTCConfig) -> None:
    b = load_buffer(args.path)
    vocab = env_vocab()
    words = vocab.word_of
    print(f"{'pos':>5} {'token':>5} {'word':<10} {'mask':>4} {'value':>9} {'logprob':>9} {'reward':>6}")
    for i in range(len(b)):
        t = int(b.tokens[i])
        word = words[t] if t < len(words) else "?"
        print(f"{i:>5} {t:>5} {word:<10} {int(b.masks[i]):>4} {b.values[i]:>9.4f} "
              f"{b.logprobs[i]:>9.4f} {int(b.rewards[i]):>6}")


def cmd_baseline(args, cfg: LTCConfig) -> None:
    n = args.episodes or 200
    seeds = eval_seeds(cfg.run.seed, n)
    random_rate = evaluate_policy(build_policy(cfg), cfg, seeds).success_rate
    print(f"random {random_rate:.4f}")
    print(f"expert {expert_baseline(cfg, seeds):.4f}")


def cmd_prompt_tokens(args, cfg: LTCConfig) -> None:
    kinds = [args.env] if args.env else ["gridhouse", "kbhop", "arithgen"]
    for kind in kinds:
        zero = report_prompt_tokens(kind, "zero_shot", args.episodes)
        few = report_prompt_tokens(kind, args.mode, args.episodes)
        print(f"{kind} zero_shot {zero} {args.mode} {few} ratio {zero / few:.3f}")


COMMANDS = {
    "run": (cmd_run, "full LTC loop: warmup, then explore/train/evaluate iterations"),
    "warmup": (cmd_warmup, "behavior-cloning warmup only; writes ckpt-0"),
    "explore": (cmd_explore, "one exploration phase from a checkpoint; dumps buffers"),
    "train": (cmd_train, "one training phase on dumped buffers"),
    "eval": (cmd_eval, "greedy evaluation of a checkpoint"),
    "inspect": (cmd_inspect, "print a buffer file, one row per token"),
    "baseline": (cmd_baseline, "success rates of the untrained policy and the scripted expert"),
    "prompt-tokens": (cmd_prompt_tokens, "average prompt length, zero-shot vs few-shot"),
}


def _keys_epilog() -> str:
    lines = ["configuration keys (section.key = default):"]
    lines += [f"  {s}.{k} = {v!r}" for s, k, v in all_keys()]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="config file with [run] [model] [train] [pattern] sections")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--seed", type=int, help="run seed (overrides run.seed)")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./ltc-out)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ltc", description="Explore text environments, then train a small token policy on the collected sessions.",
                     epilog=_keys_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text,
                           epilog=_keys_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
        if name in ("explore", "train", "eval"):
            p.add_argument("--ckpt", required=True, help="policy checkpoint file")
        if name == "explore":
            p.add_argument("--iteration", type=int, default=1)
        if name == "train":
            p.add_argument("--buffers", required=True, help="directory of .ltcb files")
            p.add_argument("--save", help="where to write the updated checkpoint (default: --ckpt)")
        if name in ("eval", "baseline", "prompt-tokens"):
            p.add_argument("--episodes", type=int, default=None if name != "prompt-tokens" else 100)
        if name == "inspect":
            p.add_argument("path", help="buffer file (.ltcb)")
        if name == "prompt-tokens":
            p.add_argument("--env", choices=["gridhouse", "kbhop", "arithgen"])
            p.add_argument("--mode", default="few_shot_2")
    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        cfg = _config(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"ltc: config error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        COMMANDS[args.command][0](args, cfg)
    except (OSError, BufferFormatError, ValueError, RuntimeError) as exc:
        print(f"ltc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
