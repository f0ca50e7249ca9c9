"""Synthetic text environments and their scripted expert/teacher oracles."""
from __future__ import annotations

from functools import lru_cache

from ..vocab import Vocabulary, build_vocab
from . import arithgen, gridhouse, kbhop
from .arithgen import ArithGen, Problem, TeacherOracle, teacher_analogue, teacher_check
from .base import EnvError, Environment
from .gridhouse import GridHouse
from .kbhop import KBHop

ENV_CLASSES = {"gridhouse": GridHouse, "kbhop": KBHop, "arithgen": ArithGen}
DEFAULT_PATTERN = {"gridhouse": "monologue", "kbhop": "dialogue", "arithgen": "analogue"}


def make_env(kind: str, seed: int, **params) -> Environment:
    try:
        cls = ENV_CLASSES[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown environment kind: {kind!r}") from None
    return cls(seed, **params)


def grammar_words() -> list[str]:
    """Every word any environment (or its oracles) can emit, deduplicated in order."""
    words = gridhouse.GRAMMAR + kbhop.GRAMMAR + arithgen.GRAMMAR
    return list(dict.fromkeys(words))


@lru_cache(maxsize=None)
def env_vocab() -> Vocabulary:
    return build_vocab(grammar_words())


def scripted_expert_act(env: Environment) -> str:
    if env.done:
        raise EnvError("expert queried on a finished episode")
    return env.expert_action()


__all__ = [
    "ArithGen", "EnvError", "Environment", "GridHouse", "KBHop", "Problem", "TeacherOracle",
    "DEFAULT_PATTERN", "ENV_CLASSES", "env_vocab", "grammar_words", "make_env",
    "scripted_expert_act", "teacher_analogue", "teacher_check",
]
