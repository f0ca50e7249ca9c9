"""Templated multi-step word problems with integer answers (GSM8k analog)."""
from __future__ import annotations

import operator
from dataclasses import dataclass

import numpy as np

from .base import Environment

OPERAND_RANGE = (1, 20)
MAX_VALUE = 99

_OPS = {"+": operator.add, "-": operator.sub, "*": operator.mul, "/": operator.floordiv}

# (question format, left-fold operator chain); each chain has 2-4 steps
TEMPLATES = (
    ("tom has {} apples , buys {} and eats {} . how many apples ?", ("+", "-")),
    ("a box has {} pens , sam buys {} boxes and loses {} pens . how many pens ?", ("*", "-")),
    ("ann has {} coins and gets {} , then shares them with {} kids . how many each ?", ("+", "/")),
    ("a shop bakes {} cakes a day for {} days , bakes {} more and sells {} . how many cakes ?",
     ("*", "+", "-")),
    ("a team has {} boys and {} girls , each has {} balls and {} are lost . how many balls ?",
     ("+", "*", "-")),
    ("sue has {} red and {} blue beads , loses {} , makes {} sets and adds {} . how many beads ?",
     ("+", "-", "*", "+")),
)

GRAMMAR = tuple(dict.fromkeys(
    [w for fmt, _ in TEMPLATES for w in fmt.split() if w != "{}"]
    + ["+", "-", "*", "/", "=", "solve:", "correct", "wrong", "nothing", "happens"]
))


@dataclass(frozen=True)
class Problem:
    question: str
    answer: int
    template_id: int
    operands: tuple[int, ...]


def evaluate_chain(template_id: int, operands) -> list[int]:
    """Intermediate values of the template's left-fold chain; last entry is the answer."""
    ops = TEMPLATES[template_id][1]
    values = [operands[0]]
    for op, x in zip(ops, operands[1:]):
        acc = values[-1]
        if op == "/" and (x == 0 or acc % x):
            raise ValueError("division must be exact")
        values.append(_OPS[op](acc, x))
    return values[1:]


def _valid(template_id: int, operands) -> bool:
    try:
        values = evaluate_chain(template_id, operands)
    except ValueError:
        return False
    return all(0 <= v <= MAX_VALUE for v in values)


def make_problem(template_id: int, operands) -> Problem:
    operands = tuple(int(x) for x in operands)
    if not _valid(template_id, operands):
        raise ValueError(f"operands {operands} invalid for template {template_id}")
    question = TEMPLATES[template_id][0].format(*operands)
    answer = evaluate_chain(template_id, operands)[-1]
    return Problem(question, answer, template_id, operands)


def sample_problem(rng: np.random.Generator, template_id: int | None = None) -> Problem:
    if template_id is None:
        template_id = int(rng.integers(len(TEMPLATES)))
    n = len(TEMPLATES[template_id][1]) + 1
    lo, hi = OPERAND_RANGE
    while True:
        operands = tuple(int(x) for x in rng.integers(lo, hi + 1, size=n))
        if _valid(template_id, operands):
            return make_problem(template_id, operands)


def parse_question(text: str) -> Problem:
    """Recover the Problem from its question text (inverse of make_problem)."""
    text = text.replace(" solve:", "").strip()
    words = text.split()
    for tid, (fmt, _) in enumerate(TEMPLATES):
        pattern = fmt.split()
        if len(pattern) != len(words):
            continue
        operands = []
        for p, w in zip(pattern, words):
            if p == "{}":
                if not w.isdigit():
                    break
                operands.append(int(w))
            elif p != w:
                break
        else:
            return make_problem(tid, operands)
    raise ValueError(f"not a known question: {text!r}")


def render_solution(problem: Problem) -> str:
    """Step-by-step chain, e.g. ``3 + 4 = 7 - 2 = 5 answer: 5``."""
    ops = TEMPLATES[problem.template_id][1]
    values = evaluate_chain(problem.template_id, problem.operands)
    parts = [str(problem.operands[0])]
    for op, x, v in zip(ops, problem.operands[1:], values):
        parts += [op, str(x), "=", str(v)]
    parts += ["answer:", str(problem.answer)]
    return " ".join(parts)


def parse_answer(text: str) -> int | None:
    """Number following the last ``answer:`` tag, or None."""
    words = [w for w in text.lower().split() if w != "<eos>"]
    if "answer:" not in words:
        return None
    tail = words[len(words) - 1 - words[::-1].index("answer:") + 1:]
    digits = []
    for w in tail:
        if not w.isdigit():
            break
        digits.append(w)
    if not digits or len(digits) != len(tail):
        return None
    return int("".join(digits))


def teacher_check(problem: Problem, answer_text: str) -> tuple[int, str]:
    """Grade a student answer; the corrected text always renders the oracle solution."""
    value = parse_answer(answer_text)
    reward = 1 if value is not None and value == problem.answer else -1
    return reward, render_solution(problem)


def teacher_analogue(problem: Problem, rng_seed: int) -> Problem:
    """Same template, resampled operands (at least one differs), answer recomputed."""
    rng = np.random.default_rng(rng_seed)
    while True:
        new = sample_problem(rng, problem.template_id)
        if new.operands != problem.operands:
            return new


class TeacherOracle:
    """Scripted stand-in for the grading teacher of the analogue pattern."""

    label = "teacher"

    def check(self, problem: Problem, answer_text: str) -> tuple[int, str]:
        return teacher_check(problem, answer_text)

    def analogue(self, problem: Problem, rng_seed: int) -> Problem:
        return teacher_analogue(problem, rng_seed)


class ArithGen(Environment):
    """Single-shot environment: the episode ends on the first ``answer:``."""

    kind = "arithgen"
    max_obs_tokens = 2

    def __init__(self, seed: int, max_steps: int = 20, template_id: int | None = None):
        self._template_id = template_id
        super().__init__(seed, max_steps)

    def _setup(self) -> str:
        self.problem = sample_problem(self.rng, self._template_id)
        return self.problem.question

    def _apply(self, words):
        value = parse_answer(" ".join(words))
        if value is None:
            return "nothing happens .", 0
        if value == self.problem.answer:
            return "correct .", 1
        return "wrong .", -1

    def expert_action(self) -> str:
        return render_solution(self.problem)

    def expert_thought(self) -> str:
        return render_solution(self.problem)
