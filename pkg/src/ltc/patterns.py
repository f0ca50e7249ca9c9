"""Monologue, Dialogue and Analogue communication patterns.

Each pattern drives agents (and an environment or grading teacher) through a
fixed turn structure and records the exchange as a :class:`~ltc.buffer.Session`.
Agent replies are cut at the first ``<eos>`` and always re-terminated with it.

Role tags ("think:", "act:", "solve:") are stored as the ``prompt`` of the
message they introduce, so they are tokenized as system text but do not count
as messages.

When a vocabulary and ``context_len`` are supplied, generation lengths are
capped so the sealed session always fits the policy context; if another full
step no longer fits, the current step's feedback becomes terminal with
reward -1 (same rule as running out of steps).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .buffer import Session, Source, new_session
from .envs.arithgen import Problem, TeacherOracle, parse_question, render_solution
from .envs.base import Environment
from .vocab import EOS, Vocabulary

THINK, ACT, SOLVE = "think:", "act:", "solve:"


@dataclass(frozen=True)
class PatternConfig:
    max_steps: int = 20
    max_rounds: int = 2
    max_gen: int = 32
    context_len: int | None = None

    def __post_init__(self):
        for name in ("max_steps", "max_rounds", "max_gen"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class AgentHandle(Protocol):
    label: str

    def __call__(self, session: Session, prompt: str, max_tokens: int) -> str: ...


class PolicyAgent:
    """Agent backed by a :class:`~ltc.policy.Policy` (student, or student-as-teacher)."""

    def __init__(self, policy, vocab: Vocabulary, temperature: float = 1.0,
                 seed: int = 0, label: str = "student"):
        self.policy = policy
        self.vocab = vocab
        self.temperature = temperature
        self.label = label
        self._rng = np.random.default_rng(seed)

    def context_ids(self, session: Session, prompt: str) -> list[int]:
        from .buffer import message_token_spans

        ids, _, _ = message_token_spans(session, self.vocab)
        return [self.vocab.bos_id] + ids + self.vocab.encode(prompt)

    def __call__(self, session: Session, prompt: str, max_tokens: int) -> str:
        prefix = self.context_ids(session, prompt)
        budget = max(0, min(max_tokens - 1, self.policy.config.context_len - len(prefix) - 1))
        if budget == 0:
            return EOS
        out, _ = self.policy.generate(
            prefix, {self.vocab.eos_id}, budget,
            rng_seed=int(self._rng.integers(2**63)), temperature=self.temperature,
        )
        return self.vocab.decode(out)


class ScriptedAgent:
    """Agent that answers from a function of (session, prompt)."""

    def __init__(self, fn: Callable[[Session, str], str], label: str = "student"):
        self.fn = fn
        self.label = label

    def __call__(self, session: Session, prompt: str, max_tokens: int) -> str:
        return self.fn(session, prompt)


def expert_agent(env: Environment) -> ScriptedAgent:
    """Scripted planner: thinks ``env.expert_thought()``, acts ``env.expert_action()``."""
    def fn(session, prompt):
        return env.expert_thought() if prompt == THINK else env.expert_action()
    return ScriptedAgent(fn, label="student")


def teacher_agent(env: Environment) -> ScriptedAgent:
    return ScriptedAgent(lambda session, prompt: env.expert_thought(), label="teacher")


def solver_agent() -> ScriptedAgent:
    """Scripted arithmetic student that always renders the correct solution."""
    def fn(session, prompt):
        question = session.messages[0].text if prompt == SOLVE else prompt
        return render_solution(parse_question(question))
    return ScriptedAgent(fn, label="student")


class _Budget:
    def __init__(self, vocab: Vocabulary | None, context_len: int | None, session: Session):
        self.vocab = vocab
        self.limit = context_len if (vocab is not None and context_len) else None
        self.used = 1  # BOS
        if self.limit is not None:
            self.used += len(vocab.encode(session.messages[0].text))

    def count(self, text: str) -> int:
        return len(self.vocab.encode(text)) if self.vocab is not None else len(text.split())

    def remaining(self) -> int:
        return 1 << 30 if self.limit is None else self.limit - self.used

    def add(self, *texts: str) -> None:
        if self.limit is not None:
            self.used += sum(self.count(t) for t in texts if t)


def _clean(text: str, max_tokens: int, vocab: Vocabulary | None) -> str:
    words = text.split()
    if EOS in words:
        words = words[: words.index(EOS)]
    body = " ".join(words)
    if vocab is not None:
        ids = vocab.encode(body)[: max(0, max_tokens - 1)]
        body = vocab.decode(ids)
    return f"{body} {EOS}".strip()


def _strip_eos(text: str) -> str:
    return " ".join(w for w in text.split() if w != EOS)


def _step_pattern(first: AgentHandle, first_source: Source, second: AgentHandle,
                  env: Environment, cfg: PatternConfig, vocab: Vocabulary | None) -> Session:
    session = new_session(env.task_text)
    budget = _Budget(vocab, cfg.context_len, session)
    obs_cap = env.max_obs_tokens
    # smallest possible step: tag, 1 word + eos, tag, 1 word + eos, observation
    min_step = 1 + 2 + 1 + 2 + obs_cap
    for i in range(cfg.max_steps):
        room = budget.remaining() - 1 - (1 + 2 + obs_cap)
        thought = _clean(first(session, THINK, min(cfg.max_gen, room)), min(cfg.max_gen, room), vocab)
        session.append(thought, first_source, 0, prompt=THINK)
        budget.add(THINK, thought)

        room = budget.remaining() - 1 - obs_cap
        action = _clean(second(session, ACT, min(cfg.max_gen, room)), min(cfg.max_gen, room), vocab)
        session.append(action, Source.AGENT, 0, prompt=ACT)
        budget.add(ACT, action)

        obs, reward, done = env.step(_strip_eos(action))
        budget.add(obs)
        out_of_budget = i == cfg.max_steps - 1 or budget.remaining() < min_step
        if reward == 0 and out_of_budget:
            reward = -1
        session.append(obs, Source.SYSTEM, reward)
        if reward != 0:
            break
    return session


def run_monologue(agent: AgentHandle, env: Environment, cfg: PatternConfig = PatternConfig(),
                  vocab: Vocabulary | None = None) -> Session:
    """One agent thinks and acts; the environment answers each action."""
    return _step_pattern(agent, Source.AGENT, agent, env, cfg, vocab)


def run_dialogue(student: AgentHandle, teacher: AgentHandle, env: Environment,
                 cfg: PatternConfig = PatternConfig(), vocab: Vocabulary | None = None) -> Session:
    """The teacher thinks (teacher-masked), the student acts, the environment answers."""
    if student is teacher:
        raise ValueError("dialogue needs distinct student and teacher handles")
    return _step_pattern(teacher, Source.TEACHER, student, env, cfg, vocab)


def run_single_answer(student: AgentHandle, problem: Problem, cfg: PatternConfig = PatternConfig(),
                      vocab: Vocabulary | None = None) -> Session:
    """A single graded answer to ``problem``, the test-time form of the analogue pattern."""
    session = new_session(problem.question)
    budget = _Budget(vocab, cfg.context_len, session)
    room = min(cfg.max_gen, budget.remaining() - budget.count(SOLVE))
    answer = _clean(student(session, SOLVE, room), room, vocab)
    reward, _ = TeacherOracle().check(problem, answer)
    session.append(answer, Source.AGENT, reward, prompt=SOLVE)
    return session


def run_analogue(student: AgentHandle, teacher: TeacherOracle, problem: Problem,
                 cfg: PatternConfig = PatternConfig(), vocab: Vocabulary | None = None,
                 rng_seed: int = 0) -> Session:
    """Student answers, teacher grades and corrects, then poses an analogous question.

    Per round: student answer (reward from the teacher's check), the teacher's
    corrected solution (reward +1), and the student's answer to the analogous
    question, whose text is the prompt of that message (reward from the check
    against the new oracle answer).
    """
    session = new_session(problem.question)
    budget = _Budget(vocab, cfg.context_len, session)
    rng = np.random.default_rng(rng_seed)
    for _ in range(cfg.max_rounds):
        corrected_len = budget.count(teacher.check(problem, "")[1]) + 1
        new_problem = teacher.analogue(problem, int(rng.integers(2**63)))
        new_prompt = f"{new_problem.question} {SOLVE}"
        # a round must fit two minimal answers plus the fixed teacher/question text
        fixed = 1 + corrected_len + budget.count(new_prompt)
        room = budget.remaining() - fixed - 2
        if room < 2:
            break
        answer = _clean(student(session, SOLVE, min(cfg.max_gen, room)), min(cfg.max_gen, room), vocab)
        reward, corrected = teacher.check(problem, answer)
        session.append(answer, Source.AGENT, reward, prompt=SOLVE)
        session.append(f"{corrected} {EOS}", Source.TEACHER, 1)
        budget.add(SOLVE, answer, f"{corrected} {EOS}")

        room = budget.remaining() - budget.count(new_prompt)
        answer2 = _clean(student(session, new_prompt, min(cfg.max_gen, room)),
                         min(cfg.max_gen, room), vocab)
        reward2, _ = teacher.check(new_problem, answer2)
        session.append(answer2, Source.AGENT, reward2, prompt=new_prompt)
        budget.add(new_prompt, answer2)
    return session
