import numpy as np
import pytest

from ltc.buffer import Source, message_token_spans
from ltc.envs import TeacherOracle, make_env
from ltc.envs.arithgen import TEMPLATES, parse_question, render_solution, sample_problem
from ltc.patterns import (
    ACT, SOLVE, THINK, PatternConfig, PolicyAgent, ScriptedAgent, expert_agent, run_analogue,
    run_dialogue, run_monologue, run_single_answer, solver_agent, teacher_agent,
)
from ltc.policy import Policy, PolicyConfig


def gibberish(label="student"):
    return ScriptedAgent(lambda session, prompt: "mug mug", label=label)


def sources(session):
    return [m.source for m in session.messages]


def nonzero(session):
    return [(m.source, m.reward) for m in session.messages if m.reward]


@pytest.mark.parametrize("seed", range(10))
def test_monologue_expert_succeeds(seed):
    env = make_env("gridhouse", seed)
    s = run_monologue(expert_agent(env), env)
    assert s.terminal_reward == 1
    assert Source.TEACHER not in sources(s)
    assert nonzero(s) == [(Source.SYSTEM, 1)]


def test_monologue_turn_structure():
    env = make_env("gridhouse", 3)
    s = run_monologue(expert_agent(env), env)
    body = s.messages[1:]
    assert len(body) % 3 == 0
    for i in range(0, len(body), 3):
        think, act, obs = body[i:i + 3]
        assert (think.source, think.prompt) == (Source.AGENT, THINK)
        assert (act.source, act.prompt) == (Source.AGENT, ACT)
        assert obs.source == Source.SYSTEM and obs.prompt == ""
        assert think.text.endswith("<eos>") and act.text.endswith("<eos>")


def test_monologue_gibberish_exhausts_budget():
    env = make_env("gridhouse", 0)
    cfg = PatternConfig(max_steps=5)
    s = run_monologue(gibberish(), env, cfg)
    assert s.terminal_reward == -1
    assert len(s.messages) == 3 * 5 + 1
    assert all(m.text == "nothing happens ." for m in s.messages[3::3])
    assert nonzero(s) == [(Source.SYSTEM, -1)]


def test_agent_output_cut_at_first_eos():
    env = make_env("gridhouse", 0)
    agent = ScriptedAgent(lambda session, prompt: "look <eos> go to mug")
    s = run_monologue(agent, env, PatternConfig(max_steps=1))
    assert s.messages[1].text == "look <eos>"


@pytest.mark.parametrize("seed", range(10))
def test_dialogue_oracles_solve_kbhop(seed):
    env = make_env("kbhop", seed)
    s = run_dialogue(expert_agent(env), teacher_agent(env), env)
    assert s.terminal_reward == 1
    steps = (len(s.messages) - 1) // 3
    assert steps <= 4
    thoughts = s.messages[1::3]
    actions = s.messages[2::3]
    assert all(m.source == Source.TEACHER for m in thoughts)
    assert all(m.source == Source.AGENT for m in actions)
    assert {Source.SYSTEM, Source.AGENT, Source.TEACHER} <= set(sources(s))
    assert all(src == Source.SYSTEM for src, _ in nonzero(s))


def test_dialogue_needs_distinct_handles():
    env = make_env("kbhop", 0)
    a = expert_agent(env)
    with pytest.raises(ValueError):
        run_dialogue(a, a, env)


def test_message_count_bound():
    cfg = PatternConfig(max_steps=4, max_rounds=3)
    env = make_env("kbhop", 1)
    s = run_dialogue(gibberish(), gibberish("teacher"), env, cfg)
    assert len(s.messages) <= 3 * cfg.max_steps + 1
    problem = make_env("arithgen", 1).problem
    s = run_analogue(gibberish(), TeacherOracle(), problem, cfg)
    assert len(s.messages) <= 3 * cfg.max_rounds + 1


def test_analogue_correct_student():
    problem = make_env("arithgen", 4).problem
    s = run_analogue(solver_agent(), TeacherOracle(), problem)
    assert len(s.messages) == 1 + 3 * 2
    for i in range(1, len(s.messages), 3):
        ans, fix, ans2 = s.messages[i:i + 3]
        assert (ans.source, ans.reward, ans.prompt) == (Source.AGENT, 1, SOLVE)
        assert (fix.source, fix.reward) == (Source.TEACHER, 1)
        assert (ans2.source, ans2.reward) == (Source.AGENT, 1)
    assert s.terminal_reward == 1


def test_analogue_wrong_student_still_gets_corrections():
    problem = make_env("arithgen", 5).problem
    s = run_analogue(gibberish(), TeacherOracle(), problem)
    agent = [m for m in s.messages if m.source == Source.AGENT]
    teacher = [m for m in s.messages if m.source == Source.TEACHER]
    assert all(m.reward == -1 for m in agent)
    assert teacher and all(m.reward == 1 for m in teacher)
    assert teacher[0].text == f"{render_solution(problem)} <eos>"
    assert all(m.source != Source.SYSTEM for m in s.messages[1:])


def test_analogous_question_same_template_new_numbers():
    problem = make_env("arithgen", 6).problem
    s = run_analogue(solver_agent(), TeacherOracle(), problem, rng_seed=11)
    for m in s.messages[3::3]:
        new = parse_question(m.prompt)
        assert new.template_id == problem.template_id
        assert new.operands != problem.operands
        words, orig = TEMPLATES[new.template_id][0].split(), problem.question.split()
        differing = [i for i, (a, b) in enumerate(zip(m.prompt.split(), orig)) if a != b]
        assert all(words[i] == "{}" for i in differing)


def test_analogue_seeded():
    problem = sample_problem(np.random.default_rng(0))
    a = run_analogue(solver_agent(), TeacherOracle(), problem, rng_seed=3)
    b = run_analogue(solver_agent(), TeacherOracle(), problem, rng_seed=3)
    assert [(m.text, m.prompt) for m in a.messages] == [(m.text, m.prompt) for m in b.messages]


def test_single_answer():
    problem = make_env("arithgen", 7).problem
    good = run_single_answer(solver_agent(), problem)
    assert len(good.messages) == 2 and good.terminal_reward == 1
    assert run_single_answer(gibberish(), problem).terminal_reward == -1


@pytest.mark.parametrize("kind", ["gridhouse", "kbhop", "arithgen"])
def test_policy_sessions_fit_context(vocab, kind):
    ctx = 96
    policy = Policy(PolicyConfig(len(vocab), embed_dim=16, hidden_dim=32, context_len=ctx, seed=1))
    cfg = PatternConfig(context_len=ctx)
    for seed in range(3):
        env = make_env(kind, seed)
        student = PolicyAgent(policy, vocab, temperature=1.0, seed=seed)
        if kind == "gridhouse":
            s = run_monologue(student, env, cfg, vocab)
        elif kind == "kbhop":
            s = run_dialogue(student, teacher_agent(env), env, cfg, vocab)
        else:
            s = run_analogue(student, TeacherOracle(), env.problem, cfg, vocab, rng_seed=seed)
        ids, masks, _ = message_token_spans(s, vocab)
        assert 1 + len(ids) <= ctx
        if kind != "arithgen":
            assert s.terminal_reward in (-1, 1)


def test_pattern_config_positive():
    with pytest.raises(ValueError):
        PatternConfig(max_steps=0)
    with pytest.raises(ValueError):
        PatternConfig(max_gen=-1)
