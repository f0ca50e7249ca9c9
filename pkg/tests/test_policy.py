import math
import os

import numpy as np
import pytest
import torch

from ltc.policy import Policy, PolicyConfig, PolicyError, init_policy


def small(seed=0, **kw):
    return init_policy(PolicyConfig(vocab_size=kw.pop("vocab_size", 32), embed_dim=16, hidden_dim=32,
                                    context_len=kw.pop("context_len", 48), seed=seed), **kw)


def test_init_determinism():
    assert small(1).state_equal(small(1))
    assert not small(1).state_equal(small(2))


def test_context_len_minimum():
    with pytest.raises(PolicyError):
        PolicyConfig(vocab_size=10, context_len=7)


def test_fresh_values_in_range():
    _, values = small().forward([1])
    assert values.shape == (1,) and -1 < values[0] < 1


def test_forward_shapes_and_normalization():
    p = small()
    logits, values = p.forward([1, 5, 6, 7])
    assert logits.shape == (4, 32) and values.shape == (4,)
    probs = torch.softmax(torch.from_numpy(logits), -1).sum(-1)
    assert torch.allclose(probs, torch.ones(4, dtype=torch.float64), atol=1e-9)


def test_causality():
    p = small(4)
    a, _ = p.forward([1, 5, 6, 7, 8])
    b, _ = p.forward([1, 5, 6, 9, 8])
    assert np.array_equal(a[:3], b[:3])
    assert not np.allclose(a[3], b[3])


def test_overlong_input():
    p = small()
    with pytest.raises(PolicyError):
        p.forward([1] * 49)
    with pytest.raises(PolicyError):
        p.evaluate([1])


def test_value_fuzz_strictly_inside():
    p = small(5)
    # push the value head hard so tanh saturates
    with torch.no_grad():
        p.net.value_head.weight.mul_(1e4)
    rng = np.random.default_rng(0)
    ids = torch.from_numpy(rng.integers(0, 32, size=(250, 40)))
    with torch.no_grad():
        _, values = p.forward_batch(ids)
    assert values.numel() == 10_000
    assert torch.all(values.abs() < 1)


def test_value_reads_penultimate_layer():
    p = small(6)
    _, v1 = p.forward([1, 2, 3, 4])
    with torch.no_grad():
        for q in p.net.blocks[-1].parameters():
            q.add_(0.5)
    _, v2 = p.forward([1, 2, 3, 4])
    assert np.array_equal(v1, v2)


def test_evaluate_uniform_entropy():
    p = small(vocab_size=4)
    with torch.no_grad():
        p.net.lm_head.weight.zero_()
        p.net.lm_head.bias.zero_()
    ev = p.evaluate([1, 2, 3, 0])
    assert np.allclose(ev.entropy, math.log(4), atol=1e-12)
    assert np.allclose(ev.logprobs, -math.log(4), atol=1e-12)


def test_evaluate_deterministic_distribution_entropy_zero():
    p = small(vocab_size=4)
    with torch.no_grad():
        p.net.lm_head.weight.zero_()
        p.net.lm_head.bias.copy_(torch.tensor([0.0, 0.0, 800.0, 0.0]))
    ev = p.evaluate([1, 2, 2])
    assert np.all(ev.entropy < 1e-12) and np.all(ev.logprobs == 0)


def test_evaluate_shift_invariance():
    p = small(7)
    before = p.evaluate([1, 4, 9, 3]).logprobs
    with torch.no_grad():
        p.net.lm_head.bias.add_(3.0)
    assert np.allclose(before, p.evaluate([1, 4, 9, 3]).logprobs, atol=1e-12)


def test_generate_greedy_is_argmax():
    p = small(8)
    out, _ = p.generate([1, 4], set(), max_new=6, temperature=0)
    seq = [1, 4]
    for tok in out:
        logits, _ = p.forward(seq)
        assert tok == int(np.argmax(logits[-1]))
        seq.append(tok)


def test_generate_seeded_and_consistent():
    p = small(9)
    a = p.generate([1, 4, 5], {2}, max_new=20, rng_seed=3)
    assert a == p.generate([1, 4, 5], {2}, max_new=20, rng_seed=3)
    toks, lps = a
    ev = p.evaluate([1, 4, 5] + toks)
    assert np.max(np.abs(ev.logprobs[-len(toks):] - np.array(lps))) < 1e-9


def test_generate_stops_and_errors():
    p = small(10)
    toks, _ = p.generate([1], {t for t in range(32)}, max_new=10, rng_seed=0)
    assert len(toks) == 1
    with pytest.raises(PolicyError):
        p.generate([1], set(), max_new=0)


def test_zero_grad_zero_decay_unchanged():
    p = small(11, weight_decay=0.0)
    before = {n: q.detach().clone() for n, q in p.named_parameters()}
    p.optimize_step([torch.zeros_like(q) for q in p.parameters()], lr=1e-3)
    assert all(torch.equal(before[n], q) for n, q in p.named_parameters())
    assert p.version == 1


def test_adamw_hand_step():
    p = small(12, weight_decay=0.01)
    lr, wd, b1, b2, eps = 1e-3, 0.01, 0.9, 0.999, 1e-8
    name, param = p.named_parameters()[3]
    idx = (0,) * param.dim()
    x0 = float(param.detach()[idx])
    g1, g2 = 0.5, -0.2

    def grads(g):
        out = {n: torch.zeros_like(q) for n, q in p.named_parameters()}
        out[name][idx] = g
        return out

    p.optimize_step(grads(g1), lr=lr)
    m = (1 - b1) * g1
    v = (1 - b2) * g1 ** 2
    x1 = x0 * (1 - lr * wd) - lr * (m / (1 - b1)) / (math.sqrt(v / (1 - b2)) + eps)
    assert abs(float(param.detach()[idx]) - x1) < 1e-15
    p.optimize_step(grads(g2), lr=lr)
    m = b1 * m + (1 - b1) * g2
    v = b2 * v + (1 - b2) * g2 ** 2
    x2 = x1 * (1 - lr * wd) - lr * (m / (1 - b1 ** 2)) / (math.sqrt(v / (1 - b2 ** 2)) + eps)
    assert abs(float(param.detach()[idx]) - x2) < 1e-15


def test_default_lr():
    assert Policy(PolicyConfig(vocab_size=8)).lr == 2e-4


def test_non_finite_gradient_names_block():
    p = small(13)
    grads = [torch.zeros_like(q) for q in p.parameters()]
    grads[2][0] = float("nan")
    name = p.named_parameters()[2][0]
    with pytest.raises(PolicyError, match=name.replace(".", r"\.")):
        p.optimize_step(grads)


def test_gradient_shape_mismatch():
    p = small(14)
    with pytest.raises(PolicyError):
        p.optimize_step([torch.zeros(1) for _ in p.parameters()])


def test_checkpoint_round_trip(tmp_path):
    p = small(15)
    p.version = 7
    p.save(tmp_path / "ckpt")
    q = Policy.load(tmp_path / "ckpt")
    assert q.state_equal(p) and q.version == 7 and q.config == p.config
    assert not os.path.exists(tmp_path / "ckpt.tmp")
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(PolicyError):
        Policy.load(tmp_path / "bad")


def test_snapshot_is_frozen_copy():
    p = small(16)
    s = p.snapshot()
    assert s.state_equal(p)
    with torch.no_grad():
        p.net.lm_head.bias.add_(1.0)
    assert not s.state_equal(p)


def test_gradient_matches_finite_differences():
    p = small(17)
    ids = torch.tensor([[1, 5, 7, 9, 3, 2], [1, 8, 8, 4, 6, 2]])

    def loss():
        logits, values = p.forward_batch(ids)
        return torch.log_softmax(logits, -1)[..., 3].sum() + (values ** 2).sum()

    p.zero_grad()
    loss().backward()
    rng = np.random.default_rng(0)
    named = p.named_parameters()
    h = 1e-5
    for _ in range(20):
        name, q = named[int(rng.integers(len(named)))]
        flat = q.data.view(-1)
        i = int(rng.integers(flat.numel()))
        with torch.no_grad():
            orig = float(flat[i])
            flat[i] = orig + h
            up = float(loss())
            flat[i] = orig - h
            down = float(loss())
            flat[i] = orig
        fd = (up - down) / (2 * h)
        an = float(q.grad.view(-1)[i])
        assert abs(fd - an) <= 1e-5 * max(1.0, abs(fd)), name
