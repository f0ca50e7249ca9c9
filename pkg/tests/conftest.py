import numpy as np
import pytest

from ltc.buffer import Source, TrajectoryBuffer
from ltc.envs import env_vocab
from ltc.policy import Policy, PolicyConfig


@pytest.fixture(scope="session")
def vocab():
    return env_vocab()


@pytest.fixture(scope="session")
def policy(vocab):
    return Policy(PolicyConfig(len(vocab), seed=0))


@pytest.fixture
def tiny_policy():
    return Policy(PolicyConfig(vocab_size=64, embed_dim=16, hidden_dim=32, context_len=64, seed=3))


def random_buffer(rng: np.random.Generator, n: int | None = None, vocab_size: int = 64,
                  with_teacher: bool = True) -> TrajectoryBuffer:
    """Random buffer with at least one agent token and message-final rewards."""
    n = n or int(rng.integers(4, 40))
    choices = [0, 1, 2] if with_teacher else [0, 1]
    masks = rng.choice(choices, size=n)
    masks[int(rng.integers(n))] = Source.AGENT
    rewards = np.zeros(n, dtype=np.int8)
    ends = np.flatnonzero(np.append(masks[1:] != masks[:-1], True))
    for e in ends:
        if rng.random() < 0.3:
            rewards[e] = rng.choice([-1, 1])
    return TrajectoryBuffer(
        tokens=rng.integers(3, vocab_size, size=n),
        masks=masks,
        values=rng.uniform(-0.99, 0.99, size=n),
        logprobs=-rng.exponential(1.0, size=n),
        rewards=rewards,
    )
