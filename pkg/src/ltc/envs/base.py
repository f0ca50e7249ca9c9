from __future__ import annotations

import numpy as np

NOTHING_HAPPENS = "nothing happens ."


class EnvError(RuntimeError):
    pass


class Environment:
    """Seedable text task with a step/observe/reward interface.

    Subclasses build their state in ``_setup`` from ``self.rng`` and implement
    ``_apply``, ``expert_action`` and ``expert_thought``. Stepping past the
    ``max_steps`` budget ends the episode with reward -1.
    """

    kind = "base"
    #: upper bound on the token length of any observation the env can emit
    max_obs_tokens = 16

    def __init__(self, seed: int, max_steps: int = 20):
        if max_steps <= 0:
            raise ValueError("max_steps must be positive")
        self.seed = int(seed)
        self.max_steps = max_steps
        self.rng = np.random.default_rng(self.seed)
        self.steps = 0
        self.done = False
        self.observation = self._setup()
        self.task_text = self.observation

    def _setup(self) -> str:
        raise NotImplementedError

    def _apply(self, words: list[str]) -> tuple[str, int]:
        raise NotImplementedError

    def expert_action(self) -> str:
        raise NotImplementedError

    def expert_thought(self) -> str:
        raise NotImplementedError

    def step(self, action_text: str) -> tuple[str, int, bool]:
        if self.done:
            raise EnvError("step() called on a finished episode")
        self.steps += 1
        if self.steps > self.max_steps:
            self.done = True
            return "out of steps .", -1, True
        words = [w for w in action_text.lower().split() if w != "<eos>"]
        obs, reward = self._apply(words)
        if reward != 0:
            self.done = True
        self.observation = obs
        return obs, reward, self.done

    def transcript_line(self, action: str, obs: str, reward: int) -> str:
        return f"> {action}\n{obs}  [reward {reward:+d}]"
