"""Scikit-learn style wrapper around the LTC loop.

``fit`` runs warmup plus LTC iterations on the configured environment;
``predict`` maps environment seeds to greedy episode success (1/0) and
``score`` is the mean success over the given seeds.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_seeds
from .config import LTCConfig
from .runner import build_policy, run_episode, run_ltc


class LTCAgent(BaseEstimator):
    def __init__(self, env: str = "gridhouse", pattern: str = "", max_iterations: int = 30,
                 n_gen: int = 0, n_train: int = 256, workers: int = 1, eval_episodes: int = 100,
                 n_expert: int = 256, beta: float = 1.0, lam: float = 0.5, lr: float = 2e-4,
                 seed: int = 0, out_dir=None, overrides: dict | None = None):
        self.env = env
        self.pattern = pattern
        self.max_iterations = max_iterations
        self.n_gen = n_gen
        self.n_train = n_train
        self.workers = workers
        self.eval_episodes = eval_episodes
        self.n_expert = n_expert
        self.beta = beta
        self.lam = lam
        self.lr = lr
        self.seed = seed
        self.out_dir = out_dir
        #: extra ``section.key -> value`` config overrides, applied last
        self.overrides = overrides

    def to_config(self) -> LTCConfig:
        p = self.get_params()
        run_keys = ("env", "pattern", "max_iterations", "n_gen", "n_train", "workers",
                    "eval_episodes", "n_expert", "seed")
        overrides = {f"run.{k}": p[k] for k in run_keys}
        overrides.update({"train.beta": p["beta"], "train.lam": p["lam"], "train.lr": p["lr"]})
        overrides.update(p["overrides"] or {})
        return LTCConfig().replace(**overrides)

    def fit(self, X=None, y=None):
        """Train from scratch. ``X`` and ``y`` are ignored (the env generates data)."""
        self.config_ = self.to_config()
        self.policy_ = build_policy(self.config_)
        self.metrics_ = run_ltc(self.config_, self.out_dir, policy=self.policy_)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "policy_")
        seeds = check_seeds(X)
        return np.array([
            int(run_episode(self.config_, int(s), "eval", self.policy_).terminal_reward == 1)
            for s in seeds
        ])

    def score(self, X, y=None) -> float:
        return float(self.predict(X).mean())
