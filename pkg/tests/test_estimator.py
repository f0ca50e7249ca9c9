import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ltc._validation import check_seeds
from ltc.config import ConfigError
from ltc.estimator import LTCAgent

FAST = {"model.embed_dim": 16, "model.hidden_dim": 32, "run.warmup_max_epochs": 1,
        "run.warmup_eval_episodes": 2, "run.n_gen": 2, "run.n_train": 4, "pattern.max_steps": 4}


def test_params_round_trip_and_clone():
    est = LTCAgent(env="kbhop", beta=0.5, overrides={"train.clip": 0.1})
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    cfg = est.to_config()
    assert cfg.run.env == "kbhop" and cfg.train.beta == 0.5 and cfg.train.clip == 0.1
    assert cfg.run.resolved_pattern == "dialogue"


def test_invalid_params_raise_at_fit():
    with pytest.raises(ConfigError):
        LTCAgent(env="gridhouse", pattern="analogue").fit()


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        LTCAgent().predict([1, 2])


def test_fit_predict_score(tmp_path):
    est = LTCAgent(max_iterations=1, n_expert=4, eval_episodes=2, out_dir=tmp_path, overrides=FAST)
    assert est.fit() is est
    assert len(est.metrics_) == 2
    pred = est.predict([3, 4, 5])
    assert pred.dtype.kind == "i" and set(pred) <= {0, 1}
    assert est.score([3, 4, 5]) == pred.mean()
    assert np.array_equal(est.predict(np.array([[3], [4], [5]])), pred)
    assert (tmp_path / "metrics.jsonl").exists()


def test_check_seeds():
    assert check_seeds(7).tolist() == [7]
    assert check_seeds([2**64 - 1]).dtype == np.uint64
    for bad, err in (([], ValueError), ([[1, 2]], ValueError), ([-1], ValueError),
                     ([2**64], ValueError), ([1.5], TypeError), (["3"], TypeError), ([True], TypeError)):
        with pytest.raises(err):
            check_seeds(bad)
