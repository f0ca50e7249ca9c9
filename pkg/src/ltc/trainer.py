"""Advantage estimation and the masked LM + PPO objective.

    L_total = L_LM + beta * (L_policy + lambda * L_value + L_entropy)

Token masks gate each term: system tokens (0) get no policy/value/entropy
loss; agent tokens (1) get all of them; teacher tokens (2) get the policy
loss only, with a fixed advantage (they have no value estimates of their
own): the sign of the teacher message's own reward when it has one, else the
sign of the buffer's terminal reward. The LM loss is next-token
cross entropy over agent and teacher tokens of buffers whose terminal reward
is +1.

Every masked mean is ``x[selection].sum() / count`` where ``x[selection]``
flattens the (buffer, position) grid in row-major order, so a masked loss is
bitwise identical to the same formula applied to the compacted sequence of
selected positions.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .buffer import Source, TrajectoryBuffer
from .vocab import BOS, SPECIALS

BOS_ID = SPECIALS.index(BOS)
ENTROPY_COEF = 0.01


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 1.0
    lam: float = 0.5
    clip: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coef: float = ENTROPY_COEF
    lr: float = 2e-4
    weight_decay: float = 0.01
    #: bound on the per-token loss for negative advantages, as c * |A|; 0 disables
    dual_clip: float = 3.0
    batch_size: int = 32
    ppo_epochs: int = 2
    normalize_advantages: bool = False
    lm_include_system: bool = False

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if not 0.0 < self.gamma <= 1.0 or not 0.0 < self.gae_lambda <= 1.0:
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if self.entropy_coef != ENTROPY_COEF:
            raise ValueError(f"entropy_coef is fixed at {ENTROPY_COEF}")
        if self.dual_clip != 0.0 and self.dual_clip <= 1.0:
            raise ValueError("dual_clip must be 0 (off) or greater than 1")
        if self.batch_size < 1 or self.ppo_epochs < 1:
            raise ValueError("batch_size and ppo_epochs must be positive")


@dataclass
class AdvantageSet:
    positions: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


@dataclass
class LossReport:
    pass_index: int
    lm: float
    policy: float
    value: float
    entropy: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


def step_rewards(b: TrajectoryBuffer) -> tuple[np.ndarray, np.ndarray]:
    """Agent positions and the reward credited to each.

    An agent token keeps any reward placed on itself, plus the rewards on
    system tokens between it and the next agent token (feedback follows the
    action). Rewards on teacher tokens belong to the teacher and are not
    credited to agent steps.
    """
    pos = np.flatnonzero(b.masks == Source.AGENT)
    if len(pos) == 0:
        raise TrainingError("buffer has no agent tokens")
    bounds = np.append(pos, len(b))
    system_reward = np.where(b.masks == Source.SYSTEM, b.rewards, 0).astype(np.float64)
    cum = np.concatenate([[0.0], np.cumsum(system_reward)])
    credited = b.rewards[pos].astype(np.float64) + (cum[bounds[1:]] - cum[pos + 1])
    return pos, credited


def teacher_advantages(b: TrajectoryBuffer) -> tuple[np.ndarray, np.ndarray]:
    """Teacher positions and their fixed surrogate advantage.

    Each contiguous run of teacher tokens is one teacher message. A message
    that carries its own reward (the graded correction of the analogue
    pattern) uses that reward's sign; otherwise the buffer's terminal reward
    sign is used.
    """
    teacher = b.masks == Source.TEACHER
    pos = np.flatnonzero(teacher)
    adv = np.zeros(len(pos))
    if len(pos) == 0:
        return pos, adv
    terminal = float(np.sign(b.terminal_reward))
    breaks = np.flatnonzero(np.diff(pos) > 1)
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [len(pos) - 1]])
    for s, e in zip(starts, ends):
        own = b.rewards[pos[e]]
        adv[s:e + 1] = float(np.sign(own)) if own != 0 else terminal
    return pos, adv


def compute_gae(b: TrajectoryBuffer, cfg: TrainConfig = TrainConfig()) -> AdvantageSet:
    pos, r = step_rewards(b)
    v = b.values[pos]
    adv = np.zeros(len(pos))
    running = 0.0
    for j in range(len(pos) - 1, -1, -1):
        v_next = v[j + 1] if j + 1 < len(pos) else 0.0
        delta = r[j] + cfg.gamma * v_next - v[j]
        running = delta + cfg.gamma * cfg.gae_lambda * running
        adv[j] = running
    return AdvantageSet(pos, adv, adv + v)


# -- per-token terms (pure tensor functions) ------------------------------------

def masked_mean(x: torch.Tensor, sel: torch.Tensor) -> torch.Tensor:
    n = int(sel.sum())
    return x[sel].sum() / max(n, 1)


def surrogate_terms(new_logp, old_logp, adv, clip: float, dual_clip: float = 0.0) -> torch.Tensor:
    """Per-token negated clipped surrogate ``-min(r A, clip(r) A)``.

    With ``dual_clip = c > 1`` the objective at negative advantages is
    floored at ``c A``, so a large ratio on an off-policy token cannot blow
    the loss up; its gradient is then zero like in the ordinary clip region.
    """
    ratio = torch.exp(new_logp - old_logp)
    obj = torch.minimum(ratio * adv, torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * adv)
    if dual_clip:
        obj = torch.where(adv < 0, torch.maximum(obj, dual_clip * adv), obj)
    return -obj


def value_terms(values, returns) -> torch.Tensor:
    return (values - returns) ** 2


def neg_entropy_terms(logp_rows) -> torch.Tensor:
    """sum_a pi(a) log pi(a) per row (<= 0)."""
    return (logp_rows.exp() * logp_rows).sum(-1)


def policy_loss_from_terms(new_logp, old_logp, adv, sel, clip: float, dual_clip: float = 0.0):
    return masked_mean(surrogate_terms(new_logp, old_logp, adv, clip, dual_clip), sel)


def value_loss_from_terms(values, returns, sel):
    return masked_mean(value_terms(values, returns), sel)


def lm_loss_from_terms(chosen_logp, sel):
    return masked_mean(-chosen_logp, sel)


def entropy_loss_from_terms(logp_rows, sel, coef: float = ENTROPY_COEF):
    return coef * masked_mean(neg_entropy_terms(logp_rows), sel)


# -- batching -------------------------------------------------------------------

@dataclass
class Batch:
    ids: torch.Tensor        # (B, T) inputs: BOS + tokens[:-1]
    targets: torch.Tensor    # (B, T) tokens
    masks: torch.Tensor      # (B, T) source mask, -1 on padding
    old_logp: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor
    positive: torch.Tensor   # (B, T) bool, buffer terminal reward == +1

    @property
    def valid(self):
        return self.masks >= 0


def make_batch(buffers, cfg: TrainConfig, with_advantages: bool = True) -> Batch:
    if not buffers:
        raise TrainingError("empty batch")
    B, T = len(buffers), max(len(b) for b in buffers)
    ids = np.zeros((B, T), dtype=np.int64)
    targets = np.zeros((B, T), dtype=np.int64)
    masks = np.full((B, T), -1, dtype=np.int64)
    old_logp = np.zeros((B, T))
    adv = np.zeros((B, T))
    ret = np.zeros((B, T))
    positive = np.zeros((B, T), dtype=bool)
    for i, b in enumerate(buffers):
        n = len(b)
        ids[i, 0] = BOS_ID
        ids[i, 1:n] = b.tokens[:-1]
        targets[i, :n] = b.tokens
        masks[i, :n] = b.masks
        old_logp[i, :n] = b.logprobs
        positive[i, :n] = b.terminal_reward == 1
        if with_advantages:
            gae = compute_gae(b, cfg)
            adv[i, gae.positions] = gae.advantages
            ret[i, gae.positions] = gae.returns
            tpos, tadv = teacher_advantages(b)
            adv[i, tpos] = tadv
    if with_advantages and cfg.normalize_advantages:
        agent = masks == Source.AGENT
        a = adv[agent]
        if len(a) > 1:
            adv[agent] = (a - a.mean()) / (a.std() + 1e-8)
    t = torch.from_numpy
    return Batch(t(ids), t(targets), t(masks), t(old_logp), t(adv), t(ret), t(positive))


# -- losses ---------------------------------------------------------------------

def selections(batch: Batch, cfg: TrainConfig) -> dict[str, torch.Tensor]:
    m = batch.masks
    agent = m == Source.AGENT
    agent_or_teacher = agent | (m == Source.TEACHER)
    lm_tokens = agent_or_teacher | (m == Source.SYSTEM) if cfg.lm_include_system else agent_or_teacher
    return {
        "lm": lm_tokens & batch.positive,
        "policy": agent_or_teacher,
        "value": agent,
        "entropy": agent,
    }


def compute_losses(policy, batch: Batch, cfg: TrainConfig, lm_only: bool = False) -> dict:
    logits, values = policy.forward_batch(batch.ids)
    logp_rows = torch.log_softmax(logits, dim=-1)
    chosen = logp_rows.gather(-1, batch.targets[..., None]).squeeze(-1)
    sel = selections(batch, cfg)
    out = {"lm": lm_loss_from_terms(chosen, sel["lm"])}
    zero = torch.zeros((), dtype=out["lm"].dtype)
    if lm_only:
        out.update(policy=zero, value=zero, entropy=zero)
        out["total"] = out["lm"]
        return out
    out["policy"] = policy_loss_from_terms(chosen, batch.old_logp, batch.advantages,
                                           sel["policy"], cfg.clip, cfg.dual_clip)
    out["value"] = value_loss_from_terms(values, batch.returns, sel["value"])
    out["entropy"] = entropy_loss_from_terms(logp_rows, sel["entropy"], cfg.entropy_coef)
    out["total"] = out["lm"] + cfg.beta * (out["policy"] + cfg.lam * out["value"] + out["entropy"])
    return out


def _scalar(batch, policy, cfg, key, with_advantages=True) -> float:
    with torch.no_grad():
        return float(compute_losses(policy, _as_batch(batch, cfg, with_advantages), cfg,
                                    lm_only=not with_advantages)[key])


def loss_lm(batch, policy, cfg: TrainConfig = TrainConfig()) -> float:
    return _scalar(batch, policy, cfg, "lm", with_advantages=False)


def loss_policy(batch, policy, cfg: TrainConfig = TrainConfig()) -> float:
    return _scalar(batch, policy, cfg, "policy")


def loss_value(batch, policy, cfg: TrainConfig = TrainConfig()) -> float:
    return _scalar(batch, policy, cfg, "value")


def loss_entropy(batch, policy, cfg: TrainConfig = TrainConfig()) -> float:
    return _scalar(batch, policy, cfg, "entropy")


def _as_batch(batch, cfg, with_advantages=True) -> Batch:
    return batch if isinstance(batch, Batch) else make_batch(list(batch), cfg, with_advantages)


def _check_finite(losses: dict) -> None:
    for name, value in losses.items():
        if not math.isfinite(float(value.detach())):
            raise TrainingError(f"non-finite {name} loss: {float(value.detach())}")


def train_epoch(policy, buffers, cfg: TrainConfig = TrainConfig(), rng_seed: int = 0,
                lm_only: bool = False, lr: float | None = None) -> list[LossReport]:
    """``ppo_epochs`` shuffled passes over ``buffers`` in minibatches of ``batch_size``.

    One optimizer step per minibatch; returns one report per step.
    """
    buffers = list(buffers)
    if not buffers:
        raise TrainingError("empty batch")
    # advantages come from the values frozen at collection time, so compute once
    full = make_batch(buffers, cfg, with_advantages=not lm_only)
    rng = np.random.default_rng(rng_seed)
    reports: list[LossReport] = []
    policy.net.train()
    for p in range(cfg.ppo_epochs):
        order = rng.permutation(len(buffers))
        for start in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[start:start + cfg.batch_size])
            mb = _slice(full, idx)
            losses = compute_losses(policy, mb, cfg, lm_only=lm_only)
            _check_finite(losses)
            policy.zero_grad()
            losses["total"].backward()
            policy.optimize_step(lr=cfg.lr if lr is None else lr)
            reports.append(LossReport(p, *(float(losses[k].detach()) for k in
                                           ("lm", "policy", "value", "entropy", "total"))))
    return reports


def _slice(batch: Batch, idx: torch.Tensor) -> Batch:
    width = int((batch.masks[idx] >= 0).sum(1).max())
    return Batch(*(getattr(batch, f)[idx, :width] for f in
                   ("ids", "targets", "masks", "old_logp", "advantages", "returns", "positive")))
