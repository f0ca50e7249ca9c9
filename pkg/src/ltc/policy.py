"""Small autoregressive token policy with an LM head and a tanh value head.

Architecture: learned token and position embeddings, ``num_layers`` pre-norm
causal self-attention blocks (single head, GELU MLP of width ``hidden_dim``),
final LayerNorm and a linear LM head. The value head is a linear layer on the
residual stream *entering the last block* (the penultimate layer's output),
squashed by tanh and clamped to stay strictly inside (-1, 1).

Everything runs in float64.

Initialization (seeded by ``PolicyConfig.seed``): every weight matrix and
embedding ~ N(0, 0.02^2), output projections of each block scaled by
1/sqrt(2 * num_layers), biases zero, LayerNorm gains one. The value head
weight ~ N(0, 0.02^2) and its bias is 0.
"""
from __future__ import annotations

import copy
import io
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

DTYPE = torch.float64
VALUE_BOUND = 1.0 - 1e-12

CKPT_MAGIC = b"LTCP"
CKPT_VERSION = 1


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    vocab_size: int
    embed_dim: int = 64
    hidden_dim: int = 128
    num_layers: int = 2
    context_len: int = 256
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "num_layers", "context_len"):
            if getattr(self, name) <= 0:
                raise PolicyError(f"{name} must be positive")
        if self.context_len < 8:
            raise PolicyError("context_len must be at least 8")


@dataclass
class EvalResult:
    """Per-token scores of a sequence; entry t refers to predicting token t+1."""

    logprobs: np.ndarray
    values: np.ndarray
    entropy: np.ndarray


class _Block(nn.Module):
    def __init__(self, d: int, h: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d, dtype=DTYPE)
        self.qkv = nn.Linear(d, 3 * d, dtype=DTYPE)
        self.proj = nn.Linear(d, d, dtype=DTYPE)
        self.ln2 = nn.LayerNorm(d, dtype=DTYPE)
        self.fc1 = nn.Linear(d, h, dtype=DTYPE)
        self.fc2 = nn.Linear(h, d, dtype=DTYPE)
        self.scale = 1.0 / math.sqrt(d)

    def forward(self, x, past=None):
        q, k, v = self.qkv(self.ln1(x)).chunk(3, dim=-1)
        if past is not None:
            k = torch.cat([past[0], k], dim=1)
            v = torch.cat([past[1], v], dim=1)
        t_q, t_k = q.shape[1], k.shape[1]
        att = (q @ k.transpose(1, 2)) * self.scale
        if t_q > 1:
            causal = torch.ones(t_q, t_k, dtype=torch.bool).tril(diagonal=t_k - t_q)
            att = att.masked_fill(~causal, float("-inf"))
        x = x + self.proj(torch.softmax(att, dim=-1) @ v)
        x = x + self.fc2(F.gelu(self.fc1(self.ln2(x))))
        return x, (k, v)


class TransformerPolicyNet(nn.Module):
    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        d = cfg.embed_dim
        self.tok_emb = nn.Embedding(cfg.vocab_size, d, dtype=DTYPE)
        self.pos_emb = nn.Embedding(cfg.context_len, d, dtype=DTYPE)
        self.blocks = nn.ModuleList(_Block(d, cfg.hidden_dim) for _ in range(cfg.num_layers))
        self.ln_f = nn.LayerNorm(d, dtype=DTYPE)
        self.lm_head = nn.Linear(d, cfg.vocab_size, dtype=DTYPE)
        self.value_head = nn.Linear(d, 1, dtype=DTYPE)

    def forward(self, ids, past=None, start: int = 0):
        """ids: (B, T) -> logits (B, T, V), values (B, T), new cache."""
        pos = torch.arange(start, start + ids.shape[1])
        x = self.tok_emb(ids) + self.pos_emb(pos)
        cache = []
        value_in = x
        for i, block in enumerate(self.blocks):
            if i == len(self.blocks) - 1:
                value_in = x
            x, kv = block(x, None if past is None else past[i])
            cache.append(kv)
        logits = self.lm_head(self.ln_f(x))
        values = torch.tanh(self.value_head(value_in).squeeze(-1))
        values = values.clamp(-VALUE_BOUND, VALUE_BOUND)
        return logits, values, cache


def _init_parameters(net: TransformerPolicyNet, cfg: PolicyConfig) -> None:
    gen = torch.Generator().manual_seed(cfg.seed)
    out_std = 0.02 / math.sqrt(2 * cfg.num_layers)
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif ".ln" in name or name.startswith("ln_"):
                p.fill_(1.0)
            elif name.endswith(("proj.weight", "fc2.weight")):
                p.copy_(torch.randn(p.shape, generator=gen, dtype=DTYPE) * out_std)
            else:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=DTYPE) * 0.02)


class Policy:
    """Trainable policy: network, AdamW state and an update version counter."""

    def __init__(self, cfg: PolicyConfig, lr: float = 2e-4, weight_decay: float = 0.01):
        self.config = cfg
        self.net = TransformerPolicyNet(cfg)
        _init_parameters(self.net, cfg)
        self.version = 0
        self.lr = lr
        self.weight_decay = weight_decay
        self._optimizer = None

    # -- inspection -------------------------------------------------------
    def named_parameters(self):
        return list(self.net.named_parameters())

    def parameters(self):
        return list(self.net.parameters())

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def snapshot(self) -> "Policy":
        """Frozen copy for exploration workers (no optimizer state)."""
        snap = Policy.__new__(Policy)
        snap.config = self.config
        snap.net = copy.deepcopy(self.net)
        snap.net.requires_grad_(False)
        snap.version = self.version
        snap.lr = self.lr
        snap.weight_decay = self.weight_decay
        snap._optimizer = None
        return snap

    # -- scoring ----------------------------------------------------------
    def _check_ids(self, tokens) -> torch.Tensor:
        ids = torch.as_tensor(np.asarray(tokens, dtype=np.int64))
        if ids.ndim != 1:
            raise PolicyError("expected a 1-D token sequence")
        if len(ids) > self.config.context_len:
            raise PolicyError(f"sequence of {len(ids)} tokens exceeds context {self.config.context_len}")
        if len(ids) and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise PolicyError("token id out of range")
        return ids

    def forward_batch(self, ids: torch.Tensor):
        """Differentiable batched forward; returns (logits, values) tensors."""
        if ids.shape[1] > self.config.context_len:
            raise PolicyError("batch exceeds context length")
        logits, values, _ = self.net(ids)
        return logits, values

    def forward(self, tokens) -> tuple[np.ndarray, np.ndarray]:
        ids = self._check_ids(tokens)
        if len(ids) == 0:
            raise PolicyError("forward needs at least one token")
        with torch.no_grad():
            logits, values, _ = self.net(ids[None])
        return logits[0].numpy(), values[0].numpy()

    def evaluate(self, tokens) -> EvalResult:
        """Score each transition: logprob[t] = log pi(tokens[t+1] | tokens[:t+1]).

        Results have one entry per predicted token (``len(tokens) - 1``);
        ``tokens[0]`` is context only (normally BOS).
        """
        ids = self._check_ids(tokens)
        if len(ids) < 2:
            raise PolicyError("evaluate needs at least two tokens")
        with torch.no_grad():
            logits, values, _ = self.net(ids[None])
            logp = torch.log_softmax(logits[0, :-1], dim=-1)
            chosen = logp.gather(1, ids[1:, None]).squeeze(1)
            entropy = -(logp.exp() * logp).sum(-1)
        return EvalResult(chosen.numpy().copy(), values[0, :-1].numpy().copy(),
                          entropy.clamp_min(0.0).numpy().copy())

    # -- sampling ---------------------------------------------------------
    def generate(self, prefix, stop_ids=(), max_new: int = 32, rng_seed: int = 0,
                 temperature: float = 1.0) -> tuple[list[int], list[float]]:
        """Sample up to ``max_new`` tokens after ``prefix`` (stop token included).

        Returned log-probabilities are those of the untempered policy, so they
        match :meth:`evaluate` on the extended sequence. ``temperature <= 0``
        means greedy decoding.
        """
        stop_ids = set(int(s) for s in stop_ids)
        if not stop_ids and max_new == 0:
            raise PolicyError("generate needs a stop set or a positive max_new")
        ids = self._check_ids(prefix)
        if len(ids) == 0:
            raise PolicyError("generate needs a non-empty prefix")
        max_new = min(max_new, self.config.context_len - len(ids))
        rng = np.random.default_rng(rng_seed)
        out: list[int] = []
        logprobs: list[float] = []
        with torch.no_grad():
            logits, _, cache = self.net(ids[None])
            last = logits[0, -1]
            pos = len(ids)
            for _ in range(max_new):
                logp = torch.log_softmax(last, dim=-1)
                if temperature <= 0:
                    tok = int(torch.argmax(logp))
                else:
                    scaled = torch.softmax(last / temperature, dim=-1).numpy()
                    cdf = np.cumsum(scaled)
                    tok = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
                    tok = min(tok, len(cdf) - 1)
                out.append(tok)
                logprobs.append(float(logp[tok]))
                if tok in stop_ids or pos >= self.config.context_len:
                    break
                step = torch.tensor([[tok]])
                logits, _, cache = self.net(step, past=cache, start=pos)
                last = logits[0, -1]
                pos += 1
        return out, logprobs

    # -- optimization -----------------------------------------------------
    def _get_optimizer(self):
        if self._optimizer is None:
            self._optimizer = torch.optim.AdamW(
                self.net.parameters(), lr=self.lr, betas=(0.9, 0.999), eps=1e-8,
                weight_decay=self.weight_decay,
            )
        return self._optimizer

    def optimize_step(self, grads=None, lr: float | None = None) -> None:
        """One AdamW step. ``grads`` is a list aligned with ``parameters()``,
        a name->tensor dict, or None to use the ``.grad`` already accumulated.
        """
        named = self.named_parameters()
        if grads is not None:
            if isinstance(grads, dict):
                grads = [grads[name] for name, _ in named]
            if len(grads) != len(named):
                raise PolicyError("gradient list does not match parameters")
            for (name, p), g in zip(named, grads):
                g = torch.as_tensor(g, dtype=DTYPE)
                if g.shape != p.shape:
                    raise PolicyError(f"gradient shape {tuple(g.shape)} != {tuple(p.shape)} for {name}")
                p.grad = g.clone()
        for name, p in named:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise PolicyError(f"non-finite gradient in parameter block {name!r}")
        opt = self._get_optimizer()
        if lr is not None:
            for group in opt.param_groups:
                group["lr"] = lr
        opt.step()
        opt.zero_grad(set_to_none=True)
        self.version += 1

    def zero_grad(self) -> None:
        self.net.zero_grad(set_to_none=True)

    # -- persistence ------------------------------------------------------
    def save(self, path) -> None:
        """Checkpoint: magic, version, JSON header (config, version counter),
        then each parameter block in ``named_parameters`` order as raw float64.
        """
        header = json.dumps({
            "config": asdict(self.config),
            "version": self.version,
            "blocks": [[n, list(p.shape)] for n, p in self.net.named_parameters()],
        }).encode()
        buf = io.BytesIO()
        buf.write(CKPT_MAGIC)
        buf.write(struct.pack("<HI", CKPT_VERSION, len(header)))
        buf.write(header)
        for _, p in self.net.named_parameters():
            buf.write(p.detach().numpy().astype("<f8").tobytes())
        _atomic_write(path, buf.getvalue())

    @classmethod
    def load(cls, path) -> "Policy":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != CKPT_MAGIC:
            raise PolicyError("not a policy checkpoint")
        version, hlen = struct.unpack_from("<HI", data, 4)
        if version != CKPT_VERSION:
            raise PolicyError(f"unsupported checkpoint version {version}")
        off = 10
        header = json.loads(data[off:off + hlen])
        off += hlen
        p = cls(PolicyConfig(**header["config"]))
        p.version = header["version"]
        with torch.no_grad():
            for (name, shape), (pname, param) in zip(header["blocks"], p.net.named_parameters()):
                if name != pname or list(param.shape) != shape:
                    raise PolicyError(f"checkpoint block {name} does not match model")
                count = param.numel()
                arr = np.frombuffer(data, dtype="<f8", count=count, offset=off)
                param.copy_(torch.from_numpy(arr.reshape(shape).copy()))
                off += 8 * count
        if off != len(data):
            raise PolicyError("checkpoint has trailing bytes")
        return p

    def state_equal(self, other: "Policy") -> bool:
        a, b = self.net.state_dict(), other.net.state_dict()
        return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


def _atomic_write(path, data: bytes) -> None:
    import os
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def init_policy(cfg: PolicyConfig, **kw) -> Policy:
    return Policy(cfg, **kw)
