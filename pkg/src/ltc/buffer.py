"""Sessions, sealed trajectory buffers, the binary buffer format and the replay store.

A session is the raw communication record: ordered text messages, each with a
source label and a reward in {-1, 0, +1}. Sealing tokenizes the session and
attaches the collecting policy's per-token values and log-probabilities,
yielding five aligned arrays.

Buffer file layout (little-endian)::

    magic   4 bytes  b"LTCB"
    version u16      = 1
    n       u32      token count
    tokens  u32 length prefix, then n x u32
    masks   u32 length prefix, then n x u8
    values  u32 length prefix, then n x f64
    logprob u32 length prefix, then n x f64
    rewards u32 length prefix, then n x i8
    crc32   u32      over every preceding byte
"""
from __future__ import annotations

import hashlib
import struct
import threading
import zlib
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

MAGIC = b"LTCB"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHI")
_LEN = struct.Struct("<I")
_CRC = struct.Struct("<I")
_ARRAYS = (
    ("tokens", np.dtype("<u4")),
    ("masks", np.dtype("u1")),
    ("values", np.dtype("<f8")),
    ("logprobs", np.dtype("<f8")),
    ("rewards", np.dtype("i1")),
)


class Source(IntEnum):
    SYSTEM = 0
    AGENT = 1
    TEACHER = 2


class SessionError(ValueError):
    pass


class BufferFormatError(ValueError):
    """Base class for buffer decoding failures; ``code`` identifies the failure kind."""

    code = "format"


class BadMagicError(BufferFormatError):
    code = "bad_magic"


class VersionError(BufferFormatError):
    code = "bad_version"


class TruncatedError(BufferFormatError):
    code = "truncated"


class LengthMismatchError(BufferFormatError):
    code = "length_mismatch"


class ChecksumError(BufferFormatError):
    code = "checksum"


class ValidationError(BufferFormatError):
    """A buffer violates one of the trajectory invariants."""

    code = "invalid"


@dataclass(frozen=True)
class Message:
    text: str
    source: Source
    reward: int = 0
    #: role prompt rendered before the message as system text (not a message of its own)
    prompt: str = ""


class Session:
    """Ordered record of a communication episode."""

    def __init__(self, task_text: str):
        if not task_text or not task_text.strip():
            raise SessionError("task text must be non-empty")
        self.messages: list[Message] = [Message(task_text, Source.SYSTEM, 0)]
        self.sealed = False

    def __len__(self):
        return len(self.messages)

    def append(self, text: str, source: Source, reward: int = 0, prompt: str = "") -> None:
        if self.sealed:
            raise SessionError("cannot append to a sealed session")
        if reward not in (-1, 0, 1):
            raise SessionError(f"reward must be in {{-1, 0, +1}}, got {reward!r}")
        self.messages.append(Message(text, Source(source), int(reward), prompt))

    @property
    def terminal_reward(self) -> int:
        for m in reversed(self.messages):
            if m.reward:
                return m.reward
        return 0

    def sources(self) -> list[Source]:
        return [m.source for m in self.messages]

    def to_text(self) -> str:
        lines = []
        for m in self.messages:
            prefix = f"{m.prompt} " if m.prompt else ""
            tail = f"  [reward {m.reward:+d}]" if m.reward else ""
            lines.append(f"[{m.source.name.lower()}] {prefix}{m.text}{tail}")
        return "\n".join(lines)


def new_session(task_text: str) -> Session:
    return Session(task_text)


def append(s: Session, text: str, source: Source, reward: int = 0, prompt: str = "") -> None:
    s.append(text, source, reward, prompt)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TrajectoryBuffer:
    """Five aligned per-token arrays; immutable once constructed."""

    tokens: np.ndarray
    masks: np.ndarray
    values: np.ndarray
    logprobs: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        for name, dtype in _ARRAYS:
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=dtype)))
        validate(self)

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other):
        if not isinstance(other, TrajectoryBuffer):
            return NotImplemented
        return all(
            getattr(self, name).tobytes() == getattr(other, name).tobytes()
            for name, _ in _ARRAYS
        )

    __hash__ = None

    @property
    def terminal_reward(self) -> int:
        nz = np.flatnonzero(self.rewards)
        return int(self.rewards[nz[-1]]) if len(nz) else 0

    def to_bytes(self) -> bytes:
        return serialize(self)


def validate(b: TrajectoryBuffer) -> None:
    n = len(b.tokens)
    lengths = {name: len(getattr(b, name)) for name, _ in _ARRAYS}
    if len(set(lengths.values())) != 1:
        raise LengthMismatchError(f"array lengths differ: {lengths}")
    if n == 0:
        raise ValidationError("buffer is empty")
    if not np.isin(b.masks, (0, 1, 2)).all():
        raise ValidationError(f"mask values outside {{0,1,2}}: {sorted(set(b.masks.tolist()))}")
    if not np.isin(b.rewards, (-1, 0, 1)).all():
        raise ValidationError("reward values outside {-1,0,+1}")
    if not (np.all(np.abs(b.values) < 1.0)):
        raise ValidationError("values must lie strictly inside (-1, 1)")
    if not (np.all(b.logprobs <= 0.0) and np.all(np.isfinite(b.logprobs))):
        raise ValidationError("log-probabilities must be finite and <= 0")


def message_token_spans(session: Session, vocab) -> tuple[list[int], list[int], list[int]]:
    """Token ids, per-token masks and sparse rewards for a session (no policy needed)."""
    tokens: list[int] = []
    masks: list[int] = []
    rewards: list[int] = []
    for i, m in enumerate(session.messages):
        body = vocab.encode(m.text)
        if not body:
            raise SessionError(f"message {i} encodes to zero tokens")
        if m.prompt:
            head = vocab.encode(m.prompt)
            tokens += head
            masks += [int(Source.SYSTEM)] * len(head)
            rewards += [0] * len(head)
        tokens += body
        masks += [int(m.source)] * len(body)
        rewards += [0] * (len(body) - 1) + [m.reward]
    return tokens, masks, rewards


def seal(s: Session, vocab, policy) -> TrajectoryBuffer:
    """Tokenize a finished session and score every token with ``policy``.

    values[i] and logprobs[i] are the policy's evaluation of token i given the
    tokens before it (with an implicit leading BOS), for every source, so the
    PPO ratio is defined for teacher tokens as well.
    """
    if len(s.messages) < 2:
        raise SessionError("a session needs at least two messages to be sealed")
    tokens, masks, rewards = message_token_spans(s, vocab)
    ev = policy.evaluate([vocab.bos_id] + tokens)
    buf = TrajectoryBuffer(
        tokens=tokens,
        masks=masks,
        values=ev.values,
        logprobs=np.minimum(ev.logprobs, 0.0),
        rewards=rewards,
    )
    s.sealed = True
    return buf


def serialize(b: TrajectoryBuffer) -> bytes:
    n = len(b)
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, n)]
    for name, dtype in _ARRAYS:
        arr = getattr(b, name)
        parts.append(_LEN.pack(len(arr)))
        parts.append(arr.astype(dtype, copy=False).tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


def deserialize(data: bytes) -> TrajectoryBuffer:
    data = bytes(data)
    if len(data) < len(MAGIC) or data[:4] != MAGIC:
        raise BadMagicError("not a trajectory buffer (bad magic)")
    if len(data) < _HEADER.size:
        raise TruncatedError("truncated header")
    _, version, n = _HEADER.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported buffer format version {version}")
    offset = _HEADER.size
    arrays = {}
    for name, dtype in _ARRAYS:
        if offset + _LEN.size > len(data):
            raise TruncatedError(f"truncated before {name} length")
        (length,) = _LEN.unpack_from(data, offset)
        offset += _LEN.size
        if length != n:
            raise LengthMismatchError(f"{name} has length {length}, header says {n}")
        nbytes = length * dtype.itemsize
        if offset + nbytes > len(data):
            raise TruncatedError(f"truncated inside {name}")
        arrays[name] = np.frombuffer(data, dtype=dtype, count=length, offset=offset)
        offset += nbytes
    if offset + _CRC.size > len(data):
        raise TruncatedError("truncated before checksum")
    if offset + _CRC.size != len(data):
        raise LengthMismatchError(f"{len(data) - offset - _CRC.size} trailing bytes")
    (crc,) = _CRC.unpack_from(data, offset)
    if crc != zlib.crc32(data[:offset]):
        raise ChecksumError("checksum mismatch")
    return TrajectoryBuffer(**arrays)


def save_buffer(b: TrajectoryBuffer, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(b))


def load_buffer(path) -> TrajectoryBuffer:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


@dataclass
class ReplayStore:
    """Iteration-indexed groups of sealed buffers with recency-window sampling."""

    window: int = 2
    iterations: list[tuple[int, tuple[TrajectoryBuffer, ...]]] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("recency window must be at least one iteration")

    def __len__(self) -> int:
        return sum(len(bs) for _, bs in self.iterations)

    def insert(self, iteration: int, buffers) -> None:
        with self._lock:
            if self.iterations and iteration <= self.iterations[-1][0]:
                raise ValueError(
                    f"iteration {iteration} is not after last stored iteration "
                    f"{self.iterations[-1][0]}"
                )
            self.iterations.append((int(iteration), tuple(buffers)))

    def recent(self, k: int | None = None) -> list[TrajectoryBuffer]:
        k = self.window if k is None else k
        return [b for _, bs in self.iterations[-k:] for b in bs]

    def sample(self, n: int, rng_seed: int, k: int | None = None) -> list[TrajectoryBuffer]:
        if not self.iterations:
            raise ValueError("cannot sample from an empty replay store")
        pool = self.recent(k)
        rng = np.random.default_rng(rng_seed)
        idx = rng.choice(len(pool), size=min(n, len(pool)), replace=False)
        return [pool[i] for i in idx]

    def digest(self) -> str:
        h = hashlib.sha256()
        for it, bs in self.iterations:
            h.update(struct.pack("<qI", it, len(bs)))
            for b in bs:
                h.update(serialize(b))
        return h.hexdigest()


def replay_insert(r: ReplayStore, iteration: int, bs) -> None:
    r.insert(iteration, bs)


def replay_sample(r: ReplayStore, n: int, rng_seed: int) -> list[TrajectoryBuffer]:
    return r.sample(n, rng_seed)
