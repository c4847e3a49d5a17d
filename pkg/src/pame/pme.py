"""Partial message exchange: sparse messages, lambda-count averaging, bit costs.

A sender transmits ``s`` uniformly chosen coordinates of its parameter. A
selected coordinate whose value happens to be 0 is still listed explicitly and
is sent as a short mark instead of a double. The receiver averages each
coordinate over the senders that actually sent it and keeps its own value
where nobody did.

Bit accounting is a fixed convention, independent of the byte codec below:
``n`` bits for the presence map, 63 bits per selected nonzero value and 9 per
explicit-zero mark. A message with no zeros therefore costs ``63 s + n`` bits.

Wire layout (after a 12-byte header of sender, n, s as big-endian uint32)::

    ceil(n/8) bytes   membership bitmap, coordinate l at byte l//8, bit 7 - l%8
    per selected l    8-byte big-endian binary64 if the value is nonzero,
                      the single byte 0x7F if the value is zero

0x7F is the leading byte of doubles >= 2**1009, +inf and NaN, none of which a
message may carry, so the token stream decodes unambiguously.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from pame.errors import DimensionMismatch, DuplicateSender, InvalidSize

ZERO_MARK = 0x7F
VALUE_BITS = 63
ZERO_BITS = 9
DENSE_VALUE_BITS = 64
_HEADER = struct.Struct(">III")
_UNENCODABLE = 2.0 ** 1009

__all__ = [
    "AggregationResult",
    "SparseMessage",
    "SrsworMoments",
    "aggregate",
    "bit_cost",
    "dense_bit_cost",
    "make_sparse_message",
    "naive_average",
    "sample_coordinates",
    "srswor_moments",
]


def sample_coordinates(n: int, s: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of ``s`` distinct indices from ``range(n)``, sorted.

    Partial Fisher-Yates over a sparse swap table: only the first ``s``
    positions are shuffled. Position ``t`` swaps with ``t + floor(u (n - t))``
    for a uniform double ``u``, which is uniform up to a bias below n/2**53.
    """
    if not 1 <= s <= n:
        raise InvalidSize(f"need 1 <= s <= n, got s={s}, n={n}")
    if s == n:
        return np.arange(n)
    draws = rng.random(s).tolist()
    swapped: dict[int, int] = {}
    chosen = []
    for t, u in enumerate(draws):
        r = t + int(u * (n - t))
        chosen.append(swapped.get(r, r))
        swapped[r] = swapped.get(t, t)
    chosen.sort()
    return np.array(chosen, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class SparseMessage:
    sender: int
    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)
        if idx.ndim != 1 or vals.shape != idx.shape:
            raise DimensionMismatch("indices and values must be aligned 1-d arrays")
        if len(idx) == 0:
            raise InvalidSize("a message must carry at least one coordinate")
        if idx[0] < 0 or idx[-1] >= self.dim or (idx[1:] <= idx[:-1]).any():
            raise InvalidSize("indices must be strictly increasing within [0, n)")

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def zero_count(self) -> int:
        return int(np.count_nonzero(self.values == 0.0))

    def dense(self) -> np.ndarray:
        """The length-n vector with unselected coordinates set to 0."""
        v = np.zeros(self.dim)
        v[self.indices] = self.values
        return v

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseMessage):
            return NotImplemented
        return (
            self.sender == other.sender
            and self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "sender": self.sender,
                "dim": self.dim,
                "indices": self.indices.tolist(),
                "values": self.values.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str, dim: int | None = None) -> SparseMessage:
        doc = json.loads(text)
        n = doc.get("dim", dim)
        if n is None:
            raise DimensionMismatch("message dimension missing")
        return cls(sender=doc["sender"], indices=doc["indices"], values=doc["values"], dim=n)

    def encode(self) -> bytes:
        if not np.all(np.isfinite(self.values)) or np.any(np.abs(self.values) >= _UNENCODABLE):
            raise ValueError("message values must be finite and below 2**1009 in magnitude")
        bitmap = np.zeros(self.dim, dtype=bool)
        bitmap[self.indices] = True
        out = bytearray(_HEADER.pack(self.sender, self.dim, self.size))
        out += np.packbits(bitmap).tobytes()
        for v in self.values.tolist():
            out += bytes([ZERO_MARK]) if v == 0.0 else struct.pack(">d", v)
        return bytes(out)

    @classmethod
    def decode(cls, payload: bytes) -> SparseMessage:
        sender, n, s = _HEADER.unpack_from(payload, 0)
        pos = _HEADER.size
        nbytes = (n + 7) // 8
        bitmap = np.unpackbits(np.frombuffer(payload, dtype=np.uint8, count=nbytes, offset=pos))[:n]
        pos += nbytes
        indices = np.flatnonzero(bitmap)
        if len(indices) != s:
            raise InvalidSize(f"bitmap marks {len(indices)} coordinates, header says {s}")
        values = []
        for _ in range(s):
            if payload[pos] == ZERO_MARK:
                values.append(0.0)
                pos += 1
            else:
                values.append(struct.unpack_from(">d", payload, pos)[0])
                pos += 8
        if pos != len(payload):
            raise InvalidSize("trailing bytes after message payload")
        return cls(sender=sender, indices=indices, values=values, dim=n)


def make_sparse_message(
    w: np.ndarray,
    s: int,
    rng: np.random.Generator | None = None,
    sender: int = 0,
    indices: Sequence[int] | None = None,
) -> SparseMessage:
    """Select ``s`` coordinates of ``w`` and package them.

    ``indices`` forces the selection (used to replay a known draw); otherwise
    the coordinates are drawn from ``rng``.
    """
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[0]
    if not 1 <= s <= n:
        raise InvalidSize(f"need 1 <= s <= n, got s={s}, n={n}")
    if indices is None:
        if rng is None:
            raise ValueError("either rng or indices is required")
        idx = sample_coordinates(n, s, rng)
    else:
        idx = np.sort(np.asarray(indices, dtype=np.int64))
        if len(idx) != s:
            raise InvalidSize(f"forced selection has {len(idx)} indices, expected {s}")
    return SparseMessage(sender=sender, indices=idx, values=w[idx], dim=n)


def bit_cost(msg: SparseMessage) -> int:
    """Accounted bits: presence map + 63 per nonzero value + 9 per zero mark."""
    z = msg.zero_count
    return msg.dim + VALUE_BITS * (msg.size - z) + ZERO_BITS * z


def dense_bit_cost(n: int) -> int:
    """Bits for an uncompressed binary64 vector."""
    return DENSE_VALUE_BITS * n


@dataclass(frozen=True)
class AggregationResult:
    vbar: np.ndarray
    counts: np.ndarray
    fallback_mask: np.ndarray


def aggregate(own_w: np.ndarray, messages: Iterable[SparseMessage]) -> AggregationResult:
    """Average each coordinate over the senders that transmitted it.

    Numerators are accumulated in ascending sender order so that the result
    does not depend on message arrival order.
    """
    own_w = np.asarray(own_w, dtype=np.float64)
    n = own_w.shape[0]
    msgs = sorted(messages, key=lambda msg: msg.sender)
    senders = [msg.sender for msg in msgs]
    if len(set(senders)) != len(senders):
        raise DuplicateSender(f"duplicate senders in {senders}")
    total = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    for msg in msgs:
        if msg.dim != n:
            raise DimensionMismatch(f"message from {msg.sender} has dim {msg.dim}, expected {n}")
        total[msg.indices] += msg.values
        counts[msg.indices] += 1
    fallback = counts == 0
    vbar = np.where(fallback, own_w, total / np.maximum(counts, 1))
    return AggregationResult(vbar=vbar, counts=counts, fallback_mask=fallback)


def naive_average(messages: Sequence[SparseMessage], n: int) -> np.ndarray:
    """Mean of the zero-filled messages, dividing by the sender count."""
    total = np.zeros(n)
    for msg in sorted(messages, key=lambda msg: msg.sender):
        total[msg.indices] += msg.values
    return total / len(messages)


@dataclass(frozen=True)
class SrsworMoments:
    variance: object
    second_moment: object
    second_moment_bound: object
    bound_holds: bool


def srswor_moments(x: Sequence, r: int) -> SrsworMoments:
    """Moments of the mean of a size-``r`` simple random sample of ``x``.

    Uses plain Python arithmetic, so ``Fraction`` inputs give exact results.
    ``Var = (q-r) / (r q (q-1)) * sum((x_j - mean)^2)``, and the second moment
    is ``Var + mean^2``; the latter is checked against ``mean(x_j^2)``.
    """
    q = len(x)
    if q < 1 or not 1 <= r <= q:
        raise InvalidSize(f"need q >= 1 and 1 <= r <= q, got q={q}, r={r}")
    if all(isinstance(v, (int, Fraction)) for v in x):
        x = [Fraction(v) for v in x]
        factor = Fraction(q - r, r * q * (q - 1)) if q > 1 else Fraction(0)
    else:
        x = [float(v) for v in x]
        factor = (q - r) / (r * q * (q - 1)) if q > 1 else 0.0
    mean = sum(x) / q
    variance = factor * sum((v - mean) ** 2 for v in x)
    second = variance + mean * mean
    bound = sum(v * v for v in x) / q
    return SrsworMoments(
        variance=variance,
        second_moment=second,
        second_moment_bound=bound,
        bound_holds=bool(second <= bound),
    )
