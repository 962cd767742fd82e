"""Information reconciliation and privacy amplification.

Reconciliation sends a short check value computed from the sender's block;
the receiver recovers the block from the check and its noisy copy. Privacy
amplification hashes a block down to a key with a Toeplitz seed.

Two reconcilers share the same interface (``check``, ``decode``, ``public``):

* :class:`HashReconciler`: Toeplitz check value, exhaustive search over
  error patterns in order of increasing weight. Exact but exponential.
* :class:`PolarReconciler`: polar-transform syndrome plus a short Toeplitz
  tag, decoded by SC list decoding. Used when exhaustive search is too big.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import polar
from .hashing import HashSeed, as_bits, bits_to_int, hash_bits, sample_seed

SEARCH_BUDGET = 200_000
POLAR_LIST_SIZE = 64
POLAR_TAG_BITS = 8


def binary_entropy(q: float) -> float:
    if not 0 <= q <= 1:
        raise ValueError(f"probability out of range: {q}")
    if q == 0 or q == 1:
        return 0.0
    return -q * math.log2(q) - (1 - q) * math.log2(1 - q)


def check_length(m: int, q: float, delta: float) -> int:
    """``ceil(m (H(q) + delta))``, the reconciliation message length."""
    return math.ceil(m * (binary_entropy(float(q)) + float(delta)))


def key_length(m: int, delta, kappa: int) -> int:
    """``floor(m (1 - delta)) - kappa``; may be negative."""
    return math.floor(m * (1 - delta)) - kappa


def default_weight_cap(m: int, q: float) -> int:
    return math.ceil(2 * float(q) * m) + 2


@dataclass(frozen=True)
class IrParams:
    m: int
    q: float
    delta: float
    kappa: int
    w_max: int

    @classmethod
    def derive(cls, m: int, q: float, delta: float) -> "IrParams":
        return cls(m, q, delta, check_length(m, q, delta), default_weight_cap(m, q))


@dataclass(frozen=True)
class PaParams:
    m: int
    delta: float
    kappa: int
    l: int

    @classmethod
    def derive(cls, m: int, delta: float, kappa: int) -> "PaParams":
        l = key_length(m, delta, kappa)
        if l < 0:
            raise ValueError(f"key length {l} is negative for m={m}, kappa={kappa}")
        return cls(m, delta, kappa, l)


def encode_check(x, seed: HashSeed) -> np.ndarray:
    return hash_bits(seed, x)


def extract_key(x, seed: HashSeed) -> np.ndarray:
    return hash_bits(seed, x)


def search_cost(m: int, w_max: int) -> int:
    """Worst-case number of prefixes :func:`decode` enumerates."""
    return sum(math.comb(m, w) for w in range(0, max(w_max, 0)))


def decode(y, check, seed: HashSeed, w_max: int):
    """Smallest-weight correction of ``y`` consistent with ``check``.

    Error patterns are tried by increasing Hamming weight and, within a
    weight, in lexicographic order of their support. Returns the corrected
    word, or ``None`` if no pattern of weight ``<= w_max`` matches.
    """
    y = as_bits(y)
    check = as_bits(check)
    if y.size != seed.m:
        raise ValueError(f"received word has {y.size} bits, seed expects {seed.m}")
    if check.size != seed.r:
        raise ValueError(f"check has {check.size} bits, seed expects {seed.r}")
    if w_max < 0:
        raise ValueError("weight cap must be non-negative")
    support = _first_matching_pattern(seed, bits_to_int(hash_bits(seed, y) ^ check), w_max)
    if support is None:
        return None
    x_hat = y.copy()
    x_hat[list(support)] ^= 1
    return x_hat


def _first_matching_pattern(seed: HashSeed, target: int, w_max: int):
    if target == 0:
        return ()
    cols = seed.columns()
    m = seed.m
    # column value -> sorted positions, so the last support element is a lookup
    where: dict[int, list[int]] = {}
    for j, c in enumerate(cols):
        where.setdefault(c, []).append(j)
    for w in range(1, min(w_max, m) + 1):
        for prefix in combinations(range(m), w - 1):
            acc = target
            for j in prefix:
                acc ^= cols[j]
            hits = where.get(acc)
            if not hits:
                continue
            start = prefix[-1] + 1 if prefix else 0
            k = bisect.bisect_left(hits, start)
            if k < len(hits):
                return prefix + (hits[k],)
    return None


class HashReconciler:
    method = "hash"

    def __init__(self, seed: HashSeed, w_max: int):
        self.seed = seed
        self.w_max = w_max

    @property
    def kappa(self) -> int:
        return self.seed.r

    def check(self, x) -> np.ndarray:
        return encode_check(x, self.seed)

    def decode(self, y, check):
        return decode(y, check, self.seed, self.w_max)

    def public(self) -> dict:
        return {"method": self.method, "seed": self.seed.to_dict(), "w_max": self.w_max}


class PolarReconciler:
    method = "polar"

    def __init__(self, m: int, q: float, kappa: int, tag_seed: HashSeed | None,
                 w_max: int, list_size: int = POLAR_LIST_SIZE):
        tag_len = tag_seed.r if tag_seed is not None else 0
        if tag_len > kappa:
            raise ValueError("tag longer than the check value")
        self.m = m
        self.q = float(q)
        self.kappa = kappa
        self.tag_seed = tag_seed
        self.w_max = w_max
        self.list_size = list_size
        self.frozen = polar.frozen_positions(m, min(self.q, 1 - self.q), kappa - tag_len)
        self._n = polar.block_length(m)
        self._mask = np.zeros(self._n, dtype=bool)
        self._mask[self.frozen] = True

    def _tag(self, x) -> np.ndarray:
        if self.tag_seed is None:
            return np.zeros(0, dtype=np.uint8)
        return hash_bits(self.tag_seed, x)

    def check(self, x) -> np.ndarray:
        x = as_bits(x)
        if x.size != self.m:
            raise ValueError(f"block has {x.size} bits, expected {self.m}")
        return np.concatenate([polar.syndrome(x, self.frozen), self._tag(x)]).astype(np.uint8)

    def decode(self, y, check):
        y = as_bits(y)
        check = as_bits(check)
        if y.size != self.m or check.size != self.kappa:
            raise ValueError("length mismatch in polar decode")
        n_frozen = self.frozen.size
        strength = math.log((1 - self.q) / self.q)
        llr = np.full(self._n, polar.KNOWN_LLR)
        llr[: self.m] = strength * (1.0 - 2.0 * y)
        words, _ = polar.scl_decode(llr, self._mask, check[:n_frozen], self.list_size)
        tag = check[n_frozen:]
        for word in words:
            if word[self.m :].any():
                continue
            x_hat = word[: self.m]
            if int((x_hat ^ y).sum()) > self.w_max:
                continue
            if np.array_equal(self._tag(x_hat), tag):
                return x_hat.copy()
        return None

    def public(self) -> dict:
        return {
            "method": self.method,
            "q": self.q,
            "list_size": self.list_size,
            "frozen": len(self.frozen),
            "tag_seed": None if self.tag_seed is None else self.tag_seed.to_dict(),
            "w_max": self.w_max,
        }


def choose_method(m: int, w_max: int) -> str:
    return "hash" if search_cost(m, w_max) <= SEARCH_BUDGET else "polar"


def make_reconciler(m: int, q: float, kappa: int, rng: np.random.Generator,
                    method: str = "auto", w_max: int | None = None,
                    list_size: int = POLAR_LIST_SIZE):
    """Sample a reconciler for an ``m``-bit block with a ``kappa``-bit check."""
    if kappa > m:
        raise ValueError(f"check length {kappa} exceeds block length {m}")
    if w_max is None:
        w_max = default_weight_cap(m, q)
    if method == "auto":
        method = choose_method(m, w_max)
    if method == "hash":
        return HashReconciler(sample_seed(m, kappa, rng), w_max)
    if method == "polar":
        tag_len = min(POLAR_TAG_BITS, kappa // 4)
        tag_seed = sample_seed(m, tag_len, rng) if tag_len else None
        return PolarReconciler(m, q, kappa, tag_seed, w_max, list_size)
    raise ValueError(f"unknown reconciliation method {method!r}")


def reconciliation_success_ceiling(m: int, q: float, kappa: int) -> float:
    """Largest success probability any decoder can reach with a ``kappa``-bit check.

    With the block uniform and a BSC(q) observation, a ``kappa``-bit message
    lets the receiver resolve at most ``2**kappa`` error patterns; the best
    case keeps the most likely ones, i.e. the lowest weights.
    """
    budget = 2 ** kappa
    total = 0.0
    for w in range(m + 1):
        take = min(math.comb(m, w), budget)
        total += math.exp(math.log(take) + w * math.log(q) + (m - w) * math.log1p(-q))
        budget -= take
        if budget == 0:
            break
    return min(total, 1.0)
