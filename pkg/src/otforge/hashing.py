"""Toeplitz 2-universal hashing over GF(2).

A seed for a map ``{0,1}^m -> {0,1}^r`` is the ``m + r - 1`` bit diagonal of
an ``r x m`` Toeplitz matrix ``T`` with ``T[i, j] = diagonal[i - j + m - 1]``.
Bit strings are ``uint8`` arrays of zeros and ones; packed forms use
little-endian bit order within each byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def as_bits(x) -> np.ndarray:
    bits = np.asarray(x, dtype=np.uint8).ravel()
    if bits.size and bits.max() > 1:
        raise ValueError("bit strings may only contain 0 and 1")
    return bits


def pack_bits(bits) -> bytes:
    return np.packbits(as_bits(bits), bitorder="little").tobytes()


def unpack_bits(data: bytes, length: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    if bits.size < length:
        raise ValueError(f"need {length} bits, got {bits.size}")
    return bits[:length].copy()


def bits_to_int(bits) -> int:
    """Integer whose bit ``i`` is ``bits[i]``."""
    return int.from_bytes(pack_bits(bits), "little") if len(bits) else 0


@dataclass(frozen=True)
class HashSeed:
    m: int
    r: int
    diagonal: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"input length must be positive (got {self.m})")
        if not 0 <= self.r <= self.m:
            raise ValueError(f"output length must satisfy 0 <= r <= m (got r={self.r}, m={self.m})")
        diag = as_bits(self.diagonal).copy()
        want = self.m + self.r - 1 if self.r else 0
        if diag.size != want:
            raise ValueError(f"diagonal must have {want} bits, got {diag.size}")
        diag.setflags(write=False)
        object.__setattr__(self, "diagonal", diag)

    def matrix(self) -> np.ndarray:
        if self.r == 0:
            return np.zeros((0, self.m), dtype=np.uint8)
        rows = np.arange(self.r)[:, None]
        cols = np.arange(self.m)[None, :]
        return self.diagonal[rows - cols + self.m - 1]

    def columns(self) -> list[int]:
        """Matrix columns as integers (bit ``i`` = row ``i``)."""
        mat = self.matrix()
        return [bits_to_int(mat[:, j]) for j in range(self.m)]

    def to_dict(self) -> dict:
        return {"m": self.m, "r": self.r, "diagonal": pack_bits(self.diagonal).hex()}

    @classmethod
    def from_dict(cls, doc: dict) -> "HashSeed":
        m, r = int(doc["m"]), int(doc["r"])
        length = m + r - 1 if r else 0
        return cls(m, r, unpack_bits(bytes.fromhex(doc["diagonal"]), length))

    def __eq__(self, other):
        if not isinstance(other, HashSeed):
            return NotImplemented
        return self.m == other.m and self.r == other.r and np.array_equal(self.diagonal, other.diagonal)

    def __hash__(self):
        return hash((self.m, self.r, pack_bits(self.diagonal)))


def sample_seed(m: int, r: int, rng: np.random.Generator) -> HashSeed:
    if r > m:
        raise ValueError(f"output length r={r} exceeds input length m={m}")
    if r < 0:
        raise ValueError(f"output length must be non-negative (got {r})")
    length = m + r - 1 if r else 0
    return HashSeed(m, r, rng.integers(0, 2, size=length, dtype=np.uint8))


def hash_bits(seed: HashSeed, x) -> np.ndarray:
    """Toeplitz matrix-vector product over GF(2)."""
    x = as_bits(x)
    if x.size != seed.m:
        raise ValueError(f"input has {x.size} bits, seed expects {seed.m}")
    if seed.r == 0:
        return np.zeros(0, dtype=np.uint8)
    # Row i of T.x is the correlation of the diagonal with x at offset i.
    corr = np.convolve(seed.diagonal.astype(np.int64), x.astype(np.int64), mode="valid")
    return (corr & 1).astype(np.uint8)


# Public alias matching the operation name; ``hash`` would shadow the builtin.
toeplitz_hash = hash_bits
