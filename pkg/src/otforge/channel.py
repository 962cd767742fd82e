"""Discrete memoryless channels and the two-use erasure emulation.

Channels are row-stochastic matrices over explicitly labelled alphabets.
The erasure symbol is the ordinary output label ``"e"``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

ERASURE = "e"
ROW_TOL = 1e-12


class InputDomainError(ValueError):
    """An input symbol is not in the channel's input alphabet."""


class EmulationError(ValueError):
    """The sender's pair is not aligned (bits differ) before relabelling."""


@dataclass(frozen=True)
class ChannelSpec:
    """Finite channel W(y|x) with labelled alphabets.

    ``matrix[i, j]`` is the probability of ``outputs[j]`` given ``inputs[i]``.
    """

    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        inputs = tuple(str(s) for s in self.inputs)
        outputs = tuple(str(s) for s in self.outputs)
        matrix = np.array(self.matrix, dtype=float)
        if len(set(inputs)) != len(inputs) or len(set(outputs)) != len(outputs):
            raise ValueError("alphabet labels must be unique")
        if matrix.shape != (len(inputs), len(outputs)):
            raise ValueError(
                f"matrix shape {matrix.shape} does not match alphabets "
                f"({len(inputs)}, {len(outputs)})"
            )
        if np.any(matrix < 0) or np.any(matrix > 1):
            raise ValueError("matrix entries must lie in [0, 1]")
        if np.any(np.abs(matrix.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("every row must sum to 1")
        matrix.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        object.__setattr__(self, "matrix", matrix)

    @property
    def n_inputs(self) -> int:
        return len(self.inputs)

    @property
    def n_outputs(self) -> int:
        return len(self.outputs)

    def prob(self, y: str, x: str) -> float:
        return float(self.matrix[self.inputs.index(x), self.outputs.index(y)])

    def input_index(self, symbols) -> np.ndarray:
        return _to_index(symbols, self.inputs)

    def output_index(self, symbols) -> np.ndarray:
        return _to_index(symbols, self.outputs)

    def to_dict(self) -> dict:
        return {
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "matrix": self.matrix.tolist(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict) -> "ChannelSpec":
        return cls(tuple(doc["inputs"]), tuple(doc["outputs"]), np.array(doc["matrix"]))

    @classmethod
    def from_json(cls, text: str) -> "ChannelSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class BsecParams:
    """Binary symmetric erasure channel parameters.

    ``p`` is the erasure probability (``0 <= p <= 1/2``), ``q`` the
    crossover probability (``0 < q < 1``). ``p = 0`` is a plain BSC.
    """

    p: float
    q: float

    def __post_init__(self):
        if not 0 <= self.p <= 0.5:
            raise ValueError(f"p1 must be ≤ 0.5 and ≥ 0 (got {self.p})")
        if not 0 < self.q < 1:
            raise ValueError(f"q1 must lie strictly between 0 and 1 (got {self.q})")


@dataclass
class ChannelSample:
    """Inputs and outputs of ``n`` channel uses, as alphabet indices."""

    spec: ChannelSpec
    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        if len(self.inputs) != len(self.outputs):
            raise ValueError("inputs and outputs must have equal length")

    def input_labels(self) -> list[str]:
        return [self.spec.inputs[i] for i in self.inputs]

    def output_labels(self) -> list[str]:
        return [self.spec.outputs[j] for j in self.outputs]


def _to_index(symbols, alphabet: Sequence[str]) -> np.ndarray:
    arr = np.asarray(symbols)
    if arr.size == 0:
        return np.zeros(0, dtype=np.int64)
    if arr.dtype.kind in "iub":
        idx = arr.astype(np.int64)
        bad = (idx < 0) | (idx >= len(alphabet))
        if np.any(bad):
            raise InputDomainError(f"symbol index {idx[bad][0]} outside alphabet {list(alphabet)}")
        return idx
    lookup = {s: i for i, s in enumerate(alphabet)}
    try:
        return np.array([lookup[str(s)] for s in arr.ravel()], dtype=np.int64).reshape(arr.shape)
    except KeyError as exc:
        raise InputDomainError(f"symbol {exc.args[0]!r} not in alphabet {list(alphabet)}") from None


def make_bsec(params: BsecParams) -> ChannelSpec:
    p, q = params.p, params.q
    keep = 1.0 - p
    matrix = [
        [keep * (1 - q), keep * q, p],
        [keep * q, keep * (1 - q), p],
    ]
    return ChannelSpec(("0", "1"), ("0", "1", ERASURE), np.array(matrix))


def make_bsc(q: float) -> ChannelSpec:
    return ChannelSpec(("0", "1"), ("0", "1"), np.array([[1 - q, q], [q, 1 - q]]))


def example1_labels() -> tuple[tuple[str, ...], tuple[str, ...]]:
    inputs = tuple(f"{a}{b}" for a in "01" for b in "01")
    outputs = tuple(f"{a}{b}" for a in "01e" for b in "01e")
    return inputs, outputs


def make_example1() -> ChannelSpec:
    """Four-input channel with one-sided erasures and single-coordinate flips.

    For input ``(x1, x2)``: each of ``(x1, e)``, ``(e, x2)``, ``(x1, x2)`` has
    probability 1/4, each of ``(x1, 1-x2)``, ``(1-x1, x2)`` has 1/8.
    """
    inputs, outputs = example1_labels()
    matrix = np.zeros((4, 9))
    for i, x in enumerate(inputs):
        x1, x2 = x[0], x[1]
        f1, f2 = str(1 - int(x1)), str(1 - int(x2))
        row = {x1 + ERASURE: 0.25, ERASURE + x2: 0.25, x1 + x2: 0.25, x1 + f2: 0.125, f1 + x2: 0.125}
        for y, pr in row.items():
            matrix[i, outputs.index(y)] = pr
    return ChannelSpec(inputs, outputs, matrix)


def sample(spec: ChannelSpec, inputs, rng: np.random.Generator) -> ChannelSample:
    """Pass ``inputs`` through ``spec`` independently per position.

    ``inputs`` may be labels or integer indices into ``spec.inputs``.
    """
    idx = spec.input_index(inputs)
    cdf = np.cumsum(spec.matrix, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(idx.shape[0])
    out = (u[:, None] >= cdf[idx]).sum(axis=1)
    # Zero-probability trailing columns can never be selected because cdf[-1] == 1.
    return ChannelSample(spec, idx, out.astype(np.int64))


def emulate_bsec_pair(x_pair, y_pair):
    """Relabel one aligned pair of BSC uses as one emulated BSEC use.

    ``x_pair`` must hold two equal bits; returns ``(x, y)`` where ``y`` is the
    common received bit, or ``"e"`` if the received bits differ.
    """
    x1, x2 = (int(b) for b in x_pair)
    if x1 != x2:
        raise EmulationError(f"sender pair {x_pair!r} is not aligned")
    y1, y2 = y_pair
    if ERASURE in (str(y1), str(y2)):
        raise EmulationError("erased positions cannot be paired for emulation")
    y1, y2 = int(y1), int(y2)
    return x1, (y1 if y1 == y2 else ERASURE)


def emulate_pairs(x: np.ndarray, y: np.ndarray, parity: np.ndarray | None = None):
    """Vectorised pair relabelling used by the protocol engine.

    ``x`` and ``y`` have shape ``(k, 2)`` with bit entries (no erasures).
    If ``parity`` is given, the first element of each pair is flipped where
    the parity is 1 (on both sides) before relabelling. Returns the emulated
    inputs and outputs with erasure encoded as 2.
    """
    x = np.asarray(x, dtype=np.uint8).copy()
    y = np.asarray(y, dtype=np.uint8).copy()
    if parity is not None:
        parity = np.asarray(parity, dtype=np.uint8)
        x[:, 0] ^= parity
        y[:, 0] ^= parity
    if np.any(x[:, 0] != x[:, 1]):
        raise EmulationError("sender pairs are not aligned")
    y_out = np.where(y[:, 0] == y[:, 1], y[:, 0], 2).astype(np.uint8)
    return x[:, 0].copy(), y_out


def emulated_params(q):
    """Erasure and crossover probability of the emulated BSEC over a BSC(q).

    Works with floats or :class:`fractions.Fraction` (exact arithmetic).
    """
    if not 0 < q < 1:
        raise ValueError(f"q must lie strictly between 0 and 1 (got {q})")
    p_next = 2 * q * (1 - q)
    q_next = q * q / ((1 - q) * (1 - q) + q * q)
    return p_next, q_next


def as_fraction(x) -> Fraction:
    """Exact rational for a user-supplied decimal (``0.05`` -> ``1/20``)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))
