"""Two-party OT protocol runtime over simulated noisy channels.

Implements the one-round BSEC protocol, its multi-round recursive extension
(pairs of discarded positions are turned into fresh emulated BSEC uses after
a parity reveal) and the two-phase protocol for the four-input example
channel. Both parties live in-process; every noiseless message is recorded
in a :class:`Transcript` with explicit round/tag framing.

Randomness is drawn from per-role streams derived from ``(master_seed,
trial, role)`` via :class:`numpy.random.SeedSequence`, so a run is a pure
function of its configuration.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from . import channel as ch
from .hashing import HashSeed, as_bits, pack_bits, sample_seed, unpack_bits
from .ir_pa import (POLAR_LIST_SIZE, check_length, extract_key,
                    key_length, make_reconciler)

ROLES = {"sender": 0, "receiver": 1, "hashing": 2, "channel": 3}
SENDER_TO_RECEIVER = "S->R"
RECEIVER_TO_SENDER = "R->S"
ERASED = 2  # erasure code for binary channel outputs


# ---------------------------------------------------------------------------
# random streams

def derive_rng(master_seed: int, trial: int, role: str) -> np.random.Generator:
    """Stream for one role of one trial: ``SeedSequence(master_seed, spawn_key=(trial, role_id))``."""
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(int(trial), ROLES[role])))


@dataclass
class Streams:
    sender: np.random.Generator
    receiver: np.random.Generator
    hashing: np.random.Generator
    channel: np.random.Generator

    @classmethod
    def derive(cls, master_seed: int, trial: int = 0) -> "Streams":
        return cls(*(derive_rng(master_seed, trial, role) for role in ROLES))


# ---------------------------------------------------------------------------
# parameters and round schedule

@dataclass(frozen=True)
class RoundPlan:
    t: int
    p: Fraction
    q: Fraction
    n_prev: int
    n_t: int
    m_t: int
    kappa: int
    l: int

    @property
    def productive(self) -> bool:
        return self.m_t > 0 and self.l > 0


def round_schedule(n: int, T: int, delta, p1, q1) -> list[RoundPlan]:
    """Per-round sizes with the ceilings and floors applied to exact rationals.

    ``n_t = ceil(n_{t-1}(1 - 2p_t - delta)/2)``, ``m_t = ceil(n_{t-1}(p_t - delta))``,
    ``kappa_t = ceil(m_t(H(q_t) + delta))``, ``l_t = floor(m_t(1 - delta)) - kappa_t``.
    Negative sizes are clamped to zero.
    """
    delta = ch.as_fraction(delta)
    p, q = ch.as_fraction(p1), ch.as_fraction(q1)
    plans = []
    n_prev = n
    for t in range(1, T + 1):
        n_t = max(0, math.ceil(n_prev * (1 - 2 * p - delta) / 2))
        m_t = max(0, math.ceil(n_prev * (p - delta)))
        kappa = check_length(m_t, float(q), float(delta)) if m_t else 0
        l = key_length(m_t, delta, kappa) if m_t else 0
        plans.append(RoundPlan(t, p, q, n_prev, n_t, m_t, kappa, l))
        n_prev = n_t
        p, q = ch.emulated_params(q)
    return plans


@dataclass(frozen=True)
class ProtocolParams:
    """Configuration of one protocol run.

    ``channel`` is a :class:`~otforge.channel.BsecParams` or the string
    ``"example1"``. ``reconciliation`` is ``"auto"``, ``"hash"`` or ``"polar"``.
    """

    n: int
    T: int = 1
    delta: float = 0.05
    channel: object = None
    reconciliation: str = "auto"
    list_size: int = POLAR_LIST_SIZE

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be positive (got {self.n})")
        if self.T < 1:
            raise ValueError(f"T must be at least 1 (got {self.T})")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie strictly between 0 and 1 (got {self.delta})")
        if self.channel is None or not (isinstance(self.channel, ch.BsecParams) or self.channel == "example1"):
            raise ValueError("channel must be BsecParams or 'example1'")
        if self.reconciliation not in ("auto", "hash", "polar"):
            raise ValueError(f"unknown reconciliation {self.reconciliation!r}")

    def schedule(self) -> list[RoundPlan]:
        if not isinstance(self.channel, ch.BsecParams):
            raise ValueError("the round schedule is defined for BSEC channels only")
        return round_schedule(self.n, self.T, self.delta, self.channel.p, self.channel.q)


def example1_sizes(n: int, delta) -> dict:
    """Index-pool sizes for the example-channel protocol.

    Each one-sided-erasure pool keeps ``floor(n(1/4 - delta))`` indices, the
    doubly-received pool ``floor(n(1/2 - delta))``, and each phase-2 set
    ``floor(n(1/4 - delta))``.
    """
    d = ch.as_fraction(delta)
    quarter = max(0, math.floor(n * (Fraction(1, 4) - d)))
    half = max(0, math.floor(n * (Fraction(1, 2) - d)))
    return {"erasure_pool": quarter, "pair_pool": half, "phase2": quarter,
            "l1": 2 * quarter, "l2": quarter}


# ---------------------------------------------------------------------------
# transcript

_KIND_BITS, _KIND_INDEX, _KIND_JSON = b"b", b"i", b"j"


@dataclass
class Message:
    round: int
    direction: str
    tag: str
    fields: dict

    def payload(self) -> bytes:
        """Framed binary payload: per field name, kind, length, data."""
        out = bytearray()
        for name, value in self.fields.items():
            key = name.encode()
            out += struct.pack("<B", len(key)) + key
            if isinstance(value, np.ndarray) and value.dtype == np.uint8:
                out += _KIND_BITS + struct.pack("<I", value.size) + pack_bits(value)
            elif isinstance(value, np.ndarray):
                out += _KIND_INDEX + struct.pack("<I", value.size) + value.astype("<u4").tobytes()
            else:
                blob = json.dumps(value, sort_keys=True, separators=(",", ":")).encode()
                out += _KIND_JSON + struct.pack("<I", len(blob)) + blob
        return bytes(out)

    @staticmethod
    def parse_payload(data: bytes) -> dict:
        fields, pos = {}, 0
        while pos < len(data):
            klen = data[pos]
            name = data[pos + 1 : pos + 1 + klen].decode()
            pos += 1 + klen
            kind = data[pos : pos + 1]
            (count,) = struct.unpack_from("<I", data, pos + 1)
            pos += 5
            if kind == _KIND_BITS:
                nbytes = (count + 7) // 8
                fields[name] = unpack_bits(data[pos : pos + nbytes], count)
                pos += nbytes
            elif kind == _KIND_INDEX:
                fields[name] = np.frombuffer(data[pos : pos + 4 * count], dtype="<u4").astype(np.int64)
                pos += 4 * count
            elif kind == _KIND_JSON:
                fields[name] = json.loads(data[pos : pos + count])
                pos += count
            else:
                raise ValueError(f"unknown field kind {kind!r}")
        return fields

    def to_record(self) -> dict:
        return {"round": self.round, "direction": self.direction, "tag": self.tag,
                "payload": self.payload().hex()}

    @classmethod
    def from_record(cls, rec: dict) -> "Message":
        return cls(rec["round"], rec["direction"], rec["tag"], cls.parse_payload(bytes.fromhex(rec["payload"])))


@dataclass
class ChannelUses:
    round: int
    inputs: np.ndarray
    outputs: np.ndarray


@dataclass
class Transcript:
    channel_uses: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    choice: int | None = None

    def send(self, round_: int, direction: str, tag: str, **fields) -> Message:
        msg = Message(round_, direction, tag, fields)
        self.messages.append(msg)
        return msg

    def sender_view(self) -> dict:
        return {"inputs": [u.inputs for u in self.channel_uses], "messages": list(self.messages)}

    def receiver_view(self) -> dict:
        return {"outputs": [u.outputs for u in self.channel_uses], "messages": list(self.messages),
                "choice": self.choice}

    def to_dict(self) -> dict:
        return {
            "channel_uses": [
                {"round": u.round, "inputs": u.inputs.astype(np.uint8).tobytes().hex(),
                 "outputs": u.outputs.astype(np.uint8).tobytes().hex()}
                for u in self.channel_uses
            ],
            "messages": [m.to_record() for m in self.messages],
            "choice": self.choice,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "Transcript":
        uses = [ChannelUses(u["round"], np.frombuffer(bytes.fromhex(u["inputs"]), np.uint8).copy(),
                            np.frombuffer(bytes.fromhex(u["outputs"]), np.uint8).copy())
                for u in doc["channel_uses"]]
        return cls(uses, [Message.from_record(r) for r in doc["messages"]], doc["choice"])


# ---------------------------------------------------------------------------
# outcome

@dataclass
class OtOutcome:
    n: int
    choice: int
    key_lengths: list
    keys_sender: list
    keys_receiver: list
    aborted: bool = False
    abort_reason: str | None = None
    decode_failures: list = field(default_factory=list)

    @property
    def total_key_bits(self) -> int:
        return int(sum(self.key_lengths))

    @property
    def rate(self) -> float:
        return self.total_key_bits / self.n

    def round_rates(self) -> list[float]:
        return [l / self.n for l in self.key_lengths]

    @property
    def key_errors(self) -> int:
        if self.aborted:
            return 0
        bad = 0
        for (k0, k1), k_hat in zip(self.keys_sender, self.keys_receiver):
            want = k1 if self.choice else k0
            if k_hat is None or not np.array_equal(k_hat, want):
                bad += 1
        return bad

    @property
    def correct(self) -> bool:
        return not self.aborted and self.key_errors == 0


@dataclass(frozen=True)
class Abort:
    reason: str


@dataclass(frozen=True)
class IndexSets:
    I0: np.ndarray
    I1: np.ndarray
    I2: np.ndarray

    def __post_init__(self):
        if len(self.I0) != len(self.I1):
            raise ValueError("I0 and I1 must have equal size")
        if len(self.I2) % 2:
            raise ValueError("I2 must have even size")
        joined = np.concatenate([self.I0, self.I1, self.I2])
        if np.unique(joined).size != joined.size:
            raise ValueError("index sets must be disjoint")

    def chosen(self, b: int) -> np.ndarray:
        return self.I1 if b else self.I0


# ---------------------------------------------------------------------------
# protocol steps

def discard_sample(y, p: float, rng: np.random.Generator) -> int:
    """Receiver's label for one position: 1 erased, 0 kept, 2 discarded."""
    return int(discard_samples(np.array([_output_code(y)], dtype=np.uint8), p, rng)[0])


def _output_code(y) -> int:
    if y == ch.ERASURE or y == ERASED:
        return ERASED
    return int(y)


def discard_samples(y: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Vectorised discard rule; one uniform draw per position, erased or not."""
    p = float(p)
    if not 0 <= p <= 0.5:
        raise ValueError(f"erasure probability must be in [0, 1/2] (got {p})")
    keep_prob = p / (1 - p)
    u = rng.random(len(y))
    return np.where(y == ERASED, 1, np.where(u < keep_prob, 0, 2)).astype(np.uint8)


def build_index_sets(v, b: int, m: int, n_t: int, round_index: int = 1):
    """Index sets from receiver labels ``v``; :class:`Abort` if a pool is short.

    ``I_b`` takes the first ``m`` positions labelled 0, ``I_{1-b}`` the first
    ``m`` labelled 1 and ``I2`` the first ``2 n_t`` labelled 2.
    """
    v = np.asarray(v)
    pools = [np.flatnonzero(v == k) for k in range(3)]
    if len(pools[0]) < m or len(pools[1]) < m or len(pools[2]) < 2 * n_t:
        return Abort(f"insufficient indices, round {round_index}")
    chosen, other = pools[0][:m], pools[1][:m]
    i0, i1 = (other, chosen) if b else (chosen, other)
    return IndexSets(i0, i1, pools[2][: 2 * n_t])


def _index_message(transcript, t, sets: IndexSets, b: int, mutate: str | None):
    fields = {"I0": sets.I0, "I1": sets.I1}
    if mutate == "leak-order":
        # broken variant: the receiver's own set is serialised first
        fields = {f"I{b}": sets.chosen(b), f"I{1 - b}": sets.chosen(1 - b)}
    fields["I2"] = sets.I2
    transcript.send(t, RECEIVER_TO_SENDER, "index_sets", **fields)


def sender_transfer(x: np.ndarray, sets: IndexSets, f_seed: HashSeed, reconciler, k0, k1,
                    mutate: str | None = None) -> dict:
    """Sender's encrypted keys and check values for one round."""
    s = [extract_key(x[sets.I0], f_seed), extract_key(x[sets.I1], f_seed)]
    fields = {
        "ct0": as_bits(k0) ^ s[0],
        "ct1": as_bits(k1) ^ s[1],
        "c0": reconciler.check(x[sets.I0]),
        "c1": reconciler.check(x[sets.I1]),
        "F": f_seed.to_dict(),
        "G": reconciler.public(),
    }
    if mutate == "leak-bit":
        fields["aux"] = np.array([s[0][0], s[1][0]], dtype=np.uint8)
    return fields


def receiver_recover(y: np.ndarray, sets: IndexSets, b: int, fields: dict, f_seed: HashSeed, reconciler):
    """Receiver's key estimate for one round, or ``None`` on decode failure."""
    x_hat = reconciler.decode(y[sets.chosen(b)], fields[f"c{b}"])
    if x_hat is None:
        return None
    return fields[f"ct{b}"] ^ extract_key(x_hat, f_seed)


def draw_keys(lengths, rng: np.random.Generator) -> list:
    return [(rng.integers(0, 2, l, dtype=np.uint8), rng.integers(0, 2, l, dtype=np.uint8)) for l in lengths]


def _bsec_round_one(params: ProtocolParams, streams: Streams, transcript: Transcript):
    spec = ch.make_bsec(params.channel)
    x = streams.sender.integers(0, 2, params.n, dtype=np.uint8)
    out = ch.sample(spec, x, streams.channel).outputs.astype(np.uint8)
    transcript.channel_uses.append(ChannelUses(1, x, out))
    return x, out  # output codes: 0, 1, 2 (= erasure)


def run_protocol2(params: ProtocolParams, b: int, keys, streams: Streams, mutate: str | None = None):
    """Run the ``T``-round recursive protocol.

    ``keys`` holds one ``(K0, K1)`` pair per round with lengths matching the
    schedule (empty for unproductive rounds). Returns ``(OtOutcome, Transcript)``.
    """
    if params.T > 1 and params.n % 2:
        raise ValueError("n must be even for the multi-round protocol")
    plans = params.schedule()
    lengths = [plan.l if plan.productive else 0 for plan in plans]
    if len(keys) != len(plans) or any(len(k0) != l or len(k1) != l for (k0, k1), l in zip(keys, lengths)):
        raise ValueError(f"keys must match per-round lengths {lengths}")
    b = int(b)
    transcript = Transcript(choice=b)
    outcome = OtOutcome(params.n, b, lengths, [tuple(k) for k in keys], [None] * len(plans))
    x, y = _bsec_round_one(params, streams, transcript)

    for plan in plans:
        t = plan.t
        last = t == params.T
        m = plan.m_t if plan.productive else 0
        v = discard_samples(y, float(plan.p), streams.receiver)
        sets = build_index_sets(v, b, m, 0 if last else plan.n_t, t)
        if isinstance(sets, Abort):
            transcript.send(t, RECEIVER_TO_SENDER, "abort", reason=sets.reason)
            outcome.aborted, outcome.abort_reason = True, sets.reason
            return outcome, transcript
        _index_message(transcript, t, sets, b, mutate)

        if m:
            f_seed = sample_seed(m, plan.l, streams.hashing)
            rec = make_reconciler(m, float(plan.q), plan.kappa, streams.hashing,
                                  params.reconciliation, list_size=params.list_size)
            k0, k1 = keys[t - 1]
            fields = sender_transfer(x, sets, f_seed, rec, k0, k1, mutate)
            transcript.send(t, SENDER_TO_RECEIVER, "transfer", **fields)
            k_hat = receiver_recover(y, sets, b, fields, f_seed, rec)
            if k_hat is None:
                outcome.decode_failures.append(t)
            outcome.keys_receiver[t - 1] = k_hat
        else:
            outcome.keys_receiver[t - 1] = np.zeros(0, dtype=np.uint8)

        if not last:
            pairs = sets.I2.reshape(-1, 2)
            parity = x[pairs[:, 0]] ^ x[pairs[:, 1]]
            transcript.send(t, SENDER_TO_RECEIVER, "parity", parity=parity.astype(np.uint8))
            x, y = ch.emulate_pairs(x[pairs], y[pairs], parity)
    return outcome, transcript


def run_protocol1(params: ProtocolParams, b: int, k0, k1, streams: Streams, mutate: str | None = None):
    """One-round BSEC protocol (the recursive protocol with ``T = 1``)."""
    if params.T != 1:
        raise ValueError("the one-round protocol requires T = 1")
    return run_protocol2(params, b, [(k0, k1)], streams, mutate)


def run_protocol3(n: int, delta, b: int, keys, streams: Streams):
    """Two-phase protocol over the four-input example channel.

    Phase 1 uses positions where exactly one coordinate is erased; phase 2
    reveals parities on doubly-received positions, which emulates an erasure
    channel with erasure probability 1/2. ``keys`` is ``[(K0, K1), (K0, K1)]``
    with lengths from :func:`example1_sizes`.
    """
    sizes = example1_sizes(n, delta)
    lengths = [sizes["l1"], sizes["l2"]]
    if len(keys) != 2 or any(len(k0) != l or len(k1) != l for (k0, k1), l in zip(keys, lengths)):
        raise ValueError(f"keys must have lengths {lengths}")
    b = int(b)
    transcript = Transcript(choice=b)
    outcome = OtOutcome(n, b, lengths, [tuple(k) for k in keys], [None, None])
    spec = ch.make_example1()

    x_idx = streams.sender.integers(0, 4, n)
    y_idx = ch.sample(spec, x_idx, streams.channel).outputs
    transcript.channel_uses.append(ChannelUses(1, x_idx.astype(np.uint8), y_idx.astype(np.uint8)))
    x1, x2 = (x_idx >> 1).astype(np.uint8), (x_idx & 1).astype(np.uint8)
    y1, y2 = (y_idx // 3).astype(np.uint8), (y_idx % 3).astype(np.uint8)

    # phase 1
    k = sizes["erasure_pool"]
    e1 = np.flatnonzero((y1 != ERASED) & (y2 == ERASED))[:k]
    e2 = np.flatnonzero((y1 == ERASED) & (y2 != ERASED))[:k]
    both = np.flatnonzero((y1 != ERASED) & (y2 != ERASED))[: sizes["pair_pool"]]
    if len(e1) < k or len(e2) < k or len(both) < sizes["pair_pool"]:
        reason = "insufficient indices, round 1"
        transcript.send(1, RECEIVER_TO_SENDER, "abort", reason=reason)
        outcome.aborted, outcome.abort_reason = True, reason
        return outcome, transcript
    h1, h2 = (e2, e1) if b else (e1, e2)
    transcript.send(1, RECEIVER_TO_SENDER, "index_sets", E1=h1, E2=h2, I2=both)
    s0 = np.concatenate([x1[h1], x2[h2]])
    s1 = np.concatenate([x2[h1], x1[h2]])
    (k0, k1) = keys[0]
    msg = transcript.send(1, SENDER_TO_RECEIVER, "transfer", ct0=as_bits(k0) ^ s0, ct1=as_bits(k1) ^ s1)
    # the receiver reads the non-erased coordinate, in the order of the lists it sent
    s_hat = np.concatenate([_visible(y1, y2, h1), _visible(y1, y2, h2)])
    outcome.keys_receiver[0] = msg.fields[f"ct{b}"] ^ s_hat

    # phase 2
    parity = x1[both] ^ x2[both]
    transcript.send(1, SENDER_TO_RECEIVER, "parity", parity=parity)
    x_em, y_em = ch.emulate_pairs(np.stack([x1[both], x2[both]], axis=1),
                                  np.stack([y1[both], y2[both]], axis=1), parity)
    k2 = sizes["phase2"]
    kept = np.flatnonzero(y_em != ERASED)[:k2]
    lost = np.flatnonzero(y_em == ERASED)[:k2]
    if len(kept) < k2 or len(lost) < k2:
        reason = "insufficient indices, round 2"
        transcript.send(2, RECEIVER_TO_SENDER, "abort", reason=reason)
        outcome.aborted, outcome.abort_reason = True, reason
        return outcome, transcript
    i0, i1 = (lost, kept) if b else (kept, lost)
    transcript.send(2, RECEIVER_TO_SENDER, "index_sets", I0=i0, I1=i1)
    (k0, k1) = keys[1]
    msg = transcript.send(2, SENDER_TO_RECEIVER, "transfer",
                          ct0=as_bits(k0) ^ x_em[i0], ct1=as_bits(k1) ^ x_em[i1])
    outcome.keys_receiver[1] = msg.fields[f"ct{b}"] ^ y_em[kept]
    return outcome, transcript


def _visible(y1, y2, idx):
    """The non-erased coordinate at each position of ``idx``."""
    return np.where(y1[idx] == ERASED, y2[idx], y1[idx]).astype(np.uint8)


# ---------------------------------------------------------------------------
# trials

def key_lengths_for(params: ProtocolParams, protocol: str) -> list[int]:
    if protocol == "p3":
        sizes = example1_sizes(params.n, params.delta)
        return [sizes["l1"], sizes["l2"]]
    return [plan.l if plan.productive else 0 for plan in params.schedule()]


def run_trial(params: ProtocolParams, protocol: str, master_seed: int, trial: int,
              mutate: str | None = None):
    """Draw inputs from the trial's party streams and run one protocol instance."""
    streams = Streams.derive(master_seed, trial)
    b = int(streams.receiver.integers(0, 2))
    keys = draw_keys(key_lengths_for(params, protocol), streams.sender)
    if protocol == "p1":
        return run_protocol1(params, b, *keys[0], streams, mutate)
    if protocol == "p2":
        return run_protocol2(params, b, keys, streams, mutate)
    if protocol == "p3":
        return run_protocol3(params.n, params.delta, b, keys, streams)
    raise ValueError(f"unknown protocol {protocol!r}")


def run_trials(params: ProtocolParams, protocol: str, trials: int, master_seed: int,
               threads: int = 1, mutate: str | None = None) -> list:
    """Outcomes of ``trials`` independent runs, ordered by trial index."""
    def one(i):
        return run_trial(params, protocol, master_seed, i, mutate)[0]

    if threads <= 1:
        return [one(i) for i in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(trials)))


@dataclass(frozen=True)
class CorrectnessEstimate:
    trials: int
    failures: int
    aborts: int
    decode_failures: int
    key_errors: int
    interval: tuple

    @property
    def estimate(self) -> float:
        return self.failures / self.trials


def wilson_interval(failures: int, trials: int, level: float = 0.95) -> tuple:
    ci = stats.binomtest(failures, trials).proportion_ci(confidence_level=level, method="wilson")
    return (float(ci.low), float(ci.high))


def summarize_correctness(outcomes) -> CorrectnessEstimate:
    trials = len(outcomes)
    if trials < 1:
        raise ValueError("need at least one trial")
    failures = sum(not o.correct for o in outcomes)
    return CorrectnessEstimate(
        trials=trials,
        failures=failures,
        aborts=sum(o.aborted for o in outcomes),
        decode_failures=sum(bool(o.decode_failures) for o in outcomes if not o.aborted),
        key_errors=sum(o.key_errors > 0 for o in outcomes if not o.aborted),
        interval=wilson_interval(failures, trials),
    )


def estimate_correctness(params: ProtocolParams, trials: int, master_seed: int,
                         protocol: str = "p2", threads: int = 1) -> CorrectnessEstimate:
    """Fraction of runs that abort, fail to decode or output a wrong key."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    return summarize_correctness(run_trials(params, protocol, trials, master_seed, threads))
