"""Security validation for the OT protocols.

* Receiver privacy is checked exactly: every atom of a tiny one-round
  instance is enumerated with rational probabilities and the variational
  distance between ``P_{B K0 K1 X Pi}`` and ``P_B x P_{K0 K1 X Pi}`` is
  computed without rounding.
* Sender security is checked statistically: a chi-square independence test
  between the unchosen key and a low-dimensional digest of the receiver's
  view, plus a plug-in variational distance with a bootstrap interval.
* Correctness wraps :func:`otforge.protocol.estimate_correctness`.
"""

from __future__ import annotations

import itertools
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from . import channel as ch
from . import protocol as pr
from .hashing import HashSeed
from .ir_pa import HashReconciler

MAX_ATOMS = 10**8
MAX_EXACT_N = 8
CRITERIA = ("correctness", "sender_security", "receiver_privacy")


class InstanceTooLarge(ValueError):
    def __init__(self, atoms: int):
        super().__init__(f"enumeration needs {atoms} atoms, limit is {MAX_ATOMS}")
        self.atoms = atoms


@dataclass(frozen=True)
class ExactDist:
    """Finite distribution with rational probabilities."""

    support: tuple

    def __post_init__(self):
        if any(pr < 0 for _, pr in self.support):
            raise ValueError("probabilities must be non-negative")
        if sum((pr for _, pr in self.support), Fraction(0)) != 1:
            raise ValueError("probabilities must sum to exactly 1")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExactDist":
        return cls(tuple((k, v) for k, v in mapping.items() if v))

    def as_dict(self) -> dict:
        return dict(self.support)

    def marginal(self, fn) -> "ExactDist":
        out = defaultdict(Fraction)
        for label, prob in self.support:
            out[fn(label)] += prob
        return ExactDist.from_mapping(out)


def variational_distance(p: dict, q: dict):
    """Half the L1 distance; exact when the values are :class:`Fraction`."""
    return sum((abs(p.get(k, 0) - q.get(k, 0)) for k in set(p) | set(q)), Fraction(0)) / 2


@dataclass
class SecurityReport:
    criterion: str
    method: str
    value: float
    interval: object
    trials: int | None
    seed: int | None
    passed: bool
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.method == "enumeration" and self.interval != "exact":
            raise ValueError("exact results carry an exact interval")

    def to_dict(self) -> dict:
        doc = asdict(self)
        if isinstance(self.interval, tuple):
            doc["interval"] = list(self.interval)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# exact receiver privacy

def _rational(x) -> Fraction:
    return x if isinstance(x, Fraction) else ch.as_fraction(x)


def v_label_probs(p, keep_prob=None) -> tuple[Fraction, Fraction, Fraction]:
    """``(P(V=0|x), P(V=1|x), P(V=2|x))`` under the discard rule.

    ``keep_prob`` overrides the probability ``p / (1 - p)`` with which a
    received position is kept.
    """
    p = _rational(p)
    keep = p / (1 - p) if keep_prob is None else _rational(keep_prob)
    v0 = (1 - p) * keep
    return v0, p, 1 - p - v0


def exact_v_symmetry(p, keep_prob=None) -> bool:
    """Whether kept and erased labels are equally likely, each with probability ``p``."""
    p = _rational(p)
    if not 0 < p <= Fraction(1, 2):
        raise ValueError(f"p must lie in (0, 1/2] (got {p})")
    v0, v1, _ = v_label_probs(p, keep_prob)
    return v0 == v1 == p


def atom_count(n: int, m: int = 1, kappa: int = 1, l: int = 1) -> int:
    """Atoms of the one-round enumeration.

    Choice bit, both keys, the input block, per-position channel outcome
    (erased, or received with or without a flip and then kept or discarded)
    and both hash seeds.
    """
    seeds = (m + l - 1 if l else 0) + (m + kappa - 1 if kappa else 0)
    return 2 * 4**l * 2**n * 5**n * 2**seeds


@dataclass(frozen=True)
class ExactPrivacyResult:
    distance: Fraction
    atoms: int
    joint: ExactDist = field(repr=False)


def _position_outcomes(p: Fraction, q: Fraction, keep: Fraction):
    """Per-position (flip, label, probability); a flip of ``None`` is an erasure."""
    out = [(None, 1, p)]
    for flip, pf in ((0, 1 - q), (1, q)):
        base = (1 - p) * pf
        out.append((flip, 0, base * keep))
        out.append((flip, 2, base * (1 - keep)))
    return [o for o in out if o[2]]


def _all_seeds(m: int, r: int):
    length = m + r - 1 if r else 0
    return [HashSeed(m, r, np.array(bits, dtype=np.uint8)) for bits in itertools.product((0, 1), repeat=length)]


def _bits(values) -> tuple:
    return tuple(int(v) for v in values)


def exact_receiver_privacy(p, q, n: int, m: int = 1, kappa: int = 1, l: int = 1,
                           mutate: str | None = None) -> ExactPrivacyResult:
    """Exact ``d_var(P_{B K0 K1 X Pi}, P_B x P_{K0 K1 X Pi})`` for the one-round protocol.

    Every combination of choice bit, keys, channel input, channel noise,
    discard coins and hash seeds is enumerated. The public transcript ``Pi``
    is the byte-level payload of each message, produced by the protocol's own
    message builders. ``mutate="leak-order"`` selects the broken variant that
    lists the receiver's own set first.
    """
    p, q = _rational(p), _rational(q)
    if not 0 <= p <= Fraction(1, 2):
        raise ValueError(f"p must lie in [0, 1/2] (got {p})")
    if not 0 <= q <= 1:
        raise ValueError(f"q must lie in [0, 1] (got {q})")
    if n > MAX_EXACT_N or n < 1:
        raise ValueError(f"n must lie in [1, {MAX_EXACT_N}] for exact enumeration (got {n})")
    atoms = atom_count(n, m, kappa, l)
    if atoms > MAX_ATOMS:
        raise InstanceTooLarge(atoms)

    keep = p / (1 - p)
    outcomes = _position_outcomes(p, q, keep)
    half = Fraction(1, 2)
    x_prob = Fraction(1, 2**n)

    # Stage 1: choice bit, input, channel noise and discard coins. Only the
    # labels reach the transcript, so atoms sharing (b, x, labels) are merged.
    stage1 = defaultdict(Fraction)
    enumerated = 0
    for b in (0, 1):
        for x in itertools.product((0, 1), repeat=n):
            for combo in itertools.product(outcomes, repeat=n):
                prob = half * x_prob
                for _, _, pr_ in combo:
                    prob *= pr_
                stage1[(b, x, tuple(c[1] for c in combo))] += prob
                enumerated += 1

    f_seeds = _all_seeds(m, l)
    g_seeds = _all_seeds(m, kappa)
    keys = list(itertools.product(itertools.product((0, 1), repeat=l), repeat=2))
    stage2_prob = Fraction(1, len(keys) * len(f_seeds) * len(g_seeds))
    joint = defaultdict(Fraction)
    index_cache: dict = {}
    for (b, x, v), prob in stage1.items():
        x_arr = np.array(x, dtype=np.uint8)
        sets = pr.build_index_sets(np.array(v), b, m, 0, 1)
        if (b, v) not in index_cache:
            tr = pr.Transcript()
            if isinstance(sets, pr.Abort):
                tr.send(1, pr.RECEIVER_TO_SENDER, "abort", reason=sets.reason)
            else:
                pr._index_message(tr, 1, sets, b, mutate)
            index_cache[(b, v)] = tr.messages[0].payload()
        head = index_cache[(b, v)]
        for (k0, k1), f_seed, g_seed in itertools.product(keys, f_seeds, g_seeds):
            if isinstance(sets, pr.Abort):
                pi = (head,)
            else:
                rec = HashReconciler(g_seed, w_max=m)
                fields = pr.sender_transfer(x_arr, sets, f_seed, rec, np.array(k0, np.uint8),
                                            np.array(k1, np.uint8))
                pi = (head, pr.Message(1, pr.SENDER_TO_RECEIVER, "transfer", fields).payload())
            joint[(b, k0, k1, x, pi)] += prob * stage2_prob
    enumerated *= len(keys) * len(f_seeds) * len(g_seeds)

    dist = ExactDist.from_mapping(joint)
    rest = dist.marginal(lambda a: a[1:]).as_dict()
    product = {}
    for b in (0, 1):
        for r, pr_ in rest.items():
            product[(b, *r)] = half * pr_
    return ExactPrivacyResult(variational_distance(dist.as_dict(), product), enumerated, dist)


def receiver_privacy_report(p, q, n: int, mutate: str | None = None) -> SecurityReport:
    res = exact_receiver_privacy(p, q, n, mutate=mutate)
    return SecurityReport(
        criterion="receiver_privacy",
        method="enumeration",
        value=float(res.distance),
        interval="exact",
        trials=None,
        seed=None,
        passed=res.distance == 0,
        details={"distance": str(res.distance), "atoms": res.atoms, "n": n, "p": str(_rational(p)),
                 "q": str(_rational(q)), "m": 1, "kappa": 1, "l": 1, "mutate": mutate},
    )


# ---------------------------------------------------------------------------
# statistical sender security

SENDER_TEST_N = 33
SENDER_TEST_P = 0.5
SENDER_TEST_Q = 0.25
SENDER_TEST_DELTA = 0.05
REJECT_LEVEL = 1e-3
BOOTSTRAP_REPS = 200


def sender_test_params(n: int = SENDER_TEST_N, p: float = SENDER_TEST_P, q: float = SENDER_TEST_Q,
                       delta: float = SENDER_TEST_DELTA) -> pr.ProtocolParams:
    return pr.ProtocolParams(n=n, T=1, delta=delta, channel=ch.BsecParams(p, q), reconciliation="hash")


def view_digest(outcome: pr.OtOutcome, transcript: pr.Transcript) -> tuple:
    """Small summary of the receiver's view.

    The choice bit, the decoded key, both ciphertexts and any auxiliary
    field of the transfer message.
    """
    transfer = next((msg.fields for msg in transcript.messages if msg.tag == "transfer"), None)
    if transfer is None:
        return ("abort",)
    k_hat = outcome.keys_receiver[0]
    return (
        transcript.choice,
        None if k_hat is None else _bits(k_hat),
        _bits(transfer["ct0"]),
        _bits(transfer["ct1"]),
        _bits(transfer["aux"]) if "aux" in transfer else (),
    )


def _plugin_dvar(keys: np.ndarray, digests: np.ndarray) -> float:
    """Plug-in ``d_var`` between the empirical joint and the product of its marginals."""
    n = keys.size
    joint = np.zeros((keys.max() + 1, digests.max() + 1))
    np.add.at(joint, (keys, digests), 1.0)
    joint /= n
    product = joint.sum(axis=1, keepdims=True) * joint.sum(axis=0, keepdims=True)
    return 0.5 * float(np.abs(joint - product).sum())


def sender_security_test(trials: int, seed: int, params: pr.ProtocolParams | None = None,
                         mutate: str | None = None, threads: int = 1) -> SecurityReport:
    """Chi-square test of independence between ``K_{not B}`` and the view digest.

    Aborted runs carry no key and are left out of the table. The test passes
    unless independence is rejected at level ``1e-3``.
    """
    params = params or sender_test_params()
    plan = params.schedule()[0]
    l = plan.l if plan.productive else 0
    details = {"n": params.n, "delta": params.delta, "p": params.channel.p, "q": params.channel.q,
               "m": plan.m_t, "kappa": plan.kappa, "l": l, "mutate": mutate}
    if l == 0:
        return SecurityReport("sender_security", "trivial", 0.0, (0.0, 0.0), trials, seed, True,
                              {**details, "note": "no key bits are transferred"})

    def one(i):
        outcome, transcript = pr.run_trial(params, "p1", seed, i, mutate)
        if outcome.aborted:
            return None
        other = outcome.keys_sender[0][1 - outcome.choice]
        return int("".join(map(str, _bits(other))), 2), view_digest(outcome, transcript)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(trials)))
    else:
        rows = [one(i) for i in range(trials)]
    rows = [r for r in rows if r is not None]
    details["aborts"] = trials - len(rows)
    if len(rows) < 2:
        raise ValueError("too few non-aborted trials for an independence test")

    labels = {d: i for i, d in enumerate(sorted({d for _, d in rows}, key=repr))}
    keys = np.array([k for k, _ in rows])
    digests = np.array([labels[d] for _, d in rows])
    table = np.zeros((2**l, len(labels)))
    np.add.at(table, (keys, digests), 1)
    table = table[:, table.sum(axis=0) > 0]
    table = table[table.sum(axis=1) > 0]
    if min(table.shape) < 2:
        p_value = 1.0
    else:
        p_value = float(stats.chi2_contingency(table, correction=False).pvalue)
        expected = table.sum(axis=1, keepdims=True) * table.sum(axis=0, keepdims=True) / table.sum()
        if (expected < 5).mean() > 0.2:
            details["warning"] = "low power: over 20% of expected cell counts are below 5"

    value = _plugin_dvar(keys, digests)
    boot_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31,)))
    boots = []
    for _ in range(BOOTSTRAP_REPS):
        idx = boot_rng.integers(0, keys.size, keys.size)
        boots.append(_plugin_dvar(keys[idx], digests[idx]))
    # basic bootstrap: reflects the resampling quantiles around the estimate,
    # which undoes the upward bias of the plug-in distance
    lo, hi = np.quantile(boots, [0.025, 0.975])
    interval = (max(0.0, 2 * value - float(hi)), max(0.0, 2 * value - float(lo)))
    details.update({"chi2_pvalue": p_value, "digest_cells": len(labels), "used_trials": len(rows)})
    return SecurityReport("sender_security", "monte_carlo", value, interval, trials, seed,
                          p_value >= REJECT_LEVEL, details)


def correctness_report(params: pr.ProtocolParams, trials: int, seed: int, protocol: str = "p2",
                       threads: int = 1, max_error: float | None = None) -> SecurityReport:
    """Correctness estimate with a Wilson interval; ``passed`` compares to ``max_error`` if given."""
    est = pr.estimate_correctness(params, trials, seed, protocol, threads)
    passed = True if max_error is None else est.estimate <= max_error
    return SecurityReport("correctness", "monte_carlo", est.estimate, est.interval, trials, seed, passed,
                          {"aborts": est.aborts, "decode_failures": est.decode_failures,
                           "key_errors": est.key_errors, "protocol": protocol})

