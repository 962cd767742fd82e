"""Acceptance criteria 1-10.

Each test prints one ``criterion N: PASS|FAIL`` line with the measured
numbers; the lines are repeated in the pytest terminal summary. Run this
file directly (``python tests/test_acceptance.py``) to get only the lines.
"""

from __future__ import annotations

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from otforge import bounds, cli, seclab
from otforge import protocol as pr
from otforge.channel import BsecParams, emulate_pairs, emulated_params, make_example1
from otforge.hashing import hash_bits, sample_seed
from otforge.ir_pa import (check_length, default_weight_cap, make_reconciler,
                           reconciliation_success_ceiling)

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script from elsewhere
    ACCEPTANCE_LINES = []


def record(number: int, ok: bool, detail: str, elapsed: float, limit: float) -> None:
    ok = ok and elapsed < limit
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail}; {elapsed:.1f}s of {limit:.0f}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def h(q: float) -> float:
    return -q * math.log2(q) - (1 - q) * math.log2(1 - q)


def test_criterion_1_theorem1_reductions():
    t0 = time.perf_counter()
    qs = np.linspace(0.01, 0.99, 50)
    ps = np.linspace(0.0, 0.5, 50)
    eq6 = max(abs(bounds.lower_bound_theorem1(p, q, 1) - p * (1 - h(q))) for p, q in zip(ps, qs))
    eq7 = 0.0
    for q in qs:
        p2 = 2 * q * (1 - q)
        q2 = q * q / ((1 - q) ** 2 + q * q)
        eq7 = max(eq7, abs(bounds.lower_bound_theorem1(0.0, q, 2) - p2 / 2 * (1 - h(q2))))
    record(1, eq6 <= 1e-12 and eq7 <= 1e-12, f"max T=1 deviation {eq6:.1e}, max p=0 T=2 deviation {eq7:.1e}",
           time.perf_counter() - t0, 1)


def test_criterion_2_recursion():
    t0 = time.perf_counter()
    fixed = emulated_params(0.5) == (0.5, 0.5)
    n = 10**6
    worst = 0.0
    for i, q in enumerate((0.1, 0.25, 0.4)):
        rng = np.random.default_rng([2, i])
        x = rng.integers(0, 2, (n, 2), dtype=np.uint8)
        y = x ^ (rng.random((n, 2)) < q).astype(np.uint8)
        x_em, y_em = emulate_pairs(x, y, x[:, 0] ^ x[:, 1])
        p_want, q_want = emulated_params(q)
        erased = y_em == 2
        p_hat = erased.mean()
        kept = ~erased
        q_hat = (y_em[kept] != x_em[kept]).mean()
        z_p = abs(p_hat - p_want) / math.sqrt(p_want * (1 - p_want) / n)
        z_q = abs(q_hat - q_want) / math.sqrt(q_want * (1 - q_want) / kept.sum())
        worst = max(worst, z_p, z_q)
    record(2, fixed and worst <= 4, f"fixed point exact={fixed}, worst deviation {worst:.2f} standard errors",
           time.perf_counter() - t0, 10)


def test_criterion_3_bound_curves():
    t0 = time.perf_counter()
    grid = [i / 100 for i in range(1, 100)]
    curve = bounds.bound_curve(0.1, grid, T=3)
    elapsed = time.perf_counter() - t0
    c = {k: np.array(v) for k, v in curve.columns.items()}
    mono = bool(np.all(c["lb_T1"] <= c["lb_T2"]) and np.all(c["lb_T2"] <= c["lb_T3"]))
    sandwich = bool(np.all(c["lb_T3"] <= c["ub_eq4_J2"] + 1e-6)
                    and np.all(c["ub_eq4_J2"] + 1e-6 <= c["ub_eq5"] + 2e-6))
    sym = max(float(np.max(np.abs(c[k] - c[k][::-1]))) for k in ("lb_T1", "lb_T2", "lb_T3"))
    gaps = [c["ub_eq4_J2"][i] - c["lb_T3"][i] for i in (grid.index(0.1), grid.index(0.9))]
    ok = mono and sandwich and sym <= 1e-9 and min(gaps) > 0
    record(3, ok, f"monotone={mono}, sandwich={sandwich}, symmetry {sym:.1e}, "
                  f"gap at 0.1/0.9 = {gaps[0]:.4f}/{gaps[1]:.4f}", elapsed, 600)


def test_criterion_4_example1_anchor():
    t0 = time.perf_counter()
    spec = make_example1()
    mi = bounds.mutual_information(bounds.JointDist.from_input(np.full(4, 0.25), spec))
    ub = bounds.upper_bound_eq5(spec).value
    record(4, abs(mi - 0.75) <= 1e-12 and abs(ub - 0.75) <= 1e-6,
           f"I at uniform input {mi:.15f}, max-min bound {ub:.9f}", time.perf_counter() - t0, 60)


P2_PARAMS = dict(p1=0.25, q1=0.05, n=4000, T=2, delta=0.05, trials=100, seed=7)
P3_PARAMS = dict(n=100_000, delta=0.01, trials=100, seed=1)


def _p2_report():
    a = P2_PARAMS
    params = pr.ProtocolParams(n=a["n"], T=a["T"], delta=a["delta"], channel=BsecParams(a["p1"], a["q1"]))
    return cli.run_report(params, "p2", a["trials"], a["seed"])


def _p3_report():
    a = P3_PARAMS
    params = pr.ProtocolParams(n=a["n"], delta=a["delta"], channel="example1")
    return cli.run_report(params, "p3", a["trials"], a["seed"])


def test_criterion_5_protocol2_rate():
    t0 = time.perf_counter()
    doc = _p2_report()
    elapsed = time.perf_counter() - t0
    reference = bounds.lower_bound_theorem1(0.25, 0.05, 2)
    low = reference - 3 * 0.05 * 1.25
    rate_ok = low <= doc["mean_rate"] <= reference
    fail_ok = doc["failure_rate"] <= 0.05
    params = pr.ProtocolParams(n=4000, T=2, delta=0.05, channel=BsecParams(0.25, 0.05))
    ceiling = math.prod(reconciliation_success_ceiling(pl.m_t, float(pl.q), pl.kappa)
                        for pl in params.schedule() if pl.productive)
    record(5, rate_ok and fail_ok,
           f"abort+error fraction {doc['failure_rate']:.2f} (limit 0.05; any decoder fails at least "
           f"{1 - ceiling:.3f} with these check lengths), mean rate {doc['mean_rate']:.4f} in "
           f"[{low:.4f}, {reference:.4f}]={rate_ok}", elapsed, 300)


@pytest.mark.parametrize("p, q", [("1/4", "1/4"), ("1/4", "1/2"), ("1/2", "1/4"), ("1/2", "1/2")])
def test_criterion_6_exact_receiver_privacy(p, q):
    t0 = time.perf_counter()
    faithful = seclab.exact_receiver_privacy(Fraction(p), Fraction(q), 4).distance
    t1 = time.perf_counter()
    broken = seclab.exact_receiver_privacy(Fraction(p), Fraction(q), 4, mutate="leak-order").distance
    elapsed = max(t1 - t0, time.perf_counter() - t1)
    record(6, faithful == 0 and broken > 0,
           f"p={p}, q={q}: exact distance {faithful}, leak-order variant {broken}", elapsed, 120)


def test_criterion_7_reconciliation():
    t0 = time.perf_counter()
    m, q, delta = 200, 0.05, 0.05
    kappa = check_length(m, q, delta)
    w_max = default_weight_cap(m, q)
    rng = np.random.default_rng(77)
    bad = unsound = returned = 0
    trials = 1000
    for _ in range(trials):
        rec = make_reconciler(m, q, kappa, rng, w_max=w_max)
        x = rng.integers(0, 2, m, dtype=np.uint8)
        y = x ^ (rng.random(m) < q).astype(np.uint8)
        check = rec.check(x)
        x_hat = rec.decode(y, check)
        if x_hat is None or not np.array_equal(x_hat, x):
            bad += 1
        if x_hat is not None:
            returned += 1
            unsound += not np.array_equal(rec.check(x_hat), check)
    ceiling = reconciliation_success_ceiling(m, q, kappa)
    record(7, bad / trials <= 0.05 and unsound == 0,
           f"failure-or-error rate {bad / trials:.3f} (limit 0.05; a {kappa}-bit check caps success at "
           f"{ceiling:.3f}), sound {returned - unsound}/{returned}, decoder {rec.method}",
           time.perf_counter() - t0, 120)


def test_criterion_8_hash_family():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    linear = 0
    for _ in range(10_000):
        m = int(rng.integers(1, 65))
        seed = sample_seed(m, int(rng.integers(0, m + 1)), rng)
        a, b = rng.integers(0, 2, (2, m), dtype=np.uint8)
        linear += np.array_equal(hash_bits(seed, a ^ b), hash_bits(seed, a) ^ hash_bits(seed, b))
    m, seeds = 32, 100_000
    a = rng.integers(0, 2, m, dtype=np.uint8)
    b = a.copy()
    b[[3, 17, 30]] ^= 1
    rates, ok = [], linear == 10_000
    for r in (1, 4, 8):
        hits = 0
        for _ in range(seeds):
            s = sample_seed(m, r, rng)
            hits += np.array_equal(hash_bits(s, a), hash_bits(s, b))
        target = 2.0**-r
        rates.append(hits / seeds)
        ok &= hits / seeds <= target + 4 * math.sqrt(target * (1 - target) / seeds)
    record(8, ok, f"linearity {linear}/10000, collision rates r=1,4,8: "
                  + ", ".join(f"{x:.5f}" for x in rates), time.perf_counter() - t0, 30)


def test_criterion_9_protocol3():
    t0 = time.perf_counter()
    doc = _p3_report()
    elapsed = time.perf_counter() - t0
    r1, r2 = doc["mean_round_rates"]
    ok = doc["mean_rate"] >= 0.70 and r1 >= 0.47 and r2 >= 0.23
    record(9, ok, f"total rate {doc['mean_rate']:.4f}, phases {r1:.4f}/{r2:.4f}, aborts {doc['aborts']}, "
                  f"observed key error rate {doc['key_errors'] / doc['trials']:.3f}", elapsed, 300)


def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    a = P2_PARAMS
    p2 = ["run", "p2", "--p1", str(a["p1"]), "--q1", str(a["q1"]), "--n", str(a["n"]), "--T", str(a["T"]),
          "--delta", str(a["delta"]), "--trials", str(a["trials"]), "--seed", str(a["seed"])]
    b = P3_PARAMS
    p3 = ["run", "p3", "--n", str(b["n"]), "--delta", str(b["delta"]), "--trials", str(b["trials"]),
          "--seed", str(b["seed"])]
    same = []
    for name, argv in (("p2", p2), ("p3", p3)):
        files = [tmp_path / f"{name}_{k}.json" for k in range(2)]
        for f in files:
            cli.main(argv + ["--out", str(f)])
        same.append(files[0].read_bytes() == files[1].read_bytes())
        json.loads(files[0].read_text())
    record(10, all(same), f"byte-identical reports: p2={same[0]}, p3={same[1]}", time.perf_counter() - t0, 600)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider", "-s"]))
