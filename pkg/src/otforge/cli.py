"""Command-line front end: ``otforge run|bounds|seclab|channel``.

Exit codes: 0 success, 1 invalid configuration, 2 a run dominated by
aborts, 3 a failed security check. Output files depend only on the
arguments, so repeating a command reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from decimal import Decimal, InvalidOperation
from fractions import Fraction

import numpy as np

from . import bounds, seclab
from . import channel as ch
from . import protocol as pr

EXIT_OK, EXIT_CONFIG, EXIT_ABORTS, EXIT_SECURITY = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid command-line configuration; the message names the field."""


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get("OTFORGE_THREADS")
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"OTFORGE_THREADS must be an integer (got {env!r})") from None
    if value < 1:
        raise ConfigError(f"threads must be at least 1 (got {value})")
    return value


def _positive(name: str, value: int) -> None:
    if value < 1:
        raise ConfigError(f"{name} must be at least 1 (got {value})")


# ---------------------------------------------------------------------------
# run

def _run_params(args) -> pr.ProtocolParams:
    _positive("n", args.n)
    _positive("trials", args.trials)
    _positive("T", args.T)
    if not 0 < args.delta < 1:
        raise ConfigError(f"delta must lie strictly between 0 and 1 (got {args.delta})")
    if args.protocol == "p3":
        return pr.ProtocolParams(n=args.n, T=1, delta=args.delta, channel="example1")
    if args.protocol == "p1" and args.T != 1:
        raise ConfigError(f"T must be 1 for protocol p1 (got {args.T})")
    if args.T > 1 and args.n % 2:
        raise ConfigError(f"n must be even when T > 1 (got {args.n})")
    try:
        channel = ch.BsecParams(args.p1, args.q1)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return pr.ProtocolParams(n=args.n, T=args.T, delta=args.delta, channel=channel,
                             reconciliation=args.reconciliation, list_size=args.list_size)


def run_report(params: pr.ProtocolParams, protocol: str, trials: int, seed: int, threads: int = 1) -> dict:
    """Summary of ``trials`` runs: rates, failure counts and the reference rate."""
    outcomes = pr.run_trials(params, protocol, trials, seed, threads)
    est = pr.summarize_correctness(outcomes)
    done = [o for o in outcomes if not o.aborted]
    rounds = len(outcomes[0].key_lengths)
    doc = {
        "protocol": protocol,
        "seed": seed,
        "trials": trials,
        "params": {"n": params.n, "T": params.T, "delta": params.delta},
        "key_lengths": [int(l) for l in outcomes[0].key_lengths],
        "aborts": est.aborts,
        "decode_failures": est.decode_failures,
        "key_errors": est.key_errors,
        "failure_rate": est.estimate,
        "failure_interval": list(est.interval),
        "mean_rate": float(np.mean([o.rate for o in done])) if done else 0.0,
        "mean_round_rates": [float(np.mean([o.round_rates()[t] for o in done])) if done else 0.0
                             for t in range(rounds)],
        "key_bit_error_rate": _key_bit_error_rate(done),
    }
    if isinstance(params.channel, ch.BsecParams):
        doc["params"].update({"p1": params.channel.p, "q1": params.channel.q,
                              "reconciliation": params.reconciliation})
        doc["reference_rate"] = bounds.lower_bound_theorem1(params.channel.p, params.channel.q, params.T)
    else:
        doc["params"]["channel"] = "example1"
        doc["reference_rate"] = 0.75
    return doc


def _key_bit_error_rate(outcomes) -> float:
    """Fraction of wrong key bits among decoded keys."""
    wrong = total = 0
    for o in outcomes:
        for (k0, k1), k_hat in zip(o.keys_sender, o.keys_receiver):
            if k_hat is None:
                continue
            want = k1 if o.choice else k0
            wrong += int(np.count_nonzero(want != k_hat))
            total += len(want)
    return wrong / total if total else 0.0


def cmd_run(args) -> int:
    params = _run_params(args)
    threads = _threads(args.threads)
    doc = run_report(params, args.protocol, args.trials, args.seed, threads)
    _emit(_dump(doc), args.out)
    if args.transcript:
        _, transcript = pr.run_trial(params, args.protocol, args.seed, 0)
        _emit(transcript.to_json() + "\n", args.transcript)
    return EXIT_ABORTS if 2 * doc["aborts"] > args.trials else EXIT_OK


# ---------------------------------------------------------------------------
# bounds

def parse_grid(spec: str) -> list[float]:
    """``a:b:step`` (inclusive) or a single value, parsed in decimal."""
    try:
        parts = [Decimal(s) for s in spec.split(":")]
    except InvalidOperation:
        raise ConfigError(f"qgrid must be a:b:step or a number (got {spec!r})") from None
    if len(parts) == 1:
        values = parts
    elif len(parts) == 3:
        a, b, step = parts
        if step <= 0 or b < a:
            raise ConfigError(f"qgrid needs a <= b and step > 0 (got {spec!r})")
        count = int((b - a) / step) + 1
        values = [a + i * step for i in range(count)]
    else:
        raise ConfigError(f"qgrid must be a:b:step or a number (got {spec!r})")
    out = [float(v) for v in values]
    if any(not 0 < v < 1 for v in out):
        raise ConfigError(f"qgrid values must lie strictly between 0 and 1 (got {spec!r})")
    return out


def cmd_bounds(args) -> int:
    if not 0 <= args.p1 <= 0.5:
        raise ConfigError(f"p1 must be ≤ 0.5 and ≥ 0 (got {args.p1})")
    _positive("T", args.T)
    ubs = [u for u in args.ub.split(",") if u] if args.ub else []
    unknown = sorted(set(ubs) - set(bounds.UPPER_BOUNDS))
    if unknown:
        raise ConfigError(f"ub must be a subset of {','.join(bounds.UPPER_BOUNDS)} (got {','.join(unknown)})")
    curve = bounds.bound_curve(args.p1, parse_grid(args.qgrid), args.T, ubs, _threads(args.threads))
    _emit(curve.to_csv(), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# seclab

def _fraction(name: str, text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{name} must be a rational number such as 0.25 or 1/4 (got {text!r})") from None


def cmd_seclab(args) -> int:
    if args.suite == "exact":
        p, q = _fraction("p", args.p), _fraction("q", args.q)
        if not 0 <= p <= Fraction(1, 2):
            raise ConfigError(f"p must lie in [0, 1/2] (got {args.p})")
        if not 0 <= q <= 1:
            raise ConfigError(f"q must lie in [0, 1] (got {args.q})")
        if not 1 <= args.n <= seclab.MAX_EXACT_N:
            raise ConfigError(f"n must lie in [1, {seclab.MAX_EXACT_N}] (got {args.n})")
        try:
            report = seclab.receiver_privacy_report(p, q, args.n, mutate=args.mutate)
        except seclab.InstanceTooLarge as exc:
            raise ConfigError(f"n: {exc}") from None
        if p > 0:
            symmetric = seclab.exact_v_symmetry(p)
            report.details["v_symmetry"] = symmetric
            report.passed = report.passed and symmetric
        reports = [report]
    else:
        _positive("trials", args.trials)
        threads = _threads(args.threads)
        params = seclab.sender_test_params()
        reports = [
            seclab.sender_security_test(args.trials, args.seed, params, mutate=args.mutate, threads=threads),
            seclab.correctness_report(params, args.trials, args.seed, "p1", threads),
        ]
    _emit(_dump([r.to_dict() for r in reports]), args.out)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_SECURITY


# ---------------------------------------------------------------------------
# channel

def cmd_channel(args) -> int:
    try:
        if args.kind == "bsec":
            spec = ch.make_bsec(ch.BsecParams(args.p, args.q))
        elif args.kind == "bsc":
            spec = ch.make_bsc(args.q)
        else:
            spec = ch.make_example1()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _emit(spec.to_json(sort_keys=True, indent=2) + "\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otforge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a protocol for a number of trials")
    run.add_argument("protocol", choices=["p1", "p2", "p3"])
    run.add_argument("--p1", type=float, default=0.25, help="erasure probability of the BSEC")
    run.add_argument("--q1", type=float, default=0.05, help="crossover probability of the BSEC")
    run.add_argument("--n", type=int, required=True)
    run.add_argument("--T", type=int, default=1)
    run.add_argument("--delta", type=float, default=0.05)
    run.add_argument("--trials", type=int, default=1)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--threads", type=int)
    run.add_argument("--reconciliation", choices=["auto", "hash", "polar"], default="auto")
    run.add_argument("--list-size", type=int, default=pr.POLAR_LIST_SIZE)
    run.add_argument("--out", help="report path (default: stdout)")
    run.add_argument("--transcript", help="write the transcript of trial 0 here")
    run.set_defaults(func=cmd_run)

    bd = sub.add_parser("bounds", help="lower and upper bound curves as CSV")
    bd.add_argument("--p1", type=float, required=True)
    bd.add_argument("--qgrid", required=True, help="a:b:step (inclusive) or a single value")
    bd.add_argument("--T", type=int, default=3)
    bd.add_argument("--ub", default="eq4j2,eq5", help="comma-separated subset of eq4j2,eq5")
    bd.add_argument("--threads", type=int)
    bd.add_argument("--out")
    bd.set_defaults(func=cmd_bounds)

    sl = sub.add_parser("seclab", help="security checks")
    sl.add_argument("suite", choices=["exact", "statistical"])
    sl.add_argument("--p", default="1/4", help="erasure probability (exact suite)")
    sl.add_argument("--q", default="1/4", help="crossover probability (exact suite)")
    sl.add_argument("--n", type=int, default=4, help="block length (exact suite)")
    sl.add_argument("--trials", type=int, default=10_000)
    sl.add_argument("--seed", type=int, default=0)
    sl.add_argument("--threads", type=int)
    sl.add_argument("--mutate", choices=["leak-order", "leak-bit"])
    sl.add_argument("--out")
    sl.set_defaults(func=cmd_seclab)

    cp = sub.add_parser("channel", help="export a channel as JSON")
    cp.add_argument("kind", choices=["bsec", "bsc", "example1"])
    cp.add_argument("--p", type=float, default=0.25)
    cp.add_argument("--q", type=float, default=0.05)
    cp.add_argument("--out")
    cp.set_defaults(func=cmd_channel)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"otforge: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
