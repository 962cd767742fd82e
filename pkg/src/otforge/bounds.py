"""Lower and upper bounds on OT capacity.

Lower bound: the recursive-erasure sum over rounds for a BSEC(p1, q1).
Upper bounds, for an arbitrary finite channel ``W``:

* ``max_{P_X} min[I(X;Y), H(X|Y)]`` (:func:`upper_bound_eq5`);
* ``max_{P_X} min_{P_{J|X}} I(X;J|Y) + I(X;Y|J)`` with a binary auxiliary
  ``J`` (:func:`upper_bound_eq4_J2`).

Both maximisations use a grid over the input simplex followed by
Nelder-Mead refinement; the inner minimisation over ``P(J=0|x)`` uses a
grid over the unit cube plus Nelder-Mead from the best grid points and from
random restarts. All quantities are in bits.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import xlogy

from .channel import BsecParams, ChannelSpec, make_bsec
from .ir_pa import binary_entropy

JOINT_TOL = 1e-12
LN2 = math.log(2.0)


def _entropy(p: np.ndarray, axes) -> np.ndarray:
    return -xlogy(p, p).sum(axis=axes) / LN2


@dataclass(frozen=True)
class JointDist:
    px: np.ndarray
    channel: ChannelSpec
    joint: np.ndarray = field(repr=False)

    @classmethod
    def from_input(cls, px, channel: ChannelSpec) -> "JointDist":
        px = np.asarray(px, dtype=float)
        if px.shape != (channel.n_inputs,):
            raise ValueError("input distribution does not match channel")
        if np.any(px < 0) or abs(px.sum() - 1) > JOINT_TOL:
            raise ValueError("input distribution must be a probability vector")
        return cls(px, channel, px[:, None] * channel.matrix)

    @property
    def py(self) -> np.ndarray:
        return self.joint.sum(axis=0)


def mutual_information(j: JointDist) -> float:
    hx = _entropy(j.px, 0)
    hy = _entropy(j.py, 0)
    hxy = _entropy(j.joint, (0, 1))
    return float(max(hx + hy - hxy, 0.0))


def conditional_entropy_x_given_y(j: JointDist) -> float:
    return float(max(_entropy(j.joint, (0, 1)) - _entropy(j.py, 0), 0.0))


def lower_bound_theorem1(p1: float, q1: float, T: int) -> float:
    """Rate of the ``T``-round recursive protocol on BSEC(p1, q1).

    ``sum_t prod_{j<t} ((1-2p_j)/2) * p_t (1 - H(q_t))`` with
    ``p_{t+1} = 2 q_t (1 - q_t)`` and ``q_{t+1} = q_t^2 / ((1-q_t)^2 + q_t^2)``.
    """
    if not 0 <= p1 <= 0.5:
        raise ValueError(f"p1 must be in [0, 1/2] (got {p1})")
    if not 0 < q1 < 1:
        raise ValueError(f"q1 must be in (0, 1) (got {q1})")
    if T < 1:
        raise ValueError("T must be at least 1")
    total, weight = 0.0, 1.0
    p, q = float(p1), float(q1)
    for t in range(T):
        total += weight * p * (1 - binary_entropy(q))
        weight *= (1 - 2 * p) / 2
        # the recursion drives q to 0 or 1, where later terms vanish
        p, q = 2 * q * (1 - q), q * q / ((1 - q) ** 2 + q * q)
    return total


# ---------------------------------------------------------------------------
# optimisation helpers

@dataclass
class OptResult:
    value: float
    px: np.ndarray
    aux: np.ndarray | None = None


def simplex_grid(k: int, steps: int) -> np.ndarray:
    """All points of the ``k``-simplex with coordinates in ``{0, 1/steps, ..., 1}``."""
    pts = [c for c in itertools.product(range(steps + 1), repeat=k - 1) if sum(c) <= steps]
    arr = np.array(pts, dtype=float).reshape(-1, k - 1)
    return np.column_stack([arr, steps - arr.sum(axis=1)]) / steps


def _to_simplex(z: np.ndarray) -> np.ndarray:
    z = np.clip(z, 0.0, None)
    s = z.sum()
    return z / s if s > 0 else np.full(z.shape, 1.0 / z.size)


def _eq5_values(px: np.ndarray, w: np.ndarray) -> np.ndarray:
    joint = px[:, :, None] * w[None, :, :]
    hx = _entropy(px, 1)
    hy = _entropy(joint.sum(axis=1), 1)
    hxy = _entropy(joint, (1, 2))
    mi = np.maximum(hx + hy - hxy, 0.0)
    hxgy = np.maximum(hxy - hy, 0.0)
    return np.minimum(mi, hxgy)


def eq5_objective(px, channel: ChannelSpec) -> float:
    return float(_eq5_values(np.asarray(px, float)[None, :], channel.matrix)[0])


def upper_bound_eq5(channel: ChannelSpec, steps: int | None = None, candidates=None) -> OptResult:
    """Maximise ``min[I(X;Y), H(X|Y)]`` over the input distribution.

    ``candidates`` are extra input distributions scored alongside the grid.
    """
    k = channel.n_inputs
    steps = steps or _default_steps(k)
    grid = simplex_grid(k, steps)
    if candidates is not None:
        grid = np.vstack([grid, np.atleast_2d(candidates)])
    vals = _eq5_values(grid, channel.matrix)
    best = int(np.argmax(vals))
    best_px, best_val = grid[best], float(vals[best])
    if k > 1:
        res = minimize(lambda z: -eq5_objective(_to_simplex(z), channel), best_px,
                       method="Nelder-Mead", bounds=[(0, 1)] * k,
                       options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 4000})
        px = _to_simplex(res.x)
        val = eq5_objective(px, channel)
        if val > best_val:
            best_px, best_val = px, val
    return OptResult(eq5_objective(best_px, channel), best_px)


def _default_steps(k: int) -> int:
    return {1: 1, 2: 100, 3: 100, 4: 50}.get(k, 10)


def _eq4_values(px: np.ndarray, w: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``I(X;J|Y) + I(X;Y|J)`` for a batch of ``c[g, x] = P(J=0|x)``."""
    pj_x = np.stack([c, 1.0 - c], axis=-1)  # (G, X, 2)
    joint = px[None, :, None, None] * w[None, :, :, None] * pj_x[:, :, None, :]  # (G, X, Y, 2)
    h_x = _entropy(px, 0)
    h_y = _entropy(joint.sum(axis=(1, 3)), 1)
    h_j = _entropy(joint.sum(axis=(1, 2)), 1)
    h_yj = _entropy(joint.sum(axis=1), (1, 2))
    h_xj = _entropy(joint.sum(axis=2), (1, 2))
    h_xy = _entropy(joint.sum(axis=3), (1, 2))
    val = 2 * h_yj - h_y - h_xj - h_j - h_xy + 2 * h_x
    return np.maximum(val, 0.0)


def eq4_objective(px, channel: ChannelSpec, c) -> float:
    return float(_eq4_values(np.asarray(px, float), channel.matrix, np.asarray(c, float)[None, :])[0])


def _cube_grid(k: int, steps: int) -> np.ndarray:
    axis = np.linspace(0.0, 1.0, steps + 1)
    return np.array(list(itertools.product(axis, repeat=k)))


def inner_min_eq4(px, channel: ChannelSpec, cube=None, restarts: int = 20,
                  rng: np.random.Generator | None = None, starts: int = 3, xatol: float = 1e-9):
    """Minimise the auxiliary-channel objective at a fixed input distribution.

    Returns ``(value, c)`` with ``c[x] = P(J=0|x)``.
    """
    px = np.asarray(px, float)
    k = channel.n_inputs
    if cube is None:
        cube = _cube_grid(k, _cube_steps(k))
    vals = _eq4_values(px, channel.matrix, cube)
    order = np.argsort(vals, kind="stable")
    best_c, best_v = cube[order[0]], float(vals[order[0]])
    inits = [cube[i] for i in order[:starts]]
    if restarts:
        rng = rng if rng is not None else np.random.default_rng(0)
        inits += list(rng.random((restarts, k)))
    for c0 in inits:
        res = minimize(lambda c: eq4_objective(px, channel, np.clip(c, 0, 1)), c0,
                       method="Nelder-Mead", bounds=[(0, 1)] * k,
                       options={"xatol": xatol, "fatol": 1e-13, "maxiter": 2000})
        c = np.clip(res.x, 0, 1)
        v = eq4_objective(px, channel, c)
        if v < best_v:
            best_c, best_v = c, v
    return best_v, best_c


def _cube_steps(k: int) -> int:
    return {1: 100, 2: 100, 3: 20}.get(k, 8)


def upper_bound_eq4_J2(channel: ChannelSpec, steps: int | None = None, restarts: int = 20,
                       seed: int = 0) -> OptResult:
    """Outer max over ``P_X`` of the inner min over binary auxiliary channels.

    The outer grid is scored with the grid-only inner minimum; the best few
    points are refined, and the reported value is the fully refined inner
    minimum (with random restarts) at the reported input distribution.
    """
    k = channel.n_inputs
    rng = np.random.default_rng(seed)
    steps = steps or _default_steps(k)
    cube = _cube_grid(k, _cube_steps(k))
    screen = _cube_grid(k, max(2, _cube_steps(k) // 5))
    grid = simplex_grid(k, steps)
    coarse = np.array([np.min(_eq4_values(px, channel.matrix, screen)) for px in grid])
    top = np.argsort(-coarse, kind="stable")[:3]

    def inner(px):
        return inner_min_eq4(px, channel, cube, 0, starts=1, xatol=1e-6)[0]

    best_px, best_v = grid[top[0]], inner(grid[top[0]])
    for i in top[1:]:
        v = inner(grid[i])
        if v > best_v:
            best_px, best_v = grid[i], v
    if k > 1:
        res = minimize(lambda z: -inner(_to_simplex(z)), best_px, method="Nelder-Mead",
                       bounds=[(0, 1)] * k, options={"xatol": 1e-5, "fatol": 1e-10, "maxiter": 60})
        px = _to_simplex(res.x)
        if inner(px) > best_v:
            best_px = px
    value, c = inner_min_eq4(best_px, channel, cube, restarts, rng)
    return OptResult(value, best_px, c)


# ---------------------------------------------------------------------------
# curves

@dataclass
class BoundCurve:
    """Bound values over a grid of crossover probabilities at fixed ``p1``."""

    p1: float
    q1: list
    columns: dict

    def column_names(self) -> list[str]:
        return ["q1", *self.columns]

    def rows(self):
        for i, q in enumerate(self.q1):
            yield [q, *(self.columns[c][i] for c in self.columns)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.column_names())
        for row in self.rows():
            writer.writerow([f"{row[0]:.6g}", *(repr(float(v)) for v in row[1:])])
        return buf.getvalue()


UPPER_BOUNDS = ("eq4j2", "eq5")
UB_COLUMN = {"eq4j2": "ub_eq4_J2", "eq5": "ub_eq5"}


def _point(p1: float, q1: float, T: int, ubs) -> dict:
    row = {f"lb_T{t}": lower_bound_theorem1(p1, q1, t) for t in range(1, T + 1)}
    spec = make_bsec(BsecParams(p1, q1))
    eq4 = upper_bound_eq4_J2(spec) if "eq4j2" in ubs else None
    if eq4 is not None:
        row["ub_eq4_J2"] = eq4.value
    if "eq5" in ubs:
        extra = eq4.px if eq4 is not None else None
        row["ub_eq5"] = upper_bound_eq5(spec, candidates=extra).value
    return row


def bound_curve(p1: float, q_grid, T: int = 3, ubs=UPPER_BOUNDS, threads: int = 1) -> BoundCurve:
    """Lower bounds for ``T = 1..T`` and the requested upper bounds per grid point."""
    unknown = set(ubs) - set(UPPER_BOUNDS)
    if unknown:
        raise ValueError(f"unknown upper bound(s): {sorted(unknown)}")
    ubs = [u for u in UPPER_BOUNDS if u in ubs]
    q_grid = [float(q) for q in q_grid]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda q: _point(p1, q, T, ubs), q_grid))
    else:
        rows = [_point(p1, q, T, ubs) for q in q_grid]
    names = [f"lb_T{t}" for t in range(1, T + 1)] + [UB_COLUMN[u] for u in ubs]
    return BoundCurve(p1, q_grid, {n: [r[n] for r in rows] for n in names})
