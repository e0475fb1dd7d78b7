"""Closed-form steady states, correlations and moment assembly.

These evaluators do not run any dynamics.  They serve as ground truth for
the simulator and the PDE solver.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .functions import FunctionSpec, grid, make_function, trapezoid_weights
from .ncpart import (
    DEFAULT_CAP,
    NCPartition,
    enumerate_nc,
    free_cumulants_from_moments,
    indicator_cumulant,
    kreweras_dual,
)

# ---------------------------------------------------------------------------
# periodic / closed steady state


def tau_from_profile(phi0, n_max: int) -> np.ndarray:
    """``tau_n = int phi0^n`` (trapezoid rule) for ``n = 1..n_max``."""
    values = np.asarray(phi0.values if hasattr(phi0, "values") else phi0, dtype=float)
    if n_max > DEFAULT_CAP:
        raise ValueError(f"n_max={n_max} exceeds the cap {DEFAULT_CAP}")
    w = trapezoid_weights(values.size - 1)
    return np.array([float(w @ values**n) for n in range(1, n_max + 1)])


def theta_from_tau(tau: Sequence[float]) -> np.ndarray:
    return free_cumulants_from_moments(tau)


def theta_of(partition: NCPartition, theta: Sequence[float]) -> float:
    return math.prod(theta[len(b) - 1] for b in partition.blocks)


def _avg(values: np.ndarray) -> float:
    return float(trapezoid_weights(values.size - 1) @ values)


def periodic_steady_loop(theta: Sequence[float], ds: Sequence[np.ndarray],
                         with_trace: bool = False):
    """Steady loop ``L_{p+1}[d_0..d_p]`` for cumulants ``theta``.

    ``sum over pi in NC_{p+1}`` of ``theta_{pi*}`` times the product over blocks
    of ``pi`` of the average of the product of the ``d_k`` in the block.
    """
    ds = [np.asarray(d, dtype=float) for d in ds]
    n = len(ds)
    if n > len(theta):
        raise ValueError(f"need theta up to order {n}, got {len(theta)}")
    total, trace = 0.0, []
    for pi in enumerate_nc(n):
        weight = theta_of(kreweras_dual(pi), theta)
        if weight == 0.0:
            term = 0.0
        else:
            term = weight * math.prod(_avg(np.prod([ds[k] for k in b], axis=0)) for b in pi.blocks)
        total += term
        trace.append((pi.blocks, term))
    return (total, trace) if with_trace else total


# ---------------------------------------------------------------------------
# open steady state


def mean_profile(x, n_a: float, n_b: float):
    return n_a + np.asarray(x, dtype=float) * (n_b - n_a)


def open_steady_g(p: int, xs: Sequence[float], n_a: float, n_b: float, sign: int = 1) -> float:
    """Steady local free cumulant ``g_p(x_1..x_p)`` of the open chain.

    ``sign`` orients the order-two and higher cumulants (+1: ``min - product``).
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    xs = [float(x) for x in xs]
    if len(xs) != p or p < 1:
        raise ValueError("need exactly p >= 1 arguments")
    if any(not 0.0 <= x <= 1.0 for x in xs):
        raise ValueError("arguments must lie in [0, 1]")
    if p == 1:
        return float(mean_profile(xs[0], n_a, n_b))
    if p == 2:
        x, y = xs
        return sign * (n_b - n_a) ** 2 * (min(x, y) - x * y)
    if (n_a, n_b) != (0.0, 1.0):
        raise NotImplementedError("closed forms for p >= 3 exist only for (n_a, n_b) = (0, 1)")
    return sign * indicator_cumulant(xs)


def open_steady_phis(M: int, p: int, n_a: float, n_b: float) -> list[np.ndarray]:
    """Steady auxiliary kernels ``phi_1..phi_p`` on the grid (``phis[0] = 1``)."""
    x = grid(M)
    nbar = mean_profile(x, n_a, n_b)
    out = [np.ones(())]
    if p >= 1:
        out.append(nbar)
    if p >= 2:
        out.append(np.multiply.outer(nbar, nbar) + (n_b - n_a) ** 2 * (np.minimum.outer(x, x) - np.outer(x, x)))
    if p >= 3:
        if (n_a, n_b) != (0.0, 1.0):
            raise NotImplementedError("closed forms for p >= 3 exist only for (n_a, n_b) = (0, 1)")
        for q in range(3, p + 1):
            out.append(np.minimum.reduce(np.meshgrid(*([x] * q), indexing="ij")))
    return out


def two_time_steady(delta: FunctionSpec, x: float, n_a: float, n_b: float) -> float:
    """Steady two-time correlation ``nbar(x)^2 Delta(x)``, independent of the gap."""
    return float(mean_profile(x, n_a, n_b) ** 2 * make_function(delta)(np.array([x]))[0])


# ---------------------------------------------------------------------------
# dressed-moment assembly


@dataclass
class AssembledMoment:
    p: int
    x: float
    value: float
    trace: list = field(default_factory=list)  # (blocks, value) per partition

    def to_json(self) -> str:
        return json.dumps({"p": self.p, "x": self.x, "value": self.value,
                           "trace": [{"blocks": [list(b) for b in blocks], "value": v}
                                     for blocks, v in self.trace]}, sort_keys=True)


class GridCumulants:
    """Local free cumulants ``g_q`` sampled on a common grid (``g[q]`` for q >= 1)."""

    def __init__(self, g: Mapping[int, np.ndarray] | Sequence[np.ndarray]):
        if not isinstance(g, Mapping):
            g = {q: arr for q, arr in enumerate(g) if q >= 1}
        self.g = {int(q): np.asarray(a, dtype=float) for q, a in g.items()}
        if 1 not in self.g:
            raise ValueError("the first cumulant is required")
        self.M = self.g[1].size - 1
        self.w = trapezoid_weights(self.M)

    @property
    def max_order(self) -> int:
        return max(self.g)

    def kappa(self, args: Sequence[np.ndarray]) -> np.ndarray:
        """``x -> int g_q(x, y_1..y_{q-1}) X_1(y_1)..X_{q-1}(y_{q-1})``."""
        q = len(args) + 1
        if q not in self.g:
            raise ValueError(f"cumulant kernel of order {q} is missing")
        out = self.g[q]
        for X in reversed(args):
            out = out @ (self.w * X)
        return out


def assemble_dressed_moment(g: GridCumulants, deltas: Sequence[np.ndarray], x: float) -> AssembledMoment:
    """``C_{p+1}[D_1..D_p](x)`` as a sum over non-crossing partitions of the p+1 positions.

    Positions ``0..p`` stand for the matrix factors and ``D_k`` sits between
    positions ``k-1`` and ``k``.  The block of the first position in a range is
    evaluated as a cumulant whose arguments are the nested ranges between its
    consecutive elements; the remainder of the range follows after ``D``.
    """
    p = len(deltas)
    D = [None] + [np.asarray(d, dtype=float) for d in deltas]
    xs = grid(g.M)
    trace, total = [], 0.0
    for pi in enumerate_nc(p + 1):
        if max(len(b) for b in pi.blocks) > g.max_order:
            raise ValueError(f"partition {pi.blocks} needs cumulant order {max(len(b) for b in pi.blocks)}")
        owner = pi.block_of()

        def value(a: int, b: int) -> np.ndarray:
            block = [i for i in pi.blocks[owner[a]] if i <= b]
            args = []
            for lo, hi in zip(block, block[1:]):
                seg = D[hi] if hi == lo + 1 else D[lo + 1] * value(lo + 1, hi - 1) * D[hi]
                args.append(seg)
            head = g.kappa(args)
            last = block[-1]
            if last < b:
                head = head * D[last + 1] * value(last + 1, b)
            return head

        v = float(np.interp(x, xs, value(0, p)))
        trace.append((pi.blocks, v))
        total += v
    return AssembledMoment(p, float(x), total, trace)


def open_steady_cumulants(M: int, p: int, n_a: float, n_b: float, sign: int = 1) -> GridCumulants:
    """Grid cumulants of the open steady state up to order ``p``."""
    from .hierarchy import phi_to_g

    phis = open_steady_phis(M, min(p, 3), n_a, n_b)
    g = phi_to_g(phis)
    out = {1: g[1]}
    for q in range(2, len(g)):
        out[q] = sign * g[q]
    return GridCumulants(out)


# ---------------------------------------------------------------------------
# heat equation in closed form


def heat_solution(variant: str, t: float, x, const: float = 0.0,
                  cos: Sequence[Sequence[float]] = (), sin: Sequence[Sequence[float]] = (),
                  n_a: float = 0.0, n_b: float = 0.0):
    """Heat flow of ``const + sum a cos(k pi x) + sum b sin(k pi x)`` (plus the
    open-chain linear profile) by decaying each mode with ``exp(-(k pi)^2 t)``.

    Each mode must be an eigenfunction for the boundary variant: periodic
    requires even ``k``, Neumann cosines only, Dirichlet/open sines only.
    """
    x = np.asarray(x, dtype=float)
    variant = {"closed": "neumann"}.get(variant, variant)
    if variant == "periodic" and any(int(k) % 2 for k, _ in list(cos) + list(sin)):
        raise ValueError("periodic modes need even k")
    if variant == "neumann" and sin:
        raise ValueError("Neumann solutions use cosines only")
    if variant in ("dirichlet", "open") and (cos or const):
        raise ValueError("Dirichlet/open solutions use sines on top of the linear profile")
    out = np.full(x.shape, float(const))
    if variant == "open":
        out = out + mean_profile(x, n_a, n_b)
    for k, a in cos:
        out = out + a * math.exp(-((k * math.pi) ** 2) * t) * np.cos(k * math.pi * x)
    for k, b in sin:
        out = out + b * math.exp(-((k * math.pi) ** 2) * t) * np.sin(k * math.pi * x)
    return out


# ---------------------------------------------------------------------------
# steady-state description


@dataclass(frozen=True)
class SteadySpec:
    """Steady-state data: a profile or cumulant sequence (periodic/closed) or
    boundary densities (open)."""

    variant: str
    profile: tuple | None = None
    theta: tuple | None = None
    n_a: float | None = None
    n_b: float | None = None

    def __post_init__(self) -> None:
        if self.variant in ("periodic", "closed"):
            if (self.profile is None) == (self.theta is None):
                raise ValueError("give exactly one of profile and theta")
            if self.profile is not None and any(not 0.0 <= v <= 1.0 for v in self.profile):
                raise ValueError("densities must lie in [0, 1]")
        elif self.variant == "open":
            if self.n_a is None or self.n_b is None:
                raise ValueError("open steady states need n_a and n_b")
            if not (0.0 <= self.n_a <= 1.0 and 0.0 <= self.n_b <= 1.0):
                raise ValueError("densities must lie in [0, 1]")
        else:
            raise ValueError(f"unknown variant {self.variant!r}")

    def cumulants(self, order: int) -> np.ndarray:
        if self.theta is not None:
            th = np.zeros(order)
            th[: min(order, len(self.theta))] = self.theta[:order]
            return th
        return theta_from_tau(tau_from_profile(np.asarray(self.profile), order))

    def loop(self, ds: Sequence[np.ndarray], with_trace: bool = False):
        """Steady loop (periodic and closed share the invariant measure)."""
        if self.variant == "open":
            raise ValueError("loops are defined here for periodic/closed states only")
        return periodic_steady_loop(self.cumulants(len(ds)), ds, with_trace)
