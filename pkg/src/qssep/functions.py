"""Test functions on [0, 1] built from small JSON-friendly specs.

A function description is a dict with a ``kind`` key, for example::

    {"kind": "fourier", "const": 0.5, "cos": [[2, 0.3]]}   # 0.5 + 0.3 cos(2 pi x)
    {"kind": "gaussian", "center": 0.5, "width": 0.1}
    {"kind": "step", "fraction": 0.5}                      # 1 on (0, 1/2]

Fourier wave numbers are multiples of pi, so periodic functions use even k.
"""

from __future__ import annotations

from typing import Any, Callable, Mapping, Union

import numpy as np

Func = Callable[[np.ndarray], np.ndarray]
FunctionSpec = Union[Mapping[str, Any], float, int]


def _const(c: float) -> Func:
    return lambda x: np.full(np.shape(x), float(c))


def make_function(spec: FunctionSpec) -> Func:
    """Turn a function description (or a bare number) into a vectorised callable."""
    if callable(spec):
        return spec  # type: ignore[return-value]
    if isinstance(spec, (int, float)):
        return _const(spec)
    kind = spec.get("kind")
    if kind == "constant":
        return _const(spec.get("value", 1.0))
    if kind == "linear":
        a, b = float(spec.get("a", 0.0)), float(spec.get("b", 1.0))
        return lambda x: a + b * np.asarray(x, dtype=float)
    if kind == "polynomial":
        coeffs = [float(c) for c in spec["coeffs"]]
        return lambda x: np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), coeffs)
    if kind == "step":
        start = float(spec.get("start", 0.0))
        frac = float(spec["fraction"])
        low, high = float(spec.get("low", 0.0)), float(spec.get("high", 1.0))

        def step(x):
            x = np.asarray(x, dtype=float)
            inside = (x > start) & (x <= start + frac)
            return np.where(inside, high, low)

        return step
    if kind == "fourier":
        const = float(spec.get("const", 0.0))
        cos_terms = [(float(k), float(a)) for k, a in spec.get("cos", [])]
        sin_terms = [(float(k), float(a)) for k, a in spec.get("sin", [])]

        def fourier(x):
            x = np.asarray(x, dtype=float)
            out = np.full(x.shape, const)
            for k, a in cos_terms:
                out = out + a * np.cos(k * np.pi * x)
            for k, a in sin_terms:
                out = out + a * np.sin(k * np.pi * x)
            return out

        return fourier
    if kind == "gaussian":
        c, w = float(spec.get("center", 0.5)), float(spec.get("width", 0.1))
        h, off = float(spec.get("height", 1.0)), float(spec.get("offset", 0.0))
        return lambda x: off + h * np.exp(-((np.asarray(x, dtype=float) - c) ** 2) / (2 * w * w))
    if kind == "indicator":
        # indicator of [0, x0]
        x0 = float(spec["x"])
        return lambda x: (np.asarray(x, dtype=float) <= x0).astype(float)
    if kind == "sum":
        parts = [make_function(s) for s in spec["terms"]]
        return lambda x: sum(f(x) for f in parts)
    if kind == "product":
        parts = [make_function(s) for s in spec["terms"]]

        def prod(x):
            out = np.ones(np.shape(x))
            for f in parts:
                out = out * f(x)
            return out

        return prod
    raise ValueError(f"unknown function kind {kind!r}")


def grid(M: int) -> np.ndarray:
    if M < 1:
        raise ValueError("grid resolution must be positive")
    return np.linspace(0.0, 1.0, M + 1)


def trapezoid_weights(M: int) -> np.ndarray:
    w = np.full(M + 1, 1.0 / M)
    w[0] = w[-1] = 0.5 / M
    return w


def on_grid(spec: FunctionSpec, M: int) -> np.ndarray:
    return np.asarray(make_function(spec)(grid(M)), dtype=float)


def site_positions(N: int, variant: str | None = None) -> np.ndarray:
    """Positions in [0, 1] of the lattice sites ``i = 1..N``.

    Periodic (and the default): ``i / N``.  Open chains sit between
    reservoirs at ``0`` and ``N + 1``, hence ``i / (N + 1)``.  Closed chains use
    cell centres ``(i - 1/2) / N``.
    """
    i = np.arange(1, N + 1, dtype=float)
    if variant in (None, "periodic"):
        return i / N
    if variant == "open":
        return i / (N + 1)
    if variant == "closed":
        return (i - 0.5) / N
    raise ValueError(f"unknown variant {variant!r}")


def lattice_spacing(N: int, variant: str | None = None) -> float:
    return 1.0 / (N + 1) if variant == "open" else 1.0 / N


def on_sites(spec: FunctionSpec, N: int, variant: str | None = None) -> np.ndarray:
    """Values of ``spec`` at :func:`site_positions`."""
    return np.asarray(make_function(spec)(site_positions(N, variant)), dtype=float)


def average(values: np.ndarray) -> float:
    """Trapezoidal mean of grid values on [0, 1]."""
    values = np.asarray(values, dtype=float)
    return float(trapezoid_weights(values.size - 1) @ values)
