"""Continuum side: heat kernels, the Lindbladian triple and the moment hierarchy.

Grid conventions: ``x_k = k / M`` for ``k = 0..M`` with trapezoid weights
``w_k``.  A grid delta ``delta(x_i - x_j)`` is ``M`` on the diagonal
``k_i = k_j`` and zero elsewhere.  This keeps the stencil identity
``(D2 x 1 + 1 x D2 + 2 E) delta = 0`` exact up to the boundary nodes; when a
singular diagonal is integrated, the diagonal node carries weight ``1 / M``
(a full delta mass) rather than its trapezoid weight.

PDE boundary variants:

* ``periodic``: wrap-around stencils.
* ``neumann`` (the continuum limit of the closed chain, alias ``closed``):
  reflection ghosts.
* ``dirichlet``: homogeneous data.
* ``open``: boundary densities ``n_a, n_b``.  A kernel of order ``p`` with an
  argument on the boundary equals ``n`` times the order ``p - 1`` kernel of
  the remaining arguments, taken in cyclic order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .functions import FunctionSpec, grid, on_grid, trapezoid_weights

PDE_VARIANTS = ("periodic", "neumann", "dirichlet", "open")
_ALIASES = {"closed": "neumann"}
KINDS = ("local_moment", "local_cumulant", "auxiliary")


def canonical_variant(variant: str) -> str:
    v = _ALIASES.get(variant, variant)
    if v not in PDE_VARIANTS:
        raise ValueError(f"variant must be one of {PDE_VARIANTS}, got {variant!r}")
    return v


class StabilityError(ValueError):
    """Explicit time step above the stability bound."""


# ---------------------------------------------------------------------------
# grid functions and kernels


@dataclass(eq=False)
class GridFunction:
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size < 2:
            raise ValueError("a grid function needs at least two values")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function has non-finite values")

    @property
    def M(self) -> int:
        return self.values.size - 1

    @classmethod
    def from_spec(cls, spec: FunctionSpec, M: int) -> "GridFunction":
        return cls(on_grid(spec, M))

    def integral(self) -> float:
        return float(trapezoid_weights(self.M) @ self.values)


@dataclass(eq=False)
class Kernel:
    p: int
    M: int
    kind: str
    values: np.ndarray
    variant: str = ""
    t: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kernel kind must be one of {KINDS}")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.M + 1,) * self.p:
            raise ValueError(f"kernel values have shape {self.values.shape}, expected {(self.M + 1,) * self.p}")

    def descriptor(self) -> dict:
        return {"p": self.p, "M": self.M, "kind": self.kind, "variant": self.variant, "t": self.t}


_MAGIC = b"QKRN"


def save_kernel(kernel: Kernel, path: str | Path) -> tuple[Path, Path]:
    """Write ``path`` (binary) and ``path.json`` (descriptor)."""
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<ii", kernel.p, kernel.M))
            fh.write(np.ascontiguousarray(kernel.values, dtype="<f8").tobytes())
        desc = path.with_name(path.name + ".json")
        desc.write_text(json.dumps(kernel.descriptor(), sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write kernel to {path}: {exc}") from exc
    return path, desc


def load_kernel(path: str | Path) -> Kernel:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path} is not a kernel file")
    p, M = struct.unpack("<ii", raw[4:12])
    values = np.frombuffer(raw[12:], dtype="<f8").reshape((M + 1,) * p).copy()
    desc = json.loads(path.with_name(path.name + ".json").read_text())
    if desc["p"] != p or desc["M"] != M:
        raise ValueError(f"descriptor of {path} does not match the binary header")
    return Kernel(p, M, desc["kind"], values, desc.get("variant", ""), float(desc.get("t", 0.0)))


def grid_delta(M: int, variant: str) -> np.ndarray:
    """Diagonal value of the grid delta at each node."""
    canonical_variant(variant)
    return np.full(M + 1, float(M))


# ---------------------------------------------------------------------------
# heat kernels


def required_modes(eps: float, tol: float = 1e-12) -> int:
    """Smallest ``n_max`` with ``exp(-eps (n_max pi)^2) < tol``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return int(math.floor(math.sqrt(-math.log(tol) / eps) / math.pi)) + 1


@dataclass(eq=False)
class HeatKernelSpec:
    variant: str
    eps: float
    M: int
    n_max: int
    kernel: np.ndarray  # symmetric G(x_k, y_l)
    matrix: np.ndarray  # G(x_k, y_l) w_l, acts on grid values

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(f, dtype=float)

    def unit_image(self) -> np.ndarray:
        return self.matrix.sum(axis=1)


def heat_kernel(variant: str, eps: float, M: int, n_max: int | None = None) -> HeatKernelSpec:
    """Materialise the heat kernel at time ``eps`` by its eigenfunction series."""
    variant = canonical_variant(variant)
    if variant == "open":
        variant = "dirichlet"
    need = required_modes(eps)
    if n_max is None:
        n_max = need
    elif n_max < need:
        raise ValueError(f"n_max={n_max} truncates the series too early; need n_max >= {need}")
    x = grid(M)
    n = np.arange(1, n_max + 1)
    if variant == "periodic":
        lam = np.exp(-eps * (2 * np.pi * n) ** 2)
        d = x[:, None] - x[None, :]
        K = 1.0 + 2.0 * np.einsum("n,kln->kl", lam, np.cos(2 * np.pi * d[:, :, None] * n))
    elif variant == "neumann":
        lam = np.exp(-eps * (np.pi * n) ** 2)
        C = np.cos(np.pi * np.outer(x, n))
        K = 1.0 + 2.0 * (C * lam) @ C.T
    else:
        lam = np.exp(-eps * (np.pi * n) ** 2)
        S = np.sin(np.pi * np.outer(x, n))
        S[0] = S[-1] = 0.0
        K = 2.0 * (S * lam) @ S.T
    K = 0.5 * (K + K.T)
    return HeatKernelSpec(variant, eps, M, n_max, K, K * trapezoid_weights(M)[None, :])


# ---------------------------------------------------------------------------
# Lindbladians


def _second_difference(f: np.ndarray, variant: str, axis: int = 0) -> np.ndarray:
    """Second difference divided by h^2 along ``axis`` with the variant closure.

    Dirichlet/open rows on the boundary are zero.
    """
    f = np.moveaxis(np.asarray(f), axis, 0)
    M = f.shape[0] - 1
    out = np.zeros_like(f)
    if variant == "periodic":
        core = f[:M]
        lap = np.roll(core, 1, axis=0) + np.roll(core, -1, axis=0) - 2 * core
        out[:M] = lap
        out[M] = lap[0]
    else:
        out[1:M] = f[2:] + f[:-2] - 2 * f[1:M]
        if variant == "neumann":
            out[0] = 2 * (f[1] - f[0])
            out[M] = 2 * (f[M - 1] - f[M])
    return np.moveaxis(out * M * M, 0, axis)


def _centered_difference(f: np.ndarray, variant: str, axis: int = 0) -> np.ndarray:
    f = np.moveaxis(np.asarray(f), axis, 0)
    M = f.shape[0] - 1
    out = np.zeros_like(f)
    out[1:M] = 0.5 * (f[2:] - f[:-2]) * M
    if variant == "periodic":
        out[0] = 0.5 * (f[1] - f[M - 1]) * M
        out[M] = out[0]
    elif variant in ("dirichlet", "open"):
        out[0] = (f[1] - f[0]) * M
        out[M] = (f[M] - f[M - 1]) * M
    return np.moveaxis(out, 0, axis)


class LindbladSpec:
    """Common interface: ``apply``, ``mul`` and ``unit``."""

    def apply(self, x):
        raise NotImplementedError

    def mul(self, a, b):
        return np.asarray(a) * np.asarray(b)

    def unit(self):
        raise NotImplementedError


@dataclass
class GridLaplacian(LindbladSpec):
    variant: str
    M: int

    def __post_init__(self) -> None:
        self.variant = canonical_variant(self.variant)
        if self.variant == "open":
            self.variant = "dirichlet"

    def apply(self, x):
        return _second_difference(np.asarray(x, dtype=float), self.variant)

    def unit(self):
        return np.ones(self.M + 1)


@dataclass
class FiniteEps(LindbladSpec):
    heat: HeatKernelSpec

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return (self.heat.apply(x) - self.heat.unit_image() * x) / self.heat.eps

    def unit(self):
        return np.ones(self.heat.M + 1)


@dataclass
class KrausFamily(LindbladSpec):
    """``L(X) = sum_r K_r X K_r^* - (K_r K_r^* X + X K_r K_r^*) / 2`` on m x m matrices."""

    ops: list

    def __post_init__(self) -> None:
        self.ops = [np.asarray(k, dtype=complex) for k in self.ops]
        if not self.ops:
            raise ValueError("need at least one Kraus operator")
        m = self.ops[0].shape[0]
        if any(k.shape != (m, m) for k in self.ops):
            raise ValueError("Kraus operators must be square and of equal size")

    @classmethod
    def self_adjoint(cls, ells: Sequence[np.ndarray]) -> "KrausFamily":
        """``K_r = sqrt(2) l_r``, which makes ``L = -sum_r [l_r, [l_r, .]]``."""
        for ell in ells:
            ell = np.asarray(ell)
            if not np.allclose(ell, ell.conj().T):
                raise ValueError("operators must be self-adjoint")
        return cls([math.sqrt(2.0) * np.asarray(ell) for ell in ells])

    def sigma(self, x):
        return sum(k @ x @ k.conj().T for k in self.ops)

    def apply(self, x):
        x = np.asarray(x, dtype=complex)
        s1 = sum(k @ k.conj().T for k in self.ops)
        return self.sigma(x) - 0.5 * (s1 @ x + x @ s1)

    def mul(self, a, b):
        return np.asarray(a) @ np.asarray(b)

    def unit(self):
        return np.eye(self.ops[0].shape[0], dtype=complex)


def apply_L(spec: LindbladSpec, delta):
    return spec.apply(delta)


def apply_L_dressed(spec: LindbladSpec, delta, d1, d2):
    """``(L(d1 D) d2 - L(d1) D d2 + d1 L(D d2) - d1 D L(d2)) / 2``."""
    m, L = spec.mul, spec.apply
    return 0.5 * (m(L(m(d1, delta)), d2) - m(m(L(d1), delta), d2)
                  + m(d1, L(m(delta, d2))) - m(m(d1, delta), L(d2)))


def apply_D_defect(spec: LindbladSpec, d1, d2, delta):
    """``(L(d1 D d2) - d1 L(D d2) - L(d1 D) d2 + d1 L(D) d2) / 2``."""
    m, L = spec.mul, spec.apply
    return 0.5 * (L(m(m(d1, delta), d2)) - m(d1, L(m(delta, d2)))
                  - m(L(m(d1, delta)), d2) + m(m(d1, L(delta)), d2))


def interior_mask(M: int, eps: float) -> np.ndarray:
    """Nodes farther than ``sqrt(eps)`` from both ends."""
    x = grid(M)
    r = math.sqrt(eps)
    return (x > r) & (x < 1 - r)


# ---------------------------------------------------------------------------
# boundary drive for the relaxation mode


@dataclass(frozen=True)
class BoundaryDrive:
    n_a: float
    n_b: float
    nu_a: float = 1.0
    nu_b: float = 1.0
    width: int = 1
    eps: float = 1e-6

    def __post_init__(self) -> None:
        for v in (self.n_a, self.n_b):
            if not 0.0 <= v <= 1.0:
                raise ValueError("boundary densities must lie in [0, 1]")
        if self.width < 1:
            raise ValueError("mollifier width must be at least one cell")
        if min(self.nu_a, self.nu_b) <= 0 or self.eps <= 0:
            raise ValueError("rates and eps must be positive")

    def mollifier(self, M: int) -> tuple[np.ndarray, np.ndarray]:
        """Grid versions of the smoothed boundary deltas at 0 and 1."""
        w = trapezoid_weights(M)
        left = np.zeros(M + 1)
        left[: self.width] = 1.0
        left /= w @ left
        return left, left[::-1].copy()


# ---------------------------------------------------------------------------
# phi hierarchy


def _embed(arr: np.ndarray, axes: Sequence[int], p: int) -> np.ndarray:
    """Broadcastable view of ``arr`` whose k-th dimension sits on ``axes[k]``."""
    axes = list(axes)
    if arr.ndim != len(axes):
        raise ValueError("axes do not match the array rank")
    if not axes:
        return np.asarray(arr).reshape((1,) * p)
    order = np.argsort(axes)
    moved = np.transpose(arr, order)
    shape = [1] * p
    for k, ax in zip(order, sorted(axes)):
        shape[ax] = arr.shape[k]
    return moved.reshape(shape)


def _diag_mask(M: int, p: int, i: int, j: int, dvec: np.ndarray, smoothing: str) -> np.ndarray:
    n = M + 1
    if smoothing == "grid":
        D = np.diag(dvec)
    elif smoothing == "tent":
        D = np.diag(0.5 * dvec) + np.diag(0.25 * dvec[:-1], 1) + np.diag(0.25 * dvec[1:], -1)
    else:
        raise ValueError("delta smoothing must be 'grid' or 'tent'")
    return _embed(D.reshape(n, n), [i, j], p)


def phi_source(phis: Sequence[np.ndarray], p: int, variant: str, smoothing: str = "grid") -> np.ndarray:
    """Delta source of the order ``p`` equation, given ``phis[q] = phi_q`` for q < p.

    ``2 sum_{i<j} delta(x_i - x_j) d phi_{j-i}(x_i..x_{j-1}) d phi_{p-j+i}(x_j..x_{i-1})``,
    each derivative taken in the first argument and the second block read
    cyclically.
    """
    variant = canonical_variant(variant)
    M = phis[1].shape[0] - 1
    dvec = grid_delta(M, variant)
    out = np.zeros((M + 1,) * p)
    for i in range(p):
        for j in range(i + 1, p):
            q1, q2 = j - i, p - (j - i)
            A = _centered_difference(phis[q1], variant, axis=0)
            B = _centered_difference(phis[q2], variant, axis=0)
            axes_a = list(range(i, j))
            axes_b = [(j + k) % p for k in range(q2)]
            out = out + 2.0 * _diag_mask(M, p, i, j, dvec, smoothing) * _embed(A, axes_a, p) * _embed(B, axes_b, p)
    return out


def periodize(f: np.ndarray) -> np.ndarray:
    """Copy of ``f`` with every last slice set equal to the first one."""
    f = np.array(f, dtype=float)
    for a in range(f.ndim):
        sl_last = [slice(None)] * f.ndim
        sl_first = [slice(None)] * f.ndim
        sl_last[a], sl_first[a] = -1, 0
        f[tuple(sl_last)] = f[tuple(sl_first)]
    return f


def _laplacian(f: np.ndarray, variant: str) -> np.ndarray:
    return sum(_second_difference(f, variant, axis=a) for a in range(f.ndim))


def _open_faces(phis: list[np.ndarray], p: int, n_a: float, n_b: float) -> None:
    """Overwrite the boundary faces of ``phis[p]`` with the open-chain data."""
    f = phis[p]
    for j in range(p):
        others = [(j + 1 + k) % p for k in range(p - 1)]
        # face dimensions run over the remaining axes in increasing order
        face = np.transpose(phis[p - 1], [others.index(ax) for ax in sorted(others)])
        for idx, n in ((0, n_a), (-1, n_b)):
            sl = [slice(None)] * p
            sl[j] = idx
            f[tuple(sl)] = n * face


@dataclass
class PhiSolution:
    phis: list  # phis[q] for q = 1..p (index 0 holds the constant 1)
    t: float
    steps: int
    residual: float = math.nan
    variant: str = ""

    def kernel(self, q: int) -> Kernel:
        return Kernel(q, self.phis[q].shape[0] - 1, "auxiliary", self.phis[q], self.variant, self.t)


def _stable_dt(M: int, p: int) -> float:
    return (1.0 / M) ** 2 / (2 * p)


def evolve_phi(initial: Sequence[np.ndarray], variant: str, T: float, dt: float | None = None,
               boundary: BoundaryDrive | None = None, method: str = "euler",
               mode: str = "direct", steady: bool = False, tol: float = 1e-9,
               max_time: float = 50.0, smoothing: str = "grid") -> PhiSolution:
    """Evolve ``phi_1..phi_p`` (``p = len(initial) <= 3``).

    ``mode="direct"`` imposes the open boundary data on the faces.
    ``mode="relaxation"`` uses Neumann closure plus the singular boundary drift
    ``(nu / eps) delta_eps(x_j) (n phi_{p-1}(others) - phi_p)`` for every
    argument, integrated exactly over each step.  With ``steady=True`` the
    evolution runs until the steady residual drops below ``tol`` (``T`` is then
    ignored in favour of ``max_time``).
    """
    variant = canonical_variant(variant)
    p = len(initial)
    if not 1 <= p <= 3:
        raise ValueError("evolve_phi supports 1 <= p <= 3")
    phis: list[np.ndarray] = [np.ones(())] + [np.array(a, dtype=float) for a in initial]
    M = phis[1].shape[0] - 1
    for q in range(1, p + 1):
        if phis[q].shape != (M + 1,) * q:
            raise ValueError(f"phi_{q} has shape {phis[q].shape}, expected {(M + 1,) * q}")
    bound = _stable_dt(M, p)
    if dt is None:
        dt = 0.9 * bound
    if method == "euler" and dt > bound * (1 + 1e-12):
        raise StabilityError(f"dt={dt:.3e} exceeds the explicit bound {bound:.3e}")
    if method not in ("euler", "rk4"):
        raise ValueError("method must be 'euler' or 'rk4'")
    if variant == "open" and boundary is None:
        raise ValueError("the open variant needs boundary data")
    if mode not in ("direct", "relaxation"):
        raise ValueError("mode must be 'direct' or 'relaxation'")
    relax = mode == "relaxation"
    if relax and variant != "open":
        raise ValueError("relaxation mode applies to the open variant")
    stencil = "neumann" if relax else variant

    def project(state: list[np.ndarray]) -> None:
        if variant == "open" and not relax:
            for q in range(1, p + 1):
                _open_faces(state, q, boundary.n_a, boundary.n_b)
        if variant == "periodic":
            for q in range(1, p + 1):
                f = state[q]
                for a in range(q):
                    idx_last = [slice(None)] * q
                    idx_first = [slice(None)] * q
                    idx_last[a] = -1
                    idx_first[a] = 0
                    f[tuple(idx_last)] = f[tuple(idx_first)]

    def rhs(state: list[np.ndarray]) -> list[np.ndarray]:
        out = [np.zeros(())]
        for q in range(1, p + 1):
            r = _laplacian(state[q], stencil)
            if q >= 2:
                r = r + phi_source(state, q, stencil, smoothing)
            out.append(r)
        return out

    if relax:
        left, right = boundary.mollifier(M)
        rate_a = boundary.nu_a / boundary.eps * left
        rate_b = boundary.nu_b / boundary.eps * right

    def relax_step(state: list[np.ndarray], h: float) -> None:
        for q in range(1, p + 1):
            f = state[q]
            for j in range(q):
                others = [(j + 1 + k) % q for k in range(q - 1)]
                lower = _embed(state[q - 1], others, q) if q > 1 else np.asarray(state[0])
                for n, rate in ((boundary.n_a, rate_a), (boundary.n_b, rate_b)):
                    decay = _embed(np.exp(-rate * h), [j], q)
                    target = n * lower
                    f[...] = target + (f - target) * decay

    project(phis)
    t, nsteps, residual = 0.0, 0, math.nan
    horizon = max_time if steady else T
    check_every = max(1, int(0.01 / dt))
    while t < horizon - 1e-15:
        h = dt if steady else min(dt, horizon - t)
        if method == "euler":
            k1 = rhs(phis)
            new = [phis[0]] + [phis[q] + h * k1[q] for q in range(1, p + 1)]
        else:
            def axpy(base, k, c):
                s = [base[0]] + [base[q] + c * k[q] for q in range(1, p + 1)]
                project(s)
                return s
            k1 = rhs(phis)
            k2 = rhs(axpy(phis, k1, h / 2))
            k3 = rhs(axpy(phis, k2, h / 2))
            k4 = rhs(axpy(phis, k3, h))
            new = [phis[0]] + [phis[q] + h / 6 * (k1[q] + 2 * k2[q] + 2 * k3[q] + k4[q]) for q in range(1, p + 1)]
        if relax:
            relax_step(new, h)
        project(new)
        phis = new
        t += h
        nsteps += 1
        if steady and nsteps % check_every == 0:
            residual = steady_residual(phis, variant, boundary, relax, smoothing)
            if residual < tol:
                break
    if steady and not residual < tol:
        residual = steady_residual(phis, variant, boundary, relax, smoothing)
        if not residual < tol:
            raise RuntimeError(f"steady iteration did not converge (residual {residual:.3e})")
    return PhiSolution(phis, t, nsteps, residual, variant)


def steady_residual(phis, variant, boundary=None, relax=False, smoothing="grid") -> float:
    """Max over orders of the steady residual on the nodes that are not fixed."""
    p = len(phis) - 1
    stencil = "neumann" if relax else variant
    worst = 0.0
    for q in range(1, p + 1):
        r = _laplacian(phis[q], stencil)
        if q >= 2:
            r = r + phi_source(phis, q, stencil, smoothing)
        if variant == "open":
            inner = tuple(slice(1, -1) for _ in range(q))
            if relax:
                # nodes carrying the boundary drift are excluded
                w = boundary.width
                inner = tuple(slice(w, -w) for _ in range(q))
            r = r[inner]
        worst = max(worst, float(np.max(np.abs(r))) if r.size else 0.0)
    return worst


def product_initial(phi0: FunctionSpec, M: int, p: int) -> list[np.ndarray]:
    """``phi_q(0) = phi0(x_1) ... phi0(x_q)``: deterministic diagonal initial data."""
    f = on_grid(phi0, M)
    out = []
    for q in range(1, p + 1):
        arr = np.ones((M + 1,) * q)
        for a in range(q):
            arr = arr * _embed(f, [a], q)
        out.append(arr)
    return out


def phi_to_g(phis: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Local free cumulants from the auxiliary kernels (orders up to 3)."""
    p = len(phis) - 1
    g = [np.ones(())]
    if p >= 1:
        g.append(phis[1].copy())
    if p >= 2:
        g.append(phis[2] - np.multiply.outer(phis[1], phis[1]))
    if p >= 3:
        g1, g2 = phis[1], g[2]
        e = lambda a, axes: _embed(a, axes, 3)
        g3 = (phis[3] - e(g2, [0, 1]) * e(g1, [2]) - e(g2, [1, 2]) * e(g1, [0])
              - e(g2, [0, 2]) * e(g1, [1]) - e(g1, [0]) * e(g1, [1]) * e(g1, [2]))
        g.append(g3)
    if p > 3:
        raise ValueError("phi_to_g supports orders up to 3")
    return g


# ---------------------------------------------------------------------------
# local-moment route


def _mixed_derivative(f: np.ndarray, variant: str) -> np.ndarray:
    """``(D+ x D+ + D- x D-) / 2`` on a two-dimensional array."""
    M = f.shape[0] - 1
    if variant == "periodic":
        core = f[:M, :M]
        pp = np.roll(np.roll(core, -1, 0), -1, 1) - np.roll(core, -1, 0) - np.roll(core, -1, 1) + core
        mm = np.roll(np.roll(core, 1, 0), 1, 1) - np.roll(core, 1, 0) - np.roll(core, 1, 1) + core
        out = np.zeros_like(f)
        out[:M, :M] = 0.5 * (pp + mm) * M * M
        out[M, :] = out[0, :]
        out[:, M] = out[:, 0]
        return out
    if variant == "neumann":
        ext = np.pad(f, 1, mode="reflect")
    else:
        ext = np.pad(f, 1, mode="constant")
    c = ext[1:-1, 1:-1]
    pp = ext[2:, 2:] - ext[2:, 1:-1] - ext[1:-1, 2:] + c
    mm = ext[:-2, :-2] - ext[:-2, 1:-1] - ext[1:-1, :-2] + c
    return 0.5 * (pp + mm) * M * M


@dataclass
class LocalMomentSolution:
    g1: np.ndarray
    g2: np.ndarray
    t: float
    steps: int
    residual: float = math.nan
    variant: str = ""

    def kernel(self, q: int) -> Kernel:
        arr = self.g1 if q == 1 else self.g2
        return Kernel(q, self.g1.size - 1, "local_moment", arr, self.variant, self.t)


def local_moment_rhs(g1: np.ndarray, g2: np.ndarray, variant: str) -> tuple[np.ndarray, np.ndarray]:
    M = g1.size - 1
    if variant == "periodic":
        g1, g2 = periodize(g1), periodize(g2)
    dvec = grid_delta(M, variant)
    r1 = _second_difference(g1, variant)
    source = np.diag(dvec * g1 * g1)
    r2 = _laplacian(g2, variant) + 2.0 * _mixed_derivative(source, variant)
    return r1, r2


def evolve_local_moments(g1: np.ndarray, g2: np.ndarray, variant: str, T: float,
                         dt: float | None = None, boundary: BoundaryDrive | None = None,
                         steady: bool = False, tol: float = 1e-9, max_time: float = 50.0) -> LocalMomentSolution:
    """Evolve the local moments of orders one and two by explicit Euler.

    The order-two kernel contains the singular diagonal part
    ``delta(x - y) g_1(x)^2``, represented with the grid delta.  Open data: the
    order-two kernel vanishes on the boundary except at the two corners, where
    it equals ``n^2`` times the grid delta.
    """
    variant = canonical_variant(variant)
    g1 = np.array(g1, dtype=float)
    g2 = np.array(g2, dtype=float)
    M = g1.size - 1
    if g2.shape != (M + 1, M + 1):
        raise ValueError("g2 must be an (M+1) x (M+1) array")
    bound = _stable_dt(M, 2)
    dt = 0.9 * bound if dt is None else dt
    if dt > bound * (1 + 1e-12):
        raise StabilityError(f"dt={dt:.3e} exceeds the explicit bound {bound:.3e}")
    if variant == "open" and boundary is None:
        raise ValueError("the open variant needs boundary data")
    dvec = grid_delta(M, variant)

    def project(a1, a2):
        if variant in ("open", "dirichlet"):
            na, nb = (boundary.n_a, boundary.n_b) if boundary is not None else (0.0, 0.0)
            a1[0], a1[-1] = na, nb
            a2[0, :] = a2[-1, :] = a2[:, 0] = a2[:, -1] = 0.0
            a2[0, 0] = na * na * dvec[0]
            a2[-1, -1] = nb * nb * dvec[-1]
        elif variant == "periodic":
            a1[-1] = a1[0]
            a2[-1, :] = a2[0, :]
            a2[:, -1] = a2[:, 0]

    project(g1, g2)
    t, n, residual = 0.0, 0, math.nan
    horizon = max_time if steady else T
    check_every = max(1, int(0.01 / dt))
    while t < horizon - 1e-15:
        h = dt if steady else min(dt, horizon - t)
        r1, r2 = local_moment_rhs(g1, g2, variant)
        g1 = g1 + h * r1
        g2 = g2 + h * r2
        project(g1, g2)
        t += h
        n += 1
        if steady and n % check_every == 0:
            residual = _local_residual(g1, g2, variant)
            if residual < tol:
                break
    if steady and not residual < tol:
        raise RuntimeError(f"steady iteration did not converge (residual {residual:.3e})")
    return LocalMomentSolution(g1, g2, t, n, residual, variant)


def _local_residual(g1, g2, variant) -> float:
    r1, r2 = local_moment_rhs(g1, g2, variant)
    if variant in ("open", "dirichlet"):
        r1, r2 = r1[1:-1], r2[1:-1, 1:-1]
    return max(float(np.max(np.abs(r1))), float(np.max(np.abs(r2))))


def local_moments_from_profile(phi0: FunctionSpec, M: int, variant: str) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic diagonal initial data: ``g1 = phi0``, ``g2 = delta(x - y) phi0^2``."""
    f = on_grid(phi0, M)
    g2 = np.diag(grid_delta(M, variant) * f * f)
    if canonical_variant(variant) == "periodic":
        f, g2 = periodize(f), periodize(g2)
    return f, g2


# ---------------------------------------------------------------------------
# assembly helpers shared by the two routes


def c2_from_phi(phis: Sequence[np.ndarray], delta: np.ndarray) -> np.ndarray:
    """``C_2[D](x) = int g_2(x, y) D(y) dy + g_1(x)^2 D(x)`` on the grid."""
    g = phi_to_g(phis)
    M = g[1].size - 1
    w = trapezoid_weights(M)
    return g[2] @ (w * delta) + g[1] ** 2 * delta


def c2_from_local_moments(g2: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """``int frak_g_2(x, y) D(y) dy``; the diagonal node counts as a full delta mass."""
    M = g2.shape[0] - 1
    w = trapezoid_weights(M)
    diag = np.diagonal(g2)
    return g2 @ (w * delta) + (1.0 / M - w) * diag * delta


def global_moments(phis: Sequence[np.ndarray]) -> dict[str, float]:
    """``tau_1 = int phi_1`` and ``tau_2 = int int g_2 + int g_1^2``."""
    M = phis[1].size - 1
    w = trapezoid_weights(M)
    out = {"tau1": float(w @ phis[1])}
    if len(phis) > 2:
        g2 = phis[2] - np.multiply.outer(phis[1], phis[1])
        out["tau2"] = float(w @ g2 @ w + w @ phis[1] ** 2)
    return out
