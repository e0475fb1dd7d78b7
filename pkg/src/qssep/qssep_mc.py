"""Monte Carlo for the two-point matrix of the discrete process.

Two integrators are available.

``exact``
    One step draws one complex Gaussian increment per edge, builds the
    Hermitian matrix ``dh`` and conjugates ``G`` by ``exp(i dh)`` computed from
    an eigendecomposition.  The open chain then receives one explicit Euler
    step of the boundary drift.  This is the reference update.

``brickwork``
    One sweep applies random 2x2 unitaries on the even bonds, then on the odd
    bonds, then relaxes the two boundary sites exactly.  The gate law is
    chosen so that each bond reproduces the second-moment propagator of the
    continuous-time dynamics over a bond time ``tau``; ``tau`` is picked so
    that one sweep advances long-wavelength profiles by exactly ``dt``
    microscopic time units.  This requires ``0 < dt < 1``.  It is an order of
    magnitude cheaper per unit time and is the integrator for large runs.

Microscopic time ``s`` and diffusive time ``t`` are related by ``t = s / N^2``.
Sites are numbered ``i = 1..N`` with position ``x_i = i / N``; arrays are
0-based, so site ``i`` lives at index ``i - 1``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .functions import FunctionSpec, lattice_spacing, on_sites, site_positions
from .kernels import get_kernel, kernel_name

VARIANTS = ("periodic", "closed", "open")
INTEGRATORS = ("exact", "brickwork")
DEFAULT_RESOURCE_CAP = 5e12
BLOCK = 256  # steps per counter block of a trajectory's noise stream


class ResourceLimitError(RuntimeError):
    """The requested ensemble exceeds the configured work cap."""


# ---------------------------------------------------------------------------
# basic types


@dataclass(frozen=True)
class BoundaryParams:
    n_a: float
    n_b: float
    nu_a: float = 1.0
    nu_b: float = 1.0

    def __post_init__(self) -> None:
        for name in ("n_a", "n_b"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not a density in [0, 1]")
        for name in ("nu_a", "nu_b"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def linear_profile(self, x):
        return self.n_a + np.asarray(x, dtype=float) * (self.n_b - self.n_a)


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")


def check_hermitian(G: np.ndarray, tol: float = 1e-10) -> None:
    G = np.asarray(G)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"two-point matrix must be square, got shape {G.shape}")
    scale = max(1.0, float(np.max(np.abs(G)))) if G.size else 1.0
    err = float(np.max(np.abs(G - G.conj().T))) if G.size else 0.0
    if err > tol * scale:
        raise ValueError(f"two-point matrix is not Hermitian (deviation {err:.3e})")


def hermiticity_error(G: np.ndarray) -> float:
    return float(np.max(np.abs(G - G.conj().T)))


def diagonal_matrix(profile: FunctionSpec, N: int, variant: str | None = None) -> np.ndarray:
    """Initial two-point matrix ``diag(phi0(x_i))`` at the site positions of ``variant``."""
    return np.diag(on_sites(profile, N, variant).astype(complex))


def edges(variant: str, N: int) -> list[tuple[int, int]]:
    """Nearest-neighbour edges (0-based) of the variant."""
    _check_variant(variant)
    if N < 2:
        raise ValueError("need N >= 2")
    out = [(j, j + 1) for j in range(N - 1)]
    if variant == "periodic":
        out.append((N - 1, 0))
    return out


@dataclass(frozen=True, eq=False)
class NoiseIncrement:
    """One complex Brownian increment per edge."""

    variant: str
    N: int
    values: np.ndarray

    def matrix(self) -> np.ndarray:
        dh = np.zeros((self.N, self.N), dtype=complex)
        for (i, j), v in zip(edges(self.variant, self.N), self.values):
            lo, hi = min(i, j), max(i, j)
            dh[lo, hi] += v
            dh[hi, lo] += np.conj(v)
        return dh


def sample_increment(variant: str, N: int, dt: float, rng: np.random.Generator) -> NoiseIncrement:
    """Draw ``dW_j`` with independent real and imaginary parts of variance ``dt/2``."""
    m = len(edges(variant, N))
    z = rng.standard_normal((2, m))
    return NoiseIncrement(variant, N, math.sqrt(dt / 2) * (z[0] + 1j * z[1]))


def _increment_from_normals(variant: str, N: int, dt: float, z: np.ndarray) -> NoiseIncrement:
    return NoiseIncrement(variant, N, math.sqrt(dt / 2) * (z[0] + 1j * z[1]))


def boundary_drift(G: np.ndarray, boundary: BoundaryParams, dt: float) -> np.ndarray:
    """One explicit Euler step of the boundary injection/extraction drift."""
    out = G.copy()
    N = G.shape[0]
    for p, n, nu in ((0, boundary.n_a, boundary.nu_a), (N - 1, boundary.n_b, boundary.nu_b)):
        out[p, :] -= 0.5 * nu * dt * G[p, :]
        out[:, p] -= 0.5 * nu * dt * G[:, p]
        out[p, p] += nu * n * dt
    return out


def step(G: np.ndarray, dh: NoiseIncrement, dt: float, variant: str,
         boundary: BoundaryParams | None = None) -> np.ndarray:
    """Exact unitary conjugation by ``exp(i dh)``, then the boundary drift."""
    _check_variant(variant)
    G = np.asarray(G)
    check_hermitian(G)
    if G.shape != (dh.N, dh.N) or dh.variant != variant:
        raise ValueError("increment does not match the matrix size or variant")
    if (boundary is not None) != (variant == "open"):
        raise ValueError("boundary parameters are required for, and only for, the open variant")
    lam, V = np.linalg.eigh(dh.matrix())
    U = (V * np.exp(1j * lam)) @ V.conj().T
    out = U @ G @ U.conj().T
    out = 0.5 * (out + out.conj().T)
    if boundary is not None:
        if max(boundary.nu_a, boundary.nu_b) * dt > 0.2:
            raise ValueError("explicit boundary drift needs nu * dt <= 0.2")
        out = boundary_drift(out, boundary, dt)
    return out


def probe_index(x: float, N: int, variant: str | None = None) -> int:
    """0-based index of the site nearest to ``x``; ties go to the right."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"probe position {x} is outside [0, 1]")
    pos = site_positions(N, variant)
    return int(np.argmin(np.abs(pos - x - 1e-12)))


def dressed_moment(G: np.ndarray, deltas: Sequence[FunctionSpec], x: float,
                   variant: str | None = None) -> complex:
    """``(G D_1 G ... D_p G)_{ii}`` with ``D_k = diag(Delta_k(x_j))``."""
    N = G.shape[0]
    i = probe_index(x, N, variant)
    v = G[:, i]
    for spec in reversed(list(deltas)):
        v = G @ (on_sites(spec, N, variant) * v)
    return complex(v[i])


def loop_moment(G: np.ndarray, ds: Sequence[FunctionSpec], variant: str | None = None) -> complex:
    """``tr(D_0 G D_1 G ... D_p G) / N`` for ``p + 1`` test functions."""
    N = G.shape[0]
    M = np.diag(on_sites(ds[0], N, variant)).astype(complex)
    for spec in ds[1:]:
        M = (M @ G) * on_sites(spec, N, variant)[None, :]
    return complex(np.trace(M @ G) / N)


# ---------------------------------------------------------------------------
# brickwork parameters


@dataclass(frozen=True)
class BrickworkParams:
    a: float
    delta: float
    tau: float

    @classmethod
    def from_dt(cls, dt: float) -> "BrickworkParams":
        if not 0.0 < dt < 1.0:
            raise ValueError("the brickwork integrator needs 0 < dt < 1")
        tau = math.atanh(dt)
        a = 0.5 * (1.0 - math.exp(-2 * tau))
        b = (1.0 - math.exp(-6 * tau)) / 6.0
        var = a - b - a * a
        return cls(a, math.sqrt(max(var, 0.0)), tau)

    @classmethod
    def from_tau(cls, tau: float) -> "BrickworkParams":
        return cls.from_dt(math.tanh(tau))

    @classmethod
    def corrector(cls, dt: float) -> "BrickworkParams":
        """Extra even layer that removes the even/odd stagger at observation time.

        After a sweep, a linear density profile carries the alternating
        pattern ``-(dt/2) * slope * (-1)^j``.  An even layer with mixing
        ``a' = dt / (2 (1 + dt))`` cancels it exactly in the bulk.
        """
        a_target = dt / (2.0 * (1.0 + dt))
        return cls.from_tau(-0.5 * math.log(1.0 - 2.0 * a_target))


# ---------------------------------------------------------------------------
# noise streams


class NoiseStream:
    """Noise of one trajectory as a pure function of (seed, trajectory, step).

    Steps are grouped in blocks of ``BLOCK``; block ``b`` is drawn from a
    Philox generator whose key comes from the seed and trajectory index and
    whose counter starts at ``b``.
    """

    def __init__(self, seed: int, trajectory: int | tuple, shape: tuple[int, ...], kind: str):
        key = trajectory if isinstance(trajectory, tuple) else (trajectory,)
        ss = np.random.SeedSequence(seed, spawn_key=key)
        self._key = ss.generate_state(2, dtype=np.uint64)
        self.shape = shape
        self.kind = kind
        self._cached = (-1, None)

    def _block(self, b: int) -> np.ndarray:
        if self._cached[0] == b:
            return self._cached[1]
        bitgen = np.random.Philox(key=self._key, counter=np.array([0, 0, b, 0], dtype=np.uint64))
        rng = np.random.Generator(bitgen)
        size = (BLOCK,) + self.shape
        data = rng.random(size) if self.kind == "uniform" else rng.standard_normal(size)
        self._cached = (b, data)
        return data

    def take(self, start: int, stop: int) -> np.ndarray:
        parts = []
        s = start
        while s < stop:
            b = s // BLOCK
            lo = s - b * BLOCK
            hi = min(BLOCK, stop - b * BLOCK)
            parts.append(self._block(b)[lo:hi])
            s = b * BLOCK + hi
        if not parts:
            return np.empty((0,) + self.shape)
        return np.ascontiguousarray(np.concatenate(parts, axis=0))


# ---------------------------------------------------------------------------
# integrators


class Integrator:
    def __init__(self, variant: str, N: int, dt: float, boundary: BoundaryParams | None,
                 seed: int, trajectory: int):
        _check_variant(variant)
        if (boundary is not None) != (variant == "open"):
            raise ValueError("boundary parameters are required for, and only for, the open variant")
        self.variant, self.N, self.dt, self.boundary = variant, N, dt, boundary
        self.seed, self.trajectory = seed, trajectory

    def advance(self, G: np.ndarray, start: int, stop: int) -> np.ndarray:
        raise NotImplementedError

    def observe(self, G: np.ndarray, step: int) -> np.ndarray:
        """The matrix on which observables are evaluated at ``step``."""
        return G


class ExactIntegrator(Integrator):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        if self.boundary is not None and max(self.boundary.nu_a, self.boundary.nu_b) * self.dt > 0.2:
            raise ValueError("explicit boundary drift needs nu * dt <= 0.2")
        self.stream = NoiseStream(self.seed, self.trajectory, (2, len(edges(self.variant, self.N))), "normal")

    def advance(self, G, start, stop):
        z = self.stream.take(start, stop)
        for k in range(stop - start):
            dh = _increment_from_normals(self.variant, self.N, self.dt, z[k])
            G = step(G, dh, self.dt, self.variant, self.boundary)
        return G


class BrickworkIntegrator(Integrator):
    def __init__(self, *args, kernel: str | None = None, corrector: bool = True, **kwargs):
        super().__init__(*args, **kwargs)
        if self.variant == "periodic" and self.N % 2:
            raise ValueError("the brickwork integrator needs even N for the periodic variant")
        self.params = BrickworkParams.from_dt(self.dt)
        self.kernel = get_kernel(kernel)
        nbonds = self.N if self.variant == "periodic" else self.N - 1
        self.stream = NoiseStream(self.seed, self.trajectory, (2, nbonds), "uniform")
        self.corrector = BrickworkParams.corrector(self.dt) if corrector else None
        # spawn key (trajectory, 1) keeps the observation noise apart from the dynamics
        self._obs_stream = NoiseStream(self.seed, (self.trajectory, 1), (2, nbonds), "uniform")
        b = self.boundary
        if b is not None:
            self._relax = (b.n_a, b.n_b, math.exp(-b.nu_a * self.dt), math.exp(-0.5 * b.nu_a * self.dt),
                           math.exp(-b.nu_b * self.dt), math.exp(-0.5 * b.nu_b * self.dt))
        else:
            self._relax = (0.0, 0.0, 1.0, 1.0, 1.0, 1.0)

    def advance(self, G, start, stop):
        if stop <= start:
            return G
        G = np.ascontiguousarray(G, dtype=complex)
        rnd = self.stream.take(start, stop)
        self.kernel.sweeps(G, rnd, self.params.a, self.params.delta, self.variant == "periodic",
                           self.variant == "open", *self._relax)
        return G

    def observe(self, G, step):
        if self.corrector is None:
            return G
        out = np.array(G, dtype=complex, order="C", copy=True)
        rnd = self._obs_stream.take(step, step + 1)[0]
        self.kernel.layer(out, rnd, self.corrector.a, self.corrector.delta,
                          self.variant == "periodic", 0)
        return out


def _mix_layer(n: np.ndarray, first: int, a: float, periodic: bool) -> None:
    i0 = np.arange(first, n.size if periodic else n.size - 1, 2)
    i1 = (i0 + 1) % n.size
    x, y = n[i0].copy(), n[i1].copy()
    n[i0] = (1.0 - a) * x + a * y
    n[i1] = a * x + (1.0 - a) * y


def brickwork_mean_density(config: "EnsembleConfig", step: int) -> np.ndarray:
    """Exact ensemble mean of the site densities under the brickwork integrator.

    A gate moves a fraction ``s^2`` of the density difference across its bond
    and the mean of ``s^2`` is ``a``, so the mean obeys a deterministic linear
    recursion.  Includes the observation layer when the corrector is on.
    """
    if config.integrator != "brickwork":
        raise ValueError("the closed-form mean is available for the brickwork integrator only")
    periodic = config.variant == "periodic"
    n = on_sites(config.initial, config.N, config.variant).astype(float)
    a = BrickworkParams.from_dt(config.dt).a
    b = config.boundary
    for _ in range(step):
        _mix_layer(n, 0, a, periodic)
        _mix_layer(n, 1, a, periodic)
        if b is not None:
            n[0] = b.n_a + (n[0] - b.n_a) * math.exp(-b.nu_a * config.dt)
            n[-1] = b.n_b + (n[-1] - b.n_b) * math.exp(-b.nu_b * config.dt)
    if config.corrector:
        _mix_layer(n, 0, BrickworkParams.corrector(config.dt).a, periodic)
    return n


def make_integrator(name: str, variant: str, N: int, dt: float, boundary: BoundaryParams | None,
                    seed: int, trajectory: int, kernel: str | None = None,
                    corrector: bool = True) -> Integrator:
    if name == "exact":
        return ExactIntegrator(variant, N, dt, boundary, seed, trajectory)
    if name == "brickwork":
        return BrickworkIntegrator(variant, N, dt, boundary, seed, trajectory, kernel=kernel,
                                   corrector=corrector)
    raise ValueError(f"integrator must be one of {INTEGRATORS}, got {name!r}")


# ---------------------------------------------------------------------------
# observables


def _steps_tuple(steps) -> tuple[int, ...] | None:
    if steps is None:
        return None
    out = tuple(int(s) for s in steps)
    if any(s < 0 for s in out):
        raise ValueError("record steps must be non-negative")
    return out


@dataclass(frozen=True)
class MomentObservable:
    """Dressed moment ``(G D_1 G ... D_p G)_{ii}`` at each probe.

    ``steps`` lists the record steps (default: the final step).  With
    ``average`` the per-trajectory sample is the mean over those steps.
    """

    name: str
    deltas: tuple = ()
    probes: tuple = (0.5,)
    steps: tuple | None = None
    average: bool = False
    kind = "moment"


@dataclass(frozen=True)
class LoopObservable:
    """Global loop ``tr(D_0 G D_1 G ... D_p G) / N``."""

    name: str
    functions: tuple = (1.0,)
    steps: tuple | None = None
    average: bool = False
    kind = "loop"


@dataclass(frozen=True)
class TwoPointObservable:
    """Connected two-point value ``(E|G_ij|^2 - |E G_ij|^2) / h`` at positions (x, y).

    ``h`` is the lattice spacing of the site embedding (``1/N`` periodic and
    closed, ``1/(N+1)`` open).
    """

    name: str
    pairs: tuple = ((0.25, 0.75),)
    steps: tuple | None = None
    average: bool = False
    kind = "two_point"


@dataclass(frozen=True)
class TwoTimeObservable:
    """``(G_{s+g} D G_s)_{ii}`` for each gap ``g``, averaged over the origins ``s``."""

    name: str
    delta: FunctionSpec = 1.0
    probes: tuple = (0.5,)
    origins: tuple = (0,)
    gaps: tuple = (1,)
    kind = "two_time"


Observable = MomentObservable | LoopObservable | TwoPointObservable | TwoTimeObservable


@dataclass(frozen=True)
class EnsembleConfig:
    variant: str
    N: int
    dt: float
    steps: int
    trajectories: int
    seed: int = 0
    initial: FunctionSpec = 0.5
    boundary: BoundaryParams | None = None
    observables: tuple = ()
    integrator: str = "exact"
    kernel: str | None = None
    corrector: bool = True
    resource_cap: float = DEFAULT_RESOURCE_CAP

    def __post_init__(self) -> None:
        _check_variant(self.variant)
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.trajectories < 1:
            raise ValueError("trajectories must be at least 1")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if (self.boundary is not None) != (self.variant == "open"):
            raise ValueError("boundary parameters are required for, and only for, the open variant")
        for ob in self.observables:
            for x in _probe_positions(ob):
                if not 0.0 <= x <= 1.0:
                    raise ValueError(f"observable {ob.name}: probe {x} outside [0, 1]")
            for s in _record_steps(ob, self.steps):
                if s > self.steps:
                    raise ValueError(f"observable {ob.name}: record step {s} beyond {self.steps}")

    def diffusive_time(self, step: int) -> float:
        return step * self.dt * lattice_spacing(self.N, self.variant) ** 2

    @property
    def work(self) -> float:
        return float(self.N) ** 2 * max(self.steps, 1) * self.trajectories


def _probe_positions(ob) -> list[float]:
    if isinstance(ob, TwoPointObservable):
        return [v for p in ob.pairs for v in p]
    if isinstance(ob, LoopObservable):
        return []
    return list(ob.probes)


def _record_steps(ob, final: int) -> list[int]:
    if isinstance(ob, TwoTimeObservable):
        return sorted({s for s in ob.origins} | {s + g for s in ob.origins for g in ob.gaps})
    steps = _steps_tuple(ob.steps)
    return [final] if steps is None else sorted(set(steps))


# ---------------------------------------------------------------------------
# ensemble


@dataclass
class EstimateRow:
    observable: str
    kind: str
    step: int
    t: float
    x: float
    y: float
    mean_re: float
    mean_im: float
    stderr_re: float
    stderr_im: float
    count: int
    label: str = ""

    @property
    def mean(self) -> complex:
        return complex(self.mean_re, self.mean_im)


@dataclass
class MomentEstimates:
    rows: list[EstimateRow]
    config: EnsembleConfig
    kernel: str = ""
    samples: dict = field(default_factory=dict, repr=False)

    def find(self, observable: str, **match) -> list[EstimateRow]:
        out = []
        for r in self.rows:
            if r.observable != observable:
                continue
            if all(abs(getattr(r, k) - v) < 1e-12 if isinstance(v, float) else getattr(r, k) == v
                   for k, v in match.items()):
                out.append(r)
        return out


def _trajectory(config: EnsembleConfig, traj: int) -> dict[str, np.ndarray]:
    N = config.N
    G = diagonal_matrix(config.initial, N, config.variant)
    integ = make_integrator(config.integrator, config.variant, N, config.dt, config.boundary,
                            config.seed, traj, config.kernel, config.corrector)
    events: set[int] = set()
    for ob in config.observables:
        events.update(_record_steps(ob, config.steps))
    sites = {}
    for ob in config.observables:
        for x in _probe_positions(ob):
            sites[x] = probe_index(x, N, config.variant)
    # per-observable accumulation lists
    acc: dict[str, list] = {ob.name: [] for ob in config.observables}
    stored: dict[tuple[str, int], np.ndarray] = {}  # two-time: (name, origin) -> columns
    current = 0
    for s in sorted(events):
        G = integ.advance(G, current, s)
        current = s
        G_obs = integ.observe(G, s)
        for ob in config.observables:
            if isinstance(ob, TwoTimeObservable):
                idx = [sites[x] for x in ob.probes]
                if s in ob.origins:
                    stored[(ob.name, s)] = on_sites(ob.delta, N, config.variant)[:, None] * G_obs[:, idx]
                for o in ob.origins:
                    for gi, g in enumerate(ob.gaps):
                        if o + g == s:
                            cols = stored[(ob.name, o)]
                            vals = np.einsum("pk,kp->p", G_obs[idx, :], cols)
                            acc[ob.name].append((gi, o, vals))
                continue
            if s not in _record_steps(ob, config.steps):
                continue
            if isinstance(ob, MomentObservable):
                vals = np.array([dressed_moment(G_obs, ob.deltas, x, config.variant) for x in ob.probes])
            elif isinstance(ob, LoopObservable):
                vals = np.array([loop_moment(G_obs, ob.functions, config.variant)])
            else:
                ij = [(sites[x], sites[y]) for x, y in ob.pairs]
                g = np.array([G_obs[i, j] for i, j in ij])
                vals = np.concatenate([np.abs(g) ** 2 / lattice_spacing(N, config.variant), g])
            acc[ob.name].append(vals)
    out: dict[str, np.ndarray] = {}
    for ob in config.observables:
        if isinstance(ob, TwoTimeObservable):
            arr = np.zeros((len(ob.gaps), len(ob.probes)), dtype=complex)
            for gi, _o, vals in acc[ob.name]:
                arr[gi] += vals
            out[ob.name] = arr / len(ob.origins)
        else:
            arr = np.array(acc[ob.name])  # (n_steps, values)
            out[ob.name] = arr.mean(axis=0, keepdims=True) if ob.average else arr
    return out


def _stats(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    if n < 2:
        return mean, np.zeros_like(mean.real) + 0j
    se_re = samples.real.std(axis=0, ddof=1) / math.sqrt(n)
    se_im = samples.imag.std(axis=0, ddof=1) / math.sqrt(n)
    return mean, se_re + 1j * se_im


def run_ensemble(config: EnsembleConfig, threads: int = 1, keep_samples: bool = False) -> MomentEstimates:
    """Average observables over independent trajectories.

    Trajectory ``k`` uses the noise stream of ``(config.seed, k)``, so the
    samples do not depend on ``threads``; the reduction runs in trajectory
    order, which makes the result bit-identical for any thread count.
    """
    if config.work > config.resource_cap:
        raise ResourceLimitError(
            f"N^2 * steps * trajectories = {config.work:.3e} exceeds the cap {config.resource_cap:.3e}"
        )
    if threads < 1:
        raise ValueError("threads must be at least 1")
    kernel = kernel_name(get_kernel(config.kernel)) if config.integrator == "brickwork" else "exact"
    if threads == 1:
        per_traj = [_trajectory(config, k) for k in range(config.trajectories)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_traj = list(pool.map(lambda k: _trajectory(config, k), range(config.trajectories)))
    rows: list[EstimateRow] = []
    samples: dict[str, np.ndarray] = {}
    n = config.trajectories
    for ob in config.observables:
        data = np.stack([d[ob.name] for d in per_traj])
        samples[ob.name] = data
        mean, se = _stats(data)
        if isinstance(ob, TwoTimeObservable):
            for gi, g in enumerate(ob.gaps):
                for pi, x in enumerate(ob.probes):
                    s_end = max(ob.origins) + g
                    rows.append(EstimateRow(ob.name, ob.kind, int(g), config.diffusive_time(g), x,
                                            math.nan, mean[gi, pi].real, mean[gi, pi].imag,
                                            se[gi, pi].real, se[gi, pi].imag, n, label=f"gap={g};end={s_end}"))
            continue
        steps = _record_steps(ob, config.steps)
        if ob.average:
            steps = [steps[-1]]
        for si, s in enumerate(steps):
            t = config.diffusive_time(s)
            if isinstance(ob, MomentObservable):
                for pi, x in enumerate(ob.probes):
                    rows.append(EstimateRow(ob.name, ob.kind, s, t, x, math.nan, mean[si, pi].real,
                                            mean[si, pi].imag, se[si, pi].real, se[si, pi].imag, n))
            elif isinstance(ob, LoopObservable):
                rows.append(EstimateRow(ob.name, ob.kind, s, t, math.nan, math.nan, mean[si, 0].real,
                                        mean[si, 0].imag, se[si, 0].real, se[si, 0].imag, n))
            else:
                k = len(ob.pairs)
                for pi, (x, y) in enumerate(ob.pairs):
                    raw, se_raw = mean[si, pi].real, se[si, pi].real
                    g_mean = mean[si, k + pi]
                    conn = raw - abs(g_mean) ** 2 / lattice_spacing(config.N, config.variant)
                    rows.append(EstimateRow(ob.name, ob.kind, s, t, x, y, conn, 0.0, se_raw, 0.0, n))
    return MomentEstimates(rows, config, kernel, samples if keep_samples else {})
