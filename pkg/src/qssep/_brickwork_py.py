"""Pure numpy version of the brickwork sweep kernel.

Same signature, same consumption of the random block and the same gate law
as the compiled module; results agree to rounding.
"""

from __future__ import annotations

import numpy as np


def _pairs(N: int, first: int, periodic: bool) -> tuple[np.ndarray, np.ndarray]:
    nbonds = N if periodic else N - 1
    j = np.arange(first, nbonds, 2)
    return j, (j + 1) % N


def _gates(bonds: np.ndarray, rnd: np.ndarray, a: float, delta: float):
    s2 = np.where(rnd[0, bonds] < 0.5, a - delta, a + delta)
    s = np.sqrt(s2)
    phi = 2.0 * np.pi * rnd[1, bonds]
    c = np.sqrt(1.0 - s2)
    w = s * np.sin(phi) + 1j * s * np.cos(phi)
    return c, w


def _layer(G: np.ndarray, i0: np.ndarray, i1: np.ndarray, c: np.ndarray, w: np.ndarray) -> None:
    # rows: u = [[c, w], [-conj(w), c]]
    r0, r1 = G[i0, :].copy(), G[i1, :].copy()
    G[i0, :] = c[:, None] * r0 + w[:, None] * r1
    G[i1, :] = -np.conj(w)[:, None] * r0 + c[:, None] * r1
    # columns: right multiplication by u^dagger = [[c, -w], [conj(w), c]]
    k0, k1 = G[:, i0].copy(), G[:, i1].copy()
    G[:, i0] = k0 * c[None, :] + k1 * np.conj(w)[None, :]
    G[:, i1] = -k0 * w[None, :] + k1 * c[None, :]


def _relax(G: np.ndarray, site: int, target: float, full: float, half: float) -> None:
    d = G[site, site].real
    G[site, :] *= half
    G[:, site] *= half
    G[site, site] = target + (d - target) * full


def sweeps(G, rnd, a, delta, periodic, open_chain, n_a, n_b, full_a, half_a, full_b, half_b):
    """Advance ``G`` in place by ``rnd.shape[0]`` sweeps (see the compiled twin)."""
    N = G.shape[0]
    if G.ndim != 2 or G.shape[1] != N or N < 2:
        raise ValueError("G must be square with N >= 2")
    if periodic and N % 2:
        raise ValueError("periodic brickwork needs an even number of sites")
    nbonds = N if periodic else N - 1
    rnd = np.asarray(rnd)
    if rnd.ndim != 3 or rnd.shape[1] != 2 or rnd.shape[2] != nbonds:
        raise ValueError(f"random block has shape {rnd.shape}, expected (*, 2, {nbonds})")
    layers = [_pairs(N, 0, periodic), _pairs(N, 1, periodic)]
    for s in range(rnd.shape[0]):
        for i0, i1 in layers:
            c, w = _gates(i0, rnd[s], a, delta)
            _layer(G, i0, i1, c, w)
        if open_chain:
            _relax(G, 0, n_a, full_a, half_a)
            _relax(G, N - 1, n_b, full_b, half_b)
    # the compiled kernel writes diagonals as exact reals
    np.fill_diagonal(G, G.diagonal().real)


def layer(G, rnd, a, delta, periodic, first):
    """Apply one random layer (bonds ``first``, ``first + 2``, ...) in place."""
    N = G.shape[0]
    if G.ndim != 2 or G.shape[1] != N or N < 2:
        raise ValueError("G must be square with N >= 2")
    if periodic and N % 2:
        raise ValueError("periodic brickwork needs an even number of sites")
    if first not in (0, 1):
        raise ValueError("first must be 0 or 1")
    nbonds = N if periodic else N - 1
    rnd = np.asarray(rnd)
    if rnd.shape != (2, nbonds):
        raise ValueError("random block has the wrong shape")
    i0, i1 = _pairs(N, first, periodic)
    c, w = _gates(i0, rnd, a, delta)
    _layer(G, i0, i1, c, w)
    np.fill_diagonal(G, G.diagonal().real)
