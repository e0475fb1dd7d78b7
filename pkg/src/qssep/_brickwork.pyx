# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled brickwork sweeps for the two-point matrix.

A layer is a block-diagonal unitary U made of 2x2 bond gates (plus identity
singletons).  G <- U G U^dagger is evaluated block by block on the upper block
triangle only and mirrored, which halves the arithmetic and keeps G exactly
Hermitian.
"""

from libc.math cimport sqrt, cos, sin, M_PI
from libc.stdlib cimport malloc, free


cdef struct Group:
    Py_ssize_t i0
    Py_ssize_t i1          # -1 for a singleton site
    double c
    double complex w       # gate is [[c, w], [-conj(w), c]]


cdef Py_ssize_t _make_groups(Group *out, Py_ssize_t N, Py_ssize_t first,
                             bint periodic) noexcept nogil:
    # Sites covered by bonds j = first, first+2, ... form pairs; every other
    # site is a singleton.  Returns the number of groups.
    cdef Py_ssize_t nbonds = N if periodic else N - 1
    cdef Py_ssize_t j, n = 0, site
    cdef bint covered_zero = periodic and first == 1 and (N % 2 == 0)
    if first == 1 and not covered_zero:
        out[n].i0 = 0
        out[n].i1 = -1
        n += 1
    j = first
    while j < nbonds:
        out[n].i0 = j
        out[n].i1 = j + 1 if j + 1 < N else 0
        n += 1
        j += 2
    # trailing uncovered site for closed chains
    site = j
    if not periodic and site == N - 1:
        out[n].i0 = N - 1
        out[n].i1 = -1
        n += 1
    return n


cdef void _draw(Group *grp, Py_ssize_t ng, const double[:, ::1] rnd,
                double a, double delta) noexcept nogil:
    # s^2 takes the two values a -/+ delta with equal weight; the phase is
    # uniform.  w = i s e^{-i phi}.
    cdef Py_ssize_t g, j
    cdef double s2, s, phi
    for g in range(ng):
        if grp[g].i1 < 0:
            grp[g].c = 1.0
            grp[g].w = 0.0
            continue
        j = grp[g].i0
        s2 = a - delta if rnd[0, j] < 0.5 else a + delta
        s = sqrt(s2)
        phi = 2.0 * M_PI * rnd[1, j]
        grp[g].c = sqrt(1.0 - s2)
        grp[g].w = s * sin(phi) + 1j * s * cos(phi)


cdef void _layer(double complex *G, Py_ssize_t N, const Group *grp,
                 Py_ssize_t ng) noexcept nogil:
    cdef Py_ssize_t P, Q, a0, a1, b0, b1
    cdef double cp, cq
    cdef double complex wp, wq, x00, x01, x10, x11, t00, t01, t10, t11
    for P in range(ng):
        a0 = grp[P].i0
        a1 = grp[P].i1
        cp = grp[P].c
        wp = grp[P].w
        for Q in range(P, ng):
            b0 = grp[Q].i0
            b1 = grp[Q].i1
            cq = grp[Q].c
            wq = grp[Q].w
            if a1 >= 0 and b1 >= 0:
                x00 = G[a0 * N + b0]
                x01 = G[a0 * N + b1]
                x10 = G[a1 * N + b0]
                x11 = G[a1 * N + b1]
                # T = u_P X
                t00 = cp * x00 + wp * x10
                t01 = cp * x01 + wp * x11
                t10 = -wp.conjugate() * x00 + cp * x10
                t11 = -wp.conjugate() * x01 + cp * x11
                # X' = T u_Q^dagger, u^dagger = [[c, -w], [conj(w), c]]
                x00 = t00 * cq + t01 * wq.conjugate()
                x01 = -t00 * wq + t01 * cq
                x10 = t10 * cq + t11 * wq.conjugate()
                x11 = -t10 * wq + t11 * cq
                G[a0 * N + b0] = x00
                G[a0 * N + b1] = x01
                G[a1 * N + b0] = x10
                G[a1 * N + b1] = x11
                if P != Q:
                    G[b0 * N + a0] = x00.conjugate()
                    G[b1 * N + a0] = x01.conjugate()
                    G[b0 * N + a1] = x10.conjugate()
                    G[b1 * N + a1] = x11.conjugate()
                else:
                    G[a0 * N + a0] = x00.real
                    G[a1 * N + a1] = x11.real
                    G[a1 * N + a0] = x01.conjugate()
            elif a1 >= 0:
                # column singleton b0
                x00 = G[a0 * N + b0]
                x10 = G[a1 * N + b0]
                t00 = cp * x00 + wp * x10
                t10 = -wp.conjugate() * x00 + cp * x10
                G[a0 * N + b0] = t00
                G[a1 * N + b0] = t10
                G[b0 * N + a0] = t00.conjugate()
                G[b0 * N + a1] = t10.conjugate()
            elif b1 >= 0:
                # row singleton a0
                x00 = G[a0 * N + b0]
                x01 = G[a0 * N + b1]
                t00 = x00 * cq + x01 * wq.conjugate()
                t01 = -x00 * wq + x01 * cq
                G[a0 * N + b0] = t00
                G[a0 * N + b1] = t01
                G[b0 * N + a0] = t00.conjugate()
                G[b1 * N + a0] = t01.conjugate()
            # singleton-singleton blocks are untouched


cdef void _relax(double complex *G, Py_ssize_t N, Py_ssize_t site,
                 double target, double full, double half) noexcept nogil:
    cdef Py_ssize_t k
    for k in range(N):
        if k != site:
            G[site * N + k] = G[site * N + k] * half
            G[k * N + site] = G[k * N + site] * half
    G[site * N + site] = target + (G[site * N + site].real - target) * full


def sweeps(double complex[:, ::1] G, const double[:, :, ::1] rnd,
           double a, double delta, bint periodic, bint open_chain,
           double n_a, double n_b, double full_a, double half_a,
           double full_b, double half_b):
    """Advance ``G`` in place by ``rnd.shape[0]`` sweeps.

    One sweep applies the even-bond layer, the odd-bond layer and, for an open
    chain, the exact boundary relaxation.  ``rnd[s, 0, j]`` picks the mixing
    strength of bond ``j`` in sweep ``s`` and ``rnd[s, 1, j]`` its phase.
    ``full_*`` multiplies the deviation of the boundary density from its
    target and ``half_*`` the remaining entries of the boundary row.
    """
    cdef Py_ssize_t N = G.shape[0]
    cdef Py_ssize_t nbonds = N if periodic else N - 1
    cdef Py_ssize_t s, nsweep = rnd.shape[0], n_even, n_odd
    if G.shape[1] != N or N < 2:
        raise ValueError("G must be square with N >= 2")
    if periodic and N % 2:
        raise ValueError("periodic brickwork needs an even number of sites")
    if rnd.shape[1] != 2 or rnd.shape[2] != nbonds:
        raise ValueError("random block has shape %r, expected (*, 2, %d)"
                         % (tuple(rnd.shape)[:3], nbonds))
    cdef Group *even = <Group *> malloc(N * sizeof(Group))
    cdef Group *odd = <Group *> malloc(N * sizeof(Group))
    if even == NULL or odd == NULL:
        free(even)
        free(odd)
        raise MemoryError()
    cdef double complex *g = &G[0, 0]
    try:
        with nogil:
            n_even = _make_groups(even, N, 0, periodic)
            n_odd = _make_groups(odd, N, 1, periodic)
            for s in range(nsweep):
                _draw(even, n_even, rnd[s], a, delta)
                _layer(g, N, even, n_even)
                _draw(odd, n_odd, rnd[s], a, delta)
                _layer(g, N, odd, n_odd)
                if open_chain:
                    _relax(g, N, 0, n_a, full_a, half_a)
                    _relax(g, N, N - 1, n_b, full_b, half_b)
    finally:
        free(even)
        free(odd)


def layer(double complex[:, ::1] G, const double[:, ::1] rnd, double a,
          double delta, bint periodic, Py_ssize_t first):
    """Apply one random layer (bonds ``first``, ``first + 2``, ...) in place."""
    cdef Py_ssize_t N = G.shape[0]
    cdef Py_ssize_t nbonds = N if periodic else N - 1
    cdef Py_ssize_t ng
    if G.shape[1] != N or N < 2:
        raise ValueError("G must be square with N >= 2")
    if periodic and N % 2:
        raise ValueError("periodic brickwork needs an even number of sites")
    if first not in (0, 1):
        raise ValueError("first must be 0 or 1")
    if rnd.shape[0] != 2 or rnd.shape[1] != nbonds:
        raise ValueError("random block has the wrong shape")
    cdef Group *grp = <Group *> malloc(N * sizeof(Group))
    if grp == NULL:
        raise MemoryError()
    cdef double complex *g = &G[0, 0]
    try:
        with nogil:
            ng = _make_groups(grp, N, first, periodic)
            _draw(grp, ng, rnd, a, delta)
            _layer(g, N, grp, ng)
    finally:
        free(grp)
