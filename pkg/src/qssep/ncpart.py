"""Non-crossing partitions and free moment/cumulant transforms.

Partitions are stored canonically: each block is an ascending tuple and the
blocks are ordered by their smallest element.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

DEFAULT_CAP = 14


class SizeLimitError(ValueError):
    """Raised when a request exceeds the enumeration cap."""


@dataclass(frozen=True)
class NCPartition:
    n: int
    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        seen = sorted(i for b in self.blocks for i in b)
        if seen != list(range(self.n)):
            raise ValueError(f"blocks {self.blocks} do not partition range({self.n})")
        if any(list(b) != sorted(b) or not b for b in self.blocks):
            raise ValueError("blocks must be non-empty ascending tuples")
        mins = [b[0] for b in self.blocks]
        if mins != sorted(mins):
            raise ValueError("blocks must be ordered by their minimum")
        if is_crossing(self.blocks):
            raise ValueError(f"partition {self.blocks} is crossing")

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[int]], n: int | None = None) -> "NCPartition":
        bl = [tuple(sorted(b)) for b in blocks]
        bl = [b for b in bl if b]
        bl.sort(key=lambda b: b[0])
        if n is None:
            n = sum(len(b) for b in bl)
        return cls(n, tuple(bl))

    def __len__(self) -> int:
        return len(self.blocks)

    def block_sizes(self) -> list[int]:
        return [len(b) for b in self.blocks]

    def block_of(self) -> list[int]:
        """Index of the block containing each element."""
        owner = [0] * self.n
        for k, b in enumerate(self.blocks):
            for i in b:
                owner[i] = k
        return owner

    def as_lists(self) -> list[list[int]]:
        return [list(b) for b in self.blocks]


def is_crossing(blocks: Sequence[Sequence[int]]) -> bool:
    owner: dict[int, int] = {}
    for k, b in enumerate(blocks):
        for i in b:
            owner[i] = k
    for k, b in enumerate(blocks):
        for a, c in zip(b, b[1:]):
            # any element strictly between a and c must have its block inside (a, c)
            for m in range(a + 1, c):
                other = owner[m]
                if other == k:
                    continue
                if any(j < a or j > c for j in blocks[other]):
                    return True
    return False


def catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)


def _check_cap(n: int, cap: int) -> None:
    if n < 0:
        raise ValueError("n must be non-negative")
    if n > cap:
        raise SizeLimitError(f"n={n} exceeds the enumeration cap {cap}")


def _generate(n: int) -> Iterator[tuple[tuple[int, ...], ...]]:
    # Elements are placed left to right.  A new element either opens a block
    # or joins one of the still-open blocks; joining block k closes every block
    # opened after it, which is exactly what keeps the partition non-crossing.
    def rec(i: int, blocks: list[list[int]], stack: list[int]):
        if i == n:
            yield tuple(tuple(b) for b in blocks)
            return
        for depth in range(len(stack) - 1, -1, -1):
            k = stack[depth]
            blocks[k].append(i)
            yield from rec(i + 1, blocks, stack[: depth + 1])
            blocks[k].pop()
        blocks.append([i])
        yield from rec(i + 1, blocks, stack + [len(blocks) - 1])
        blocks.pop()

    yield from rec(0, [], [])


def enumerate_nc(n: int, cap: int = DEFAULT_CAP) -> list[NCPartition]:
    """All non-crossing partitions of ``{0..n-1}`` in a fixed order."""
    _check_cap(n, cap)
    return list(_enumerate(n))


@lru_cache(maxsize=32)
def _enumerate(n: int) -> tuple[NCPartition, ...]:
    out = []
    for blocks in _generate(n):
        p = object.__new__(NCPartition)
        object.__setattr__(p, "n", n)
        object.__setattr__(p, "blocks", blocks)
        out.append(p)
    return tuple(out)


def nc_pairings(n: int, cap: int = DEFAULT_CAP) -> list[NCPartition]:
    """Non-crossing pair partitions of ``{0..n-1}`` (empty for odd ``n``)."""
    if n % 2:
        return []
    return [p for p in enumerate_nc(n, cap) if all(len(b) == 2 for b in p.blocks)]


def _to_permutation(p: NCPartition) -> list[int]:
    # each block becomes the cycle (b0 -> b1 -> ... -> b_last -> b0)
    perm = list(range(p.n))
    for b in p.blocks:
        for a, c in zip(b, b[1:] + b[:1]):
            perm[a] = c
    return perm


def _from_permutation(perm: Sequence[int]) -> NCPartition:
    n = len(perm)
    seen = [False] * n
    blocks = []
    for i in range(n):
        if seen[i]:
            continue
        cyc = []
        j = i
        while not seen[j]:
            seen[j] = True
            cyc.append(j)
            j = perm[j]
        blocks.append(tuple(sorted(cyc)))
    return NCPartition.from_blocks(blocks, n)


def kreweras_dual(p: NCPartition) -> NCPartition:
    """Kreweras complement, computed as the permutation ``p^{-1} o c``.

    ``c`` is the long cycle ``i -> i+1 (mod n)``.  With this convention the
    complement of the complement is ``p`` relabelled by ``i -> i-1``.
    """
    n = p.n
    if n == 0:
        return p
    perm = _to_permutation(p)
    inv = [0] * n
    for i, j in enumerate(perm):
        inv[j] = i
    return _from_permutation([inv[(i + 1) % n] for i in range(n)])


def rotate(p: NCPartition, shift: int = -1) -> NCPartition:
    """Relabel every element ``i`` as ``i + shift (mod n)``."""
    if p.n == 0:
        return p
    return NCPartition.from_blocks([[(i + shift) % p.n for i in b] for b in p.blocks], p.n)


# ---------------------------------------------------------------------------
# scalar transforms


def _as_seq(values: Sequence[float], cap: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("need a one-dimensional sequence of length >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError("sequence contains non-finite values")
    if arr.size > cap:
        raise SizeLimitError(f"length {arr.size} exceeds the cap {cap}")
    return arr


def _moments(kappa: np.ndarray) -> np.ndarray:
    # m_n = sum_s kappa_s * sum_{i_1+..+i_s = n-s} m_{i_1}..m_{i_s}  (m_0 = 1),
    # obtained by splitting off the block that contains the first element.
    n = kappa.size
    m = np.zeros(n + 1)
    m[0] = 1.0
    for total in range(1, n + 1):
        acc = 0.0
        for s in range(1, total + 1):
            acc += kappa[s - 1] * _composition_sum(m, s, total - s)
        m[total] = acc
    return m[1:]


def _composition_sum(m: np.ndarray, parts: int, total: int) -> float:
    # sum over (i_1..i_parts) >= 0 with sum = total of prod m[i_j]
    row = np.zeros(total + 1)
    row[0] = 1.0
    for _ in range(parts):
        new = np.zeros(total + 1)
        for k in range(total + 1):
            new[k] = float(np.dot(row[: k + 1], m[k::-1][: k + 1]))
        row = new
    return float(row[total])


def moments_from_free_cumulants(kappa: Sequence[float], cap: int = DEFAULT_CAP) -> np.ndarray:
    """Moments ``m_1..m_n`` generated by free cumulants ``kappa_1..kappa_n``."""
    return _moments(_as_seq(kappa, cap))


def free_cumulants_from_moments(m: Sequence[float], cap: int = DEFAULT_CAP) -> np.ndarray:
    """Invert :func:`moments_from_free_cumulants` one order at a time."""
    m = _as_seq(m, cap)
    kappa = np.zeros(m.size)
    for k in range(m.size):
        # with kappa_{k+1} = 0 the forward map gives everything except the
        # single-block term, which is kappa_{k+1} itself
        kappa[k] = 0.0
        kappa[k] = m[k] - _moments(kappa[: k + 1])[k]
    return kappa


def moments_by_enumeration(kappa: Sequence[float], cap: int = DEFAULT_CAP) -> np.ndarray:
    """Same as :func:`moments_from_free_cumulants`, by brute-force summation."""
    kappa = _as_seq(kappa, cap)
    out = np.zeros(kappa.size)
    for k in range(1, kappa.size + 1):
        out[k - 1] = sum(
            math.prod(kappa[len(b) - 1] for b in p.blocks) for p in enumerate_nc(k, cap)
        )
    return out


# ---------------------------------------------------------------------------
# multilinear transforms for commuting arguments

BlockFunction = Callable[[tuple[int, ...]], float]


def _subset_partitions(subset: tuple[int, ...]) -> list[list[tuple[int, ...]]]:
    parts = enumerate_nc(len(subset))
    return [[tuple(subset[i] for i in b) for b in p.blocks] for p in parts]


def multilinear_moment(block_cumulant: BlockFunction, p: int, cap: int = DEFAULT_CAP) -> float:
    """``sum_{pi in NC_p} prod_b kappa(b)`` for a cumulant given on index blocks."""
    _check_cap(p, cap)
    if p == 0:
        return 1.0
    total = 0.0
    for blocks in _subset_partitions(tuple(range(p))):
        total += math.prod(block_cumulant(b) for b in blocks)
    return total


def multilinear_free_cumulant(block_moment: BlockFunction, p: int, cap: int = DEFAULT_CAP) -> float:
    """Free cumulant ``kappa_p(a_1..a_p)`` from moments of index subsets.

    ``block_moment(b)`` must return the moment of the product of the
    arguments indexed by the ascending tuple ``b``.  Lower cumulants are
    obtained recursively and subtracted from the full moment.
    """
    _check_cap(p, cap)
    if p < 1:
        raise ValueError("p must be at least 1")
    memo: dict[tuple[int, ...], float] = {}

    def kappa(subset: tuple[int, ...]) -> float:
        if subset in memo:
            return memo[subset]
        total = block_moment(subset)
        for blocks in _subset_partitions(subset):
            if len(blocks) == 1:
                continue
            total -= math.prod(kappa(b) for b in blocks)
        memo[subset] = total
        return total

    return kappa(tuple(range(p)))


def indicator_block_moment(xs: Sequence[float]) -> BlockFunction:
    """Moments of interval indicators ``1_[0,x]`` under Lebesgue measure."""
    xs = tuple(float(x) for x in xs)
    return lambda b: min(xs[i] for i in b)


def indicator_cumulant(xs: Sequence[float], cap: int = DEFAULT_CAP) -> float:
    return multilinear_free_cumulant(indicator_block_moment(xs), len(xs), cap)


def all_subsets(p: int) -> Iterator[tuple[int, ...]]:
    for r in range(1, p + 1):
        yield from combinations(range(p), r)
