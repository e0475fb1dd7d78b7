"""A finite model of the free Fock space over a diagonal algebra.

The algebra D is R^m with the entrywise product.  A word of generators
``(a_1, ..., a_k)`` carries a tensor ``T[i_0, ..., i_k]``; the basis vector
it multiplies is ``e_{i_0} v_{a_1} e_{i_1} ... v_{a_k} e_{i_k}``, tensored over
D, so neighbouring D slots are glued by the entrywise product.

Conventions
-----------
* ``Creation(a)`` prepends ``v_a``.
* ``Annihilation(a)`` removes the leading generator ``b`` and contracts with
  the covariance ``g^{ab}(X) = K[a][b] @ X``, so that the product
  "annihilate a, multiply by X, create b" is the D-element ``g^{ab}(X)``.
* Operator words are read like products: the letter next to the vacuum (the
  rightmost one) acts first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .ncpart import DEFAULT_CAP, nc_pairings


class DepthOverflowError(RuntimeError):
    """A creation operator would produce a word longer than the depth cap."""


@dataclass(frozen=True)
class Generator:
    a: int


@dataclass(frozen=True)
class Creation:
    a: int


@dataclass(frozen=True)
class Annihilation:
    a: int


@dataclass(frozen=True, eq=False)
class DiagElement:
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


Letter = Union[Generator, Creation, Annihilation, DiagElement]


@dataclass
class CovarianceSpec:
    """Covariance maps ``g^{ab}`` given by ``m x m`` matrices ``K[a][b]``."""

    K: np.ndarray  # shape (A, A, m, m)

    def __post_init__(self) -> None:
        self.K = np.asarray(self.K, dtype=float)
        if self.K.ndim != 4 or self.K.shape[0] != self.K.shape[1] or self.K.shape[2] != self.K.shape[3]:
            raise ValueError("K must have shape (A, A, m, m)")

    @property
    def generators(self) -> int:
        return self.K.shape[0]

    @property
    def dim(self) -> int:
        return self.K.shape[2]

    def g(self, a: int, b: int, x: np.ndarray) -> np.ndarray:
        return self.K[a, b] @ x

    def is_positive(self) -> bool:
        return bool(np.all(self.K >= 0))

    @classmethod
    def single(cls, K: np.ndarray) -> "CovarianceSpec":
        K = np.asarray(K, dtype=float)
        return cls(K[None, None])

    @classmethod
    def random(cls, rng: np.random.Generator, generators: int, dim: int,
               positive: bool = True) -> "CovarianceSpec":
        K = rng.random((generators, generators, dim, dim))
        if not positive:
            K = K - 0.5
        return cls(K)

    @classmethod
    def block_diagonal(cls, blocks: Sequence["CovarianceSpec"]) -> "CovarianceSpec":
        dim = blocks[0].dim
        A = sum(b.generators for b in blocks)
        K = np.zeros((A, A, dim, dim))
        start = 0
        for b in blocks:
            n = b.generators
            K[start:start + n, start:start + n] = b.K
            start += n
        return cls(K)


@dataclass(frozen=True)
class FockState:
    """Immutable finite expansion ``word -> coefficient tensor``."""

    dim: int
    depth_cap: int
    terms: Mapping[tuple[int, ...], np.ndarray] = field(default_factory=dict)

    @classmethod
    def vacuum(cls, dim: int, depth_cap: int, value: np.ndarray | None = None) -> "FockState":
        v = np.ones(dim) if value is None else np.asarray(value, dtype=float)
        if v.shape != (dim,):
            raise ValueError(f"vacuum coefficient must have shape ({dim},)")
        return cls(dim, depth_cap, {(): v.copy()})

    def component(self, word: tuple[int, ...] = ()) -> np.ndarray:
        """Coefficient tensor of ``word``; zero if absent."""
        if word in self.terms:
            return self.terms[word]
        return np.zeros((self.dim,) * (len(word) + 1))

    def norm_inf(self) -> float:
        return max((float(np.max(np.abs(t))) for t in self.terms.values()), default=0.0)

    def __add__(self, other: "FockState") -> "FockState":
        _check_compatible(self, other)
        out = {k: v.copy() for k, v in self.terms.items()}
        for k, v in other.terms.items():
            out[k] = out[k] + v if k in out else v.copy()
        return FockState(self.dim, self.depth_cap, out)

    def scale(self, c: float) -> "FockState":
        return FockState(self.dim, self.depth_cap, {k: c * v for k, v in self.terms.items()})


def _check_compatible(a: FockState, b: FockState) -> None:
    if a.dim != b.dim or a.depth_cap != b.depth_cap:
        raise ValueError("states live in different Fock spaces")


def _create(state: FockState, a: int) -> FockState:
    out: dict[tuple[int, ...], np.ndarray] = {}
    for word, t in state.terms.items():
        if len(word) + 1 > state.depth_cap:
            raise DepthOverflowError(
                f"creating generator {a} on a word of length {len(word)} exceeds depth cap {state.depth_cap}"
            )
        # new leading slot is free: e_i v_a (1) -> broadcast over i
        out[(a,) + word] = np.broadcast_to(t, (state.dim,) + t.shape).copy()
    return FockState(state.dim, state.depth_cap, out)


def _annihilate(state: FockState, a: int, cov: CovarianceSpec) -> FockState:
    out: dict[tuple[int, ...], np.ndarray] = {}
    for word, t in state.terms.items():
        if not word:
            continue
        b, rest = word[0], word[1:]
        K = cov.K[a, b]
        # e_i v_b e_j ...  ->  g^{ab}(e_i) e_j ...  = K[j, i] e_j ...
        new = np.einsum("ji,ij...->j...", K, t)
        out[rest] = out[rest] + new if rest in out else new
    return FockState(state.dim, state.depth_cap, out)


def _multiply(state: FockState, x: np.ndarray) -> FockState:
    if x.shape != (state.dim,):
        raise ValueError(f"D element has shape {x.shape}, expected ({state.dim},)")
    out = {}
    for word, t in state.terms.items():
        out[word] = t * x.reshape((state.dim,) + (1,) * (t.ndim - 1))
    return FockState(state.dim, state.depth_cap, out)


def apply_letter(state: FockState, letter: Letter, cov: CovarianceSpec) -> FockState:
    """Act with one letter on ``state``."""
    if cov.dim != state.dim:
        raise ValueError(f"covariance acts on dimension {cov.dim}, state has {state.dim}")
    if isinstance(letter, DiagElement):
        return _multiply(state, letter.values)
    a = letter.a
    if not 0 <= a < cov.generators:
        raise ValueError(f"generator index {a} out of range")
    if isinstance(letter, Creation):
        return _create(state, a)
    if isinstance(letter, Annihilation):
        return _annihilate(state, a, cov)
    if isinstance(letter, Generator):
        return _create(state, a) + _annihilate(state, a, cov)
    raise TypeError(f"unknown letter {letter!r}")


def generator_count(word: Sequence[Letter]) -> int:
    return sum(isinstance(w, Generator) for w in word)


def vacuum_expectation(word: Sequence[Letter], cov: CovarianceSpec,
                       depth_cap: int | None = None) -> np.ndarray:
    """``<Omega| word |Omega>`` as a vector in D."""
    k = generator_count(word)
    cap = k if depth_cap is None else depth_cap
    state = FockState.vacuum(cov.dim, cap)
    for letter in reversed(list(word)):
        state = apply_letter(state, letter, cov)
    return state.component(()).copy()


def _split(word: Sequence[Letter], dim: int) -> tuple[list[int], list[np.ndarray]]:
    # returns generator labels and the D elements sitting before, between and
    # after them (products of consecutive DiagElements, unit when absent)
    gens: list[int] = []
    slots: list[np.ndarray] = [np.ones(dim)]
    for w in word:
        if isinstance(w, Generator):
            gens.append(w.a)
            slots.append(np.ones(dim))
        elif isinstance(w, DiagElement):
            slots[-1] = slots[-1] * w.values
        else:
            raise TypeError("pairing expansion only accepts Generator and DiagElement letters")
    return gens, slots


def pairing_moment(word: Sequence[Letter], cov: CovarianceSpec, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Sum over non-crossing pairings, each one evaluated as nested covariances."""
    gens, d = _split(word, cov.dim)
    n = len(gens)
    if n % 2:
        return np.zeros(cov.dim)
    total = np.zeros(cov.dim)
    for p in nc_pairings(n, cap):
        partner = [0] * n
        for i, j in p.blocks:
            partner[i], partner[j] = j, i

        def segment(lo: int, hi: int) -> np.ndarray:
            # D elements d[lo..hi] with the generators lo..hi-1 paired inside
            if lo == hi:
                return d[lo]
            q = partner[lo]
            inner = segment(lo + 1, q)
            return d[lo] * cov.g(gens[lo], gens[q], inner) * segment(q + 1, hi)

        total = total + segment(0, n)
    return total


def parse_word(spec: Iterable) -> list[Letter]:
    """Build a word from a compact list: ints are generators, lists are D elements."""
    out: list[Letter] = []
    for item in spec:
        if isinstance(item, (int, np.integer)):
            out.append(Generator(int(item)))
        else:
            out.append(DiagElement(np.asarray(item, dtype=float)))
    return out


def centered_product_expectation(elements: Sequence[Sequence[Letter]], cov: CovarianceSpec) -> np.ndarray:
    """``E^D[(w_1 - E^D w_1)(w_2 - E^D w_2)...]`` for words ``w_k``.

    The product is expanded into ``2^n`` words; the centring constants enter as
    D elements.
    """
    words = [list(w) for w in elements]
    centres = [DiagElement(-vacuum_expectation(w, cov)) for w in words]
    total = np.zeros(cov.dim)
    for choice in range(2 ** len(words)):
        word: list[Letter] = []
        for k, w in enumerate(words):
            word.extend([centres[k]] if choice >> k & 1 else w)
        total = total + vacuum_expectation(word, cov)
    return total
