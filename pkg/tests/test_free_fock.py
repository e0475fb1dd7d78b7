import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qssep.free_fock import (
    Annihilation,
    CovarianceSpec,
    Creation,
    DepthOverflowError,
    DiagElement,
    FockState,
    Generator,
    apply_letter,
    centered_product_expectation,
    pairing_moment,
    parse_word,
    vacuum_expectation,
)


def _rng(seed=0):
    return np.random.default_rng(seed)


def _random_word(rng, k, A, m):
    """Generator letters with a random D element before, between and after them."""
    word = [DiagElement(rng.normal(size=m))]
    for _ in range(k):
        word += [Generator(int(rng.integers(A))), DiagElement(rng.normal(size=m))]
    return word


class TestLadder:
    def test_annihilation_kills_vacuum(self):
        cov = CovarianceSpec.random(_rng(), 2, 3)
        vac = FockState.vacuum(3, 2)
        out = apply_letter(vac, Annihilation(1), cov)
        assert out.norm_inf() == 0.0

    def test_create_then_annihilate(self):
        rng = _rng(1)
        cov = CovarianceSpec.random(rng, 2, 4)
        delta = rng.random(4)
        state = apply_letter(FockState.vacuum(4, 1), Creation(0), cov)
        state = apply_letter(state, DiagElement(delta), cov)
        state = apply_letter(state, Annihilation(1), cov)
        assert np.allclose(state.component(()), cov.K[1, 0] @ delta, atol=1e-14)
        assert state.terms.keys() == {()}

    def test_unit_element_is_identity(self):
        rng = _rng(2)
        cov = CovarianceSpec.random(rng, 1, 3)
        state = apply_letter(FockState.vacuum(3, 2, rng.random(3)), Creation(0), cov)
        same = apply_letter(state, DiagElement(np.ones(3)), cov)
        assert np.array_equal(same.component((0,)), state.component((0,)))

    def test_depth_overflow_is_an_error(self):
        cov = CovarianceSpec.random(_rng(), 1, 2)
        state = apply_letter(FockState.vacuum(2, 1), Creation(0), cov)
        with pytest.raises(DepthOverflowError):
            apply_letter(state, Creation(0), cov)


class TestVacuumExpectation:
    def test_two_point(self):
        rng = _rng(3)
        cov = CovarianceSpec.random(rng, 2, 3)
        delta = rng.normal(size=3)
        got = vacuum_expectation([Generator(0), DiagElement(delta), Generator(1)], cov)
        assert np.allclose(got, cov.K[0, 1] @ delta, atol=1e-14)

    def test_odd_words_vanish(self):
        rng = _rng(4)
        cov = CovarianceSpec.random(rng, 2, 3)
        for k in (1, 3, 5):
            assert np.max(np.abs(vacuum_expectation(_random_word(rng, k, 2, 3), cov))) == 0.0

    def test_four_point_single_generator(self):
        rng = _rng(5)
        K = rng.random((4, 4))
        cov = CovarianceSpec.single(K)
        d1, d2, d3 = rng.normal(size=(3, 4))
        word = parse_word([0, d1, 0, d2, 0, d3, 0])
        sigma = lambda v: K @ v
        expected = sigma(d1 * sigma(d2) * d3) + sigma(d1) * d2 * sigma(d3)
        assert np.allclose(vacuum_expectation(word, cov), expected, atol=1e-13)

    def test_bimodule(self):
        rng = _rng(6)
        cov = CovarianceSpec.random(rng, 2, 3)
        word = _random_word(rng, 4, 2, 3)
        a, b = rng.normal(size=(2, 3))
        outer = vacuum_expectation([DiagElement(a)] + word + [DiagElement(b)], cov)
        assert np.allclose(outer, a * vacuum_expectation(word, cov) * b, atol=1e-12)

    def test_linear_in_each_slot(self):
        rng = _rng(7)
        cov = CovarianceSpec.random(rng, 2, 3)
        word = _random_word(rng, 4, 2, 3)
        slot = 2
        u, v = rng.normal(size=(2, 3))
        s, t = 0.7, -1.3

        def with_slot(d):
            w = list(word)
            w[slot] = DiagElement(d)
            return vacuum_expectation(w, cov)

        assert np.allclose(with_slot(s * u + t * v), s * with_slot(u) + t * with_slot(v), atol=1e-12)


class TestPairingExpansion:
    def test_single_pairing(self):
        rng = _rng(8)
        cov = CovarianceSpec.random(rng, 2, 3)
        d = rng.normal(size=3)
        assert np.allclose(pairing_moment([Generator(1), DiagElement(d), Generator(0)], cov), cov.K[1, 0] @ d)

    def test_six_point_unit_slots(self):
        K = _rng(9).random((3, 3))
        cov = CovarianceSpec.single(K)
        s = lambda v: K @ v
        one = np.ones(3)
        # the five non-crossing pairings of six points, written out by hand
        expected = (s(s(s(one))) + s(s(one) * s(one)) + s(s(one)) * s(one)
                    + s(one) * s(s(one)) + s(one) * s(one) * s(one))
        word = [Generator(0)] * 6
        assert np.allclose(pairing_moment(word, cov), expected, atol=1e-12)
        assert np.allclose(vacuum_expectation(word, cov), expected, atol=1e-12)

    @pytest.mark.parametrize("k", [2, 4, 6])
    @pytest.mark.parametrize("A,m", [(1, 1), (2, 3), (3, 5)])
    def test_equivalence_all_generator_patterns(self, k, A, m):
        rng = _rng(100 * k + 10 * A + m)
        cov = CovarianceSpec.random(rng, A, m, positive=bool(k % 4))
        for labels in itertools.product(range(A), repeat=k):
            word = [DiagElement(rng.normal(size=m))]
            for a in labels:
                word += [Generator(a), DiagElement(rng.normal(size=m))]
            assert np.max(np.abs(vacuum_expectation(word, cov) - pairing_moment(word, cov))) <= 1e-10

    def test_odd_count_returns_zero(self):
        cov = CovarianceSpec.random(_rng(), 1, 2)
        assert np.array_equal(pairing_moment([Generator(0)] * 3, cov), np.zeros(2))

    def test_rejects_ladder_letters(self):
        cov = CovarianceSpec.random(_rng(), 1, 2)
        with pytest.raises(TypeError):
            pairing_moment([Creation(0), Annihilation(0)], cov)


class TestFreeness:
    def test_alternating_centered_words(self):
        rng = _rng(12)
        m = 4
        cov = CovarianceSpec.block_diagonal([CovarianceSpec.random(rng, 1, m), CovarianceSpec.random(rng, 1, m)])
        for _ in range(10):
            x_words = [[DiagElement(rng.normal(size=m)), Generator(0), DiagElement(rng.normal(size=m)), Generator(0)],
                       [Generator(0), DiagElement(rng.normal(size=m)), Generator(0)]]
            y_words = [[Generator(1), DiagElement(rng.normal(size=m)), Generator(1)],
                       [Generator(1), Generator(1), DiagElement(rng.normal(size=m))]]
            elements = [x_words[0], y_words[0], x_words[1], y_words[1]]
            assert np.max(np.abs(centered_product_expectation(elements, cov))) <= 1e-10

    def test_nested_mixed_word(self):
        # E[X1 Y1 X2 Y2 X3] with X and Y free: the Y's pair with each other
        # inside the X pairing structure
        rng = _rng(13)
        m = 3
        Kx, Ky = rng.random((2, m, m))
        cov = CovarianceSpec.block_diagonal([CovarianceSpec.single(Kx), CovarianceSpec.single(Ky)])
        d = rng.normal(size=(4, m))
        word = parse_word([0, d[0], 1, d[1], 0, d[2], 1, d[3], 0])
        got = vacuum_expectation(word, cov)
        # only Y-Y pairing (1,3) plus an X pairing compatible with it survive:
        # X positions 0,2,4 cannot be fully paired, so the moment is zero
        assert np.max(np.abs(got)) == 0.0
        word = parse_word([0, d[0], 1, d[1], 1, d[2], 0])
        expected = Kx @ (d[0] * (Ky @ d[1]) * d[2])
        assert np.allclose(vacuum_expectation(word, cov), expected, atol=1e-13)


@given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.integers(1, 4), st.sampled_from([2, 4, 6]))
def test_fock_equals_pairings_random(seed, A, m, k):
    rng = np.random.default_rng(seed)
    cov = CovarianceSpec.random(rng, A, m, positive=False)
    word = _random_word(rng, k, A, m)
    assert np.max(np.abs(vacuum_expectation(word, cov) - pairing_moment(word, cov))) <= 1e-10
