from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from conftest import lp_dual_norm, random_signed_measure
from skewstab.measures import (
    DiscretizedMeasure,
    FiberAtoms,
    bv_marginal,
    coalesce,
    norm_l1,
    norm_s1,
    product_measure,
    subtract,
    variation,
    w1,
)

unit = st.floats(0.0, 1.0, allow_nan=False)
weight = st.floats(0.01, 3.0, allow_nan=False)


def positive_atoms(max_size=4):
    return st.lists(st.tuples(unit, weight), min_size=1, max_size=max_size)


def as_prob(rows):
    arr = np.array(rows, dtype=float)
    arr[:, 1] /= arr[:, 1].sum()
    return FiberAtoms(pos=arr)


class TestW1:
    def test_two_points(self):
        assert w1(FiberAtoms.delta(0.2), FiberAtoms.delta(0.7)) == pytest.approx(0.5, abs=1e-15)

    def test_identical(self):
        a = FiberAtoms(pos=[[0.1, 0.3], [0.6, 0.7]])
        assert w1(a, a) == 0.0

    def test_probability_against_empty(self):
        assert w1(FiberAtoms.delta(0.5), FiberAtoms()) == pytest.approx(1.0)

    def test_mass_term(self):
        assert w1(FiberAtoms.delta(0.0, 2.0)) == pytest.approx(2.0)

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.tuples(unit, st.floats(-3, 3, allow_nan=False)), min_size=1, max_size=6))
    def test_matches_lp_oracle(self, rows):
        y = np.array([r[0] for r in rows])
        w = np.array([r[1] for r in rows])
        assume(np.all(np.abs(w) >= 1e-6))
        a = FiberAtoms.from_signed(y, w)
        assert w1(a) == pytest.approx(lp_dual_norm(y, w), abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(positive_atoms(), positive_atoms(), positive_atoms())
    def test_pseudometric(self, ra, rb, rc):
        a, b, c = as_prob(ra), as_prob(rb), as_prob(rc)
        assert w1(a, b) == w1(b, a)
        assert w1(a, a) == 0.0
        assert w1(a, c) <= w1(a, b) + w1(b, c) + 1e-12


class TestNorms:
    def test_probability_norm_is_one(self, rng):
        n = 64
        mu = product_measure(n, FiberAtoms(pos=[[0.2, 0.5], [0.9, 0.5]]))
        assert norm_l1(mu) == pytest.approx(1.0, abs=1e-9)
        dens = rng.random(n) + 0.1
        dens /= dens.mean()
        mu = DiscretizedMeasure.from_atoms(n, np.arange(n), rng.random(n), dens)
        assert norm_l1(mu) == pytest.approx(1.0, abs=1e-9)

    def test_zero(self):
        z = DiscretizedMeasure.zero(16)
        assert norm_l1(z) == 0.0
        rep = norm_s1(z)
        assert (rep.l1, rep.s1, rep.bv_marginal, rep.variation) == (0.0, 0.0, 0.0, 0.0)

    def test_difference_of_products(self):
        mu = subtract(product_measure(32, FiberAtoms.delta(0.2)), product_measure(32, FiberAtoms.delta(0.7)))
        assert norm_l1(mu) == pytest.approx(0.5, abs=1e-12)

    def test_dirac_zero_product(self):
        rep = norm_s1(product_measure(8, FiberAtoms.delta(0.0)))
        assert rep.bv_marginal == pytest.approx(1.0)
        assert rep.l1 == pytest.approx(1.0)
        assert rep.s1 == pytest.approx(2.0)
        assert rep.variation == 0.0

    def test_half_indicator(self):
        n = 16
        cells = np.arange(n // 2)
        mu = DiscretizedMeasure.from_atoms(n, cells, np.zeros(n // 2), np.ones(n // 2))
        assert bv_marginal(mu) == pytest.approx(1.5)

    def test_two_level_path(self):
        n = 16
        y = np.r_[np.zeros(n // 2), np.ones(n // 2)]
        mu = DiscretizedMeasure.from_atoms(n, np.arange(n), y, np.ones(n))
        assert variation(mu) == pytest.approx(1.0)

    def test_product_variation_zero(self):
        assert variation(product_measure(32, FiberAtoms(pos=[[0.0, 0.5], [1.0, 0.5]]))) == 0.0

    def test_product_two_atoms_per_cell(self):
        mu = product_measure(8, FiberAtoms(pos=[[0.0, 0.5], [1.0, 0.5]]))
        assert np.all(np.diff(mu.offsets) == 2)

    def test_product_signed_rejected(self):
        with pytest.raises(ValueError):
            product_measure(8, FiberAtoms(neg=[[0.3, 1.0]]))

    def test_self_difference(self, rng):
        mu = random_signed_measure(32, rng)
        assert norm_l1(subtract(mu, mu)) == 0.0

    def test_zero_minus_one(self):
        mu = subtract(product_measure(16, FiberAtoms.delta(0.0)), product_measure(16, FiberAtoms.delta(1.0)))
        assert norm_l1(mu) == pytest.approx(1.0)

    def test_mismatched_sizes(self):
        with pytest.raises(ValueError):
            subtract(DiscretizedMeasure.zero(8), DiscretizedMeasure.zero(16))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_weak_below_strong(self, seed):
        mu = random_signed_measure(32, np.random.default_rng(seed))
        rep = norm_s1(mu)
        assert rep.l1 <= rep.s1 + 1e-15


class TestAtoms:
    def test_coalesce_merges_close_atoms(self):
        off, y, w, moved = coalesce(np.zeros(3, dtype=np.int64), np.array([0.5, 0.5 + 1e-8, 0.9]),
                                    np.array([1.0, 1.0, 1.0]), 1)
        assert y.size == 2
        assert w.sum() == pytest.approx(3.0)

    def test_cap_keeps_mass(self, rng):
        k = 200
        off, y, w, moved = coalesce(np.zeros(k, dtype=np.int64), rng.random(k), rng.random(k) + 0.1, 1, cap=64)
        assert y.size <= 64
        assert moved > 0

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_json_round_trip(self, seed):
        mu = random_signed_measure(16, np.random.default_rng(seed))
        back = DiscretizedMeasure.from_json(mu.to_json())
        assert np.array_equal(back.offsets, mu.offsets)
        assert np.array_equal(back.y, mu.y)
        assert np.array_equal(back.w, mu.w)

    def test_linearity_of_norm_scaling(self, rng):
        mu = random_signed_measure(32, rng)
        assert norm_l1(mu.scaled(-2.5)) == pytest.approx(2.5 * norm_l1(mu), rel=1e-12)
