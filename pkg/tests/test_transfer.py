from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_positive_constant_marginal, random_signed_measure
from skewstab.errors import FixedPointError
from skewstab.fibers import alpha_const, constant, linear_y, lip_coeff
from skewstab.maps import doubling, gauss, linear_2pow, luroth_dyadic, mixed_slopes
from skewstab.measures import (
    DiscretizedMeasure,
    FiberAtoms,
    distance_l1,
    norm_l1,
    product_measure,
    variation,
)
from skewstab.transfer import (
    SkewProduct,
    default_init,
    equilibrium_rate,
    fixed_point,
    iterate,
    lasota_yorke_check,
    leafwise_excess,
    pushforward,
)

DOUBLING_HALF = SkewProduct(doubling(), linear_y(0.5))


def test_pushforward_of_product():
    mu = product_measure(64, FiberAtoms.delta(1.0))
    out = pushforward(DOUBLING_HALF, mu)
    assert distance_l1(out, product_measure(64, FiberAtoms.delta(0.5))) <= 1e-14


def test_pushforward_zero():
    out = pushforward(DOUBLING_HALF, DiscretizedMeasure.zero(32))
    assert out.n_atoms == 0


def test_fixed_point_doubling():
    res = fixed_point(DOUBLING_HALF, tol=1e-8, n_cells=256)
    assert res.converged
    assert res.residual <= 1e-8
    assert distance_l1(res.measure, product_measure(256, FiberAtoms.delta(0.0))) <= 1e-7
    # residual halves each step starting from the unit distance 1/2
    assert abs(res.iterations - np.log2(1e8)) <= 3


def test_fixed_point_already_invariant():
    F = SkewProduct(linear_2pow(), linear_y(0.5))
    mu0 = product_measure(256, FiberAtoms.delta(0.0))
    res = fixed_point(F, init=mu0, tol=1e-8, n_cells=256)
    assert res.iterations <= 1


def test_fixed_point_failure_carries_result():
    with pytest.raises(FixedPointError) as info:
        fixed_point(DOUBLING_HALF, tol=1e-12, max_iter=3, n_cells=64)
    assert info.value.result is not None
    assert not info.value.result.converged


def test_fixed_point_uniqueness_probe():
    F = SkewProduct(gauss(), linear_y(0.5, 0.0, 0.1))
    tol = 1e-8
    n = 256
    a = fixed_point(F, tol=tol, n_cells=n).measure
    x = (np.arange(n) + 0.5) / n
    dens = np.repeat(2 * x, 2) / 2
    init = DiscretizedMeasure.from_atoms(n, np.repeat(np.arange(n), 2), np.tile([0.9, 0.1], n), dens)
    b = fixed_point(F, init=init, tol=tol, n_cells=n).measure
    assert distance_l1(a, b) <= 3 * tol


def test_fixed_point_gives_up_when_stalled():
    # x-dependent fibers have non-atomic invariant fibers, so the atom cap bounds the accuracy
    F = SkewProduct(doubling(), linear_y(0.5, 0.25))
    with pytest.raises(FixedPointError, match="stalled") as info:
        fixed_point(F, tol=1e-14, n_cells=32, stall_iter=20)
    assert info.value.result.iterations < 10_000


@pytest.mark.parametrize("fiber", [linear_y(0.5), constant(0.0)], ids=["half", "collapse"])
def test_equilibrium_rate_doubling(fiber):
    rho = equilibrium_rate(SkewProduct(doubling(), fiber), n_cells=512)
    assert rho == pytest.approx(0.5, abs=0.05)


SYSTEMS = [
    (doubling(), "linear_y"),
    (gauss(), "alpha_const"),
    (luroth_dyadic(), "lip_coeff"),
    (mixed_slopes(), "alpha_const"),
    (linear_2pow(), "linear_y_x"),
]


def _system(fmap, kind):
    fiber = {"linear_y": linear_y(0.5), "alpha_const": alpha_const(fmap), "lip_coeff": lip_coeff(fmap),
             "linear_y_x": linear_y(0.5, 0.25)}[kind]
    return SkewProduct(fmap, fiber)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), which=st.integers(0, len(SYSTEMS) - 1))
def test_weak_and_leafwise_contraction(seed, which):
    F = _system(*SYSTEMS[which])
    mu = random_signed_measure(64, np.random.default_rng(seed))
    out = pushforward(F, mu)
    assert norm_l1(out) <= norm_l1(mu) + F.tail_bound + 1e-6
    assert leafwise_excess(F, mu).max(initial=0.0) <= 1e-12
    assert abs(out.total_mass - mu.total_mass) <= F.tail_bound * np.abs(mu.w).sum() + 1e-8


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-2, 2), b=st.floats(-2, 2))
def test_linearity(seed, a, b):
    F = _system(gauss(), "alpha_const")
    rng = np.random.default_rng(seed)
    mu, nu = random_signed_measure(32, rng), random_signed_measure(32, rng)
    lhs = pushforward(F, mu.combine(nu, a, b))
    rhs = pushforward(F, mu).combine(pushforward(F, nu), a, b)
    assert distance_l1(lhs, rhs) <= 1e-6 * (abs(a) + abs(b) + 1)


def test_lasota_yorke_constant_path():
    rep = lasota_yorke_check(DOUBLING_HALF, product_measure(64, FiberAtoms.delta(1.0)), n_steps=10)
    assert rep.variation_ok and rep.l1_non_increasing
    assert max(rep.variation) == 0.0


def test_lasota_yorke_two_level_path():
    n = 64
    y = np.r_[np.zeros(n // 2), np.ones(n // 2)]
    mu = DiscretizedMeasure.from_atoms(n, np.arange(n), y, np.ones(n))
    assert variation(mu) == pytest.approx(1.0)
    rep = lasota_yorke_check(DOUBLING_HALF, mu, n_steps=10)
    assert rep.variation_ok, rep.violations
    assert all(v <= 0.25 ** i + 1e-12 for i, v in enumerate(rep.variation))


def test_lasota_yorke_zero():
    rep = lasota_yorke_check(DOUBLING_HALF, DiscretizedMeasure.zero(32), n_steps=5)
    assert max(rep.l1) == 0 and max(rep.variation) == 0 and max(rep.s1) == 0


def test_lasota_yorke_random(rng):
    F = _system(mixed_slopes(), "alpha_const")
    rep = lasota_yorke_check(F, random_positive_constant_marginal(64, rng), n_steps=8)
    assert rep.variation_ok and rep.l1_non_increasing, rep.violations


def test_iterate_matches_repeated_pushforward(rng):
    F = _system(gauss(), "alpha_const")
    mu = random_signed_measure(32, rng)
    assert distance_l1(iterate(F, mu, 3), pushforward(F, pushforward(F, pushforward(F, mu)))) == 0.0


def test_default_init_is_probability():
    mu = default_init(64)
    assert mu.total_mass == pytest.approx(1.0)
    assert mu.is_positive()
