"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from conftest import (
    StepFunction,
    composed_integral,
    lp_dual_norm,
    random_positive_constant_marginal,
    random_signed_measure,
)
from skewstab.errors import H3Error
from skewstab.fibers import alpha_const, constant, estimate_lip, lip_coeff, linear_y
from skewstab.maps import DensityVector, doubling, gauss, linear_2pow, luroth_dyadic, mixed_slopes, pf_apply
from skewstab.measures import DiscretizedMeasure, FiberAtoms, distance_l1, norm_l1, product_measure, w1
from skewstab.stability import DEFAULT_DELTAS, b_u_bound, get_family, operator_gap, stability_sweep
from skewstab.transfer import SkewProduct, fixed_point, lasota_yorke_check, leafwise_excess, pushforward

SWEEP_FAMILIES = ("linear_2pow_slope", "fiber_shift")


def announce(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")


def all_systems():
    """Every map fixture paired with every fiber fixture that admits contraction constants."""
    out, skipped = [], []
    for make in (doubling, gauss, luroth_dyadic, linear_2pow, mixed_slopes):
        fmap = make()
        fibers = (linear_y(0.5), linear_y(0.5, 0.25), alpha_const(fmap), lip_coeff(fmap), constant(0.3))
        for gm in fibers:
            try:
                out.append((f"{fmap.name}/{gm.name}", SkewProduct(fmap, gm)))
            except H3Error:
                skipped.append(f"{fmap.name}/{gm.name}")
    return out, skipped


def test_gauss_density_recovery(capsys):
    n = 4096
    start = time.perf_counter()
    res = fixed_point(SkewProduct(gauss(40), linear_y(0.5)), tol=1e-8, n_cells=n)
    elapsed = time.perf_counter() - start
    # L1 distance of the piecewise-constant marginal to the true density, 64 midpoints per cell
    sub = 64
    x = (np.arange(n * sub) + 0.5) / (n * sub)
    exact = 1.0 / ((1.0 + x) * math.log(2.0))
    dist = float(np.abs(np.repeat(res.measure.cell_mass, sub) - exact).mean())
    ok = res.converged and dist <= 0.02 and elapsed <= 60
    announce(capsys, 1, ok, f"Gauss marginal L1 error {dist:.3e} (<= 0.02), {elapsed:.2f} s (<= 60 s)")
    assert ok


def test_exact_skew_fixed_points(capsys):
    tol = 1e-8
    n = 1024
    res = fixed_point(SkewProduct(doubling(), linear_y(0.5)), tol=tol, n_cells=n)
    dist = distance_l1(res.measure, product_measure(n, FiberAtoms.delta(0.0)))
    fam = get_family("fiber_shift")
    mu0 = fixed_point(fam.at(0.0), tol=tol, n_cells=n).measure
    worst = 0.0
    for d in DEFAULT_DELTAS:
        diff = distance_l1(fixed_point(fam.at(d), tol=tol, n_cells=n).measure, mu0)
        worst = max(worst, abs(diff / (0.2 * d) - 1))
    ok = dist <= 10 * tol and worst <= 0.02
    announce(capsys, 2, ok, f"doubling distance to m x delta_0 {dist:.2e} (<= {10 * tol:g}); "
                            f"fiber shift worst relative error vs 0.2 delta {worst:.2e} (<= 2%)")
    assert ok


def test_w1_oracle_equivalence(capsys):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        total = int(rng.integers(2, 7))
        ka = int(rng.integers(1, total))
        y = rng.random(total)
        if rng.random() < 0.3:
            y = np.round(y, 1)
        w = rng.uniform(0.05, 2.0, total) * np.where(rng.random(total) < 0.3, -1.0, 1.0)
        a = FiberAtoms.from_signed(y[:ka], w[:ka])
        b = FiberAtoms.from_signed(y[ka:], w[ka:])
        ref = lp_dual_norm(y, np.concatenate([w[:ka], -w[ka:]]))
        worst = max(worst, abs(w1(a, b) - ref))
    ok = worst <= 1e-9
    announce(capsys, 3, ok, f"200 random pairs, worst |w1 - LP| = {worst:.2e} (<= 1e-9)")
    assert ok


def test_weak_contraction_suite(capsys):
    systems, skipped = all_systems()
    rng = np.random.default_rng(7)
    worst_excess, worst_leaf = -math.inf, -math.inf
    for _, F in systems:
        for _ in range(100):
            mu = random_signed_measure(64, rng)
            out = pushforward(F, mu)
            worst_excess = max(worst_excess, norm_l1(out) - norm_l1(mu) - F.tail_bound)
            worst_leaf = max(worst_leaf, float(leafwise_excess(F, mu).max(initial=0.0)))
    ok = worst_excess <= 1e-6 and worst_leaf <= 1e-12
    announce(capsys, 4, ok, f"{len(systems)} systems x 100 signed measures: worst ||F mu|| - ||mu|| - tail "
                            f"{worst_excess:.2e} (<= 1e-6), worst leafwise excess {worst_leaf:.2e} (<= 1e-12)"
                            + (f"; no contraction constants for {skipped}" if skipped else ""))
    assert ok


def test_variation_bound_suite(capsys):
    systems, _ = all_systems()
    rng = np.random.default_rng(11)
    n = 64
    two_level = DiscretizedMeasure.from_atoms(n, np.arange(n), np.r_[np.zeros(n // 2), np.ones(n // 2)], np.ones(n))
    failures = []
    worst = 0.0
    for name, F in systems:
        for mu in (random_positive_constant_marginal(n, rng), two_level):
            rep = lasota_yorke_check(F, mu, n_steps=20)
            # n = 0 is an identity, so the informative ratio starts at n = 1
            ratios = [v / b for v, b in zip(rep.variation[1:], rep.variation_bound[1:]) if b > 0]
            worst = max([worst, *ratios])
            if not rep.variation_ok:
                failures.append((name, rep.violations[:2]))
    ok = not failures
    announce(capsys, 5, ok, f"{len(systems)} systems, 1 <= n <= 20: max V / bound = {worst:.4f}"
                            + (f"; violations {failures}" if failures else ""))
    assert ok


def test_operator_gap_bound(capsys):
    n = 1024
    lines, ok = [], True
    for name in SWEEP_FAMILIES:
        fam = get_family(name)
        measures = {d: fixed_point(fam.at(d), n_cells=n).measure for d in (0.0, *DEFAULT_DELTAS)}
        bu = b_u_bound(fam, list(measures), measures)
        F0 = fam.at(0.0)
        c1 = estimate_lip(F0.fiber, F0.base) + 3 * bu.empirical + 2
        worst = 0.0
        for d in DEFAULT_DELTAS:
            gap, bound = operator_gap(fam, d, measures[d], bu.empirical)
            assert bound == pytest.approx(c1 * fam.r_of_delta(d))
            worst = max(worst, gap / bound)
        ok &= worst <= 1.0
        lines.append(f"{name}: C1 = {c1:.4g}, max gap / (C1 R) = {worst:.3f}")
    announce(capsys, 6, ok, "; ".join(lines))
    assert ok


@pytest.fixture(scope="module")
def sweeps():
    out = {}
    for name in SWEEP_FAMILIES:
        start = time.perf_counter()
        rep = stability_sweep(get_family(name), DEFAULT_DELTAS, n_cells=2048)
        out[name] = (rep, time.perf_counter() - start)
    return out


def test_stability_sweep_boundedness(capsys, sweeps):
    lines, ok = [], True
    for name, (rep, elapsed) in sweeps.items():
        ratios = np.array([r.ratio for r in rep.rows])
        tail = ratios[-5:]
        spread = float(tail.max() / tail.min())
        growth = math.exp(np.polyfit(np.arange(tail.size), np.log(tail), 1)[0])
        fam_ok = rep.passed and spread <= 10 and growth <= 1.1 and elapsed <= 600
        ok &= fam_ok
        lines.append(f"{name}: max/min {spread:.3g} (<= 10), growth/step {growth:.3g} (<= 1.1), {elapsed:.1f} s")
    announce(capsys, 7, ok, "; ".join(lines))
    assert ok


def test_pf_duality(capsys):
    rng = np.random.default_rng(99)
    n = 1024
    worst = 0.0
    for make in (doubling, luroth_dyadic, linear_2pow):
        fmap = make()
        for _ in range(50):
            h1 = StepFunction.random(rng)
            h2 = StepFunction.random(rng, lo=-1.0, hi=3.0)
            # P h2 is constant on cells, so cell averages of h1 give the left side exactly
            lhs = float(np.mean(h1.cell_averages(n) * pf_apply(fmap, DensityVector(h2.cell_averages(n))).values))
            rhs = composed_integral(fmap, h1, h2)
            worst = max(worst, abs(lhs - rhs) / (5 / n * (h1.sup * h2.variation + 1)))
    ok = worst <= 1.0
    announce(capsys, 8, ok, f"3 fixtures x 50 pairs: worst error / tolerance = {worst:.4f} (<= 1)")
    assert ok
