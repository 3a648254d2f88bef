"""Shared oracles and random generators for the test-suite.

The oracles are deliberately independent of the package: the dual norm is
solved as a linear program with scipy, and integrals of step functions are
computed from their exact antiderivatives.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from skewstab.measures import DiscretizedMeasure


def lp_dual_norm(y, w) -> float:
    """``sup { sum w_k phi(y_k) : |phi| <= 1, Lip(phi) <= 1 }`` by linear programming."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if y.size == 0:
        return 0.0
    pts = np.unique(y)
    c = np.array([w[y == p].sum() for p in pts])
    rows, rhs = [], []
    for k, l in itertools.combinations(range(pts.size), 2):
        r = np.zeros(pts.size)
        r[k], r[l] = 1.0, -1.0
        d = abs(pts[k] - pts[l])
        rows += [r, -r]
        rhs += [d, d]
    res = linprog(-c, A_ub=np.array(rows) if rows else None, b_ub=np.array(rhs) if rhs else None,
                  bounds=[(-1.0, 1.0)] * pts.size, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0
    return float(-res.fun)


class StepFunction:
    """Right-continuous step function on [0, 1] with breakpoints ``edges``."""

    def __init__(self, edges, values):
        self.edges = np.asarray(edges, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.cum = np.concatenate([[0.0], np.cumsum(np.diff(self.edges) * self.values)])

    @classmethod
    def random(cls, rng, max_steps=12, lo=-1.0, hi=1.0):
        k = int(rng.integers(1, max_steps + 1))
        inner = np.sort(rng.random(k - 1))
        return cls(np.concatenate([[0.0], inner, [1.0]]), rng.uniform(lo, hi, k))

    def __call__(self, x):
        idx = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.values.size - 1)
        return self.values[idx]

    def antiderivative(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        idx = np.clip(np.searchsorted(self.edges, t, side="right") - 1, 0, self.values.size - 1)
        return self.cum[idx] + (t - self.edges[idx]) * self.values[idx]

    def cell_averages(self, n):
        e = np.linspace(0.0, 1.0, n + 1)
        return np.diff(self.antiderivative(e)) * n

    @property
    def sup(self):
        return float(np.abs(self.values).max())

    @property
    def variation(self):
        return float(np.abs(np.diff(self.values)).sum())


def composed_integral(fmap, h1: StepFunction, h2: StepFunction) -> float:
    """Exact ``int (h1 o f) h2 dm`` for a map with affine branches (tail ignored)."""
    total = 0.0
    for br in fmap.ordered:
        cuts = np.concatenate([[br.a], h2.edges[(h2.edges > br.a) & (h2.edges < br.b)], [br.b]])
        for u, v in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (u + v)
            slope = float(br.derivative(np.array([mid]))[0])
            fu, fv = br.forward(np.array([u, v]))
            total += float(h2(mid)) * (h1.antiderivative(fv) - h1.antiderivative(fu)) / slope
    return float(total)


def random_signed_measure(n, rng, max_atoms=3) -> DiscretizedMeasure:
    cnt = rng.integers(0, max_atoms + 1, n)
    cell = np.repeat(np.arange(n), cnt)
    return DiscretizedMeasure.from_atoms(n, cell, rng.random(cell.size), rng.normal(size=cell.size))


def random_positive_constant_marginal(n, rng, k=3) -> DiscretizedMeasure:
    """Positive measure whose fibers are probabilities, so the marginal density is 1."""
    y = rng.random((n, k))
    w = rng.dirichlet(np.ones(k), n)
    return DiscretizedMeasure.from_atoms(n, np.repeat(np.arange(n), k), y.ravel(), w.ravel())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
