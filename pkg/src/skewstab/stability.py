"""Perturbation families, their admissibility checks and the quantitative stability sweep."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import FixedPointError, SkewstabError
from .fibers import SamplingSpec, alpha_const, estimate_lip, linear_y
from .maps import BranchedMap, DensityVector, doubling, gauss, linear_2pow, pf_apply
from .measures import DiscretizedMeasure, cell_norms, distance_l1, norm_s1, variation
from .transfer import SkewProduct, estimate_rate, fixed_point, pushforward

log = logging.getLogger(__name__)

DEFAULT_DELTAS = tuple(2.0 ** -k for k in range(3, 11))


@dataclass(eq=False)
class PerturbationFamily:
    """``delta -> F_delta`` with a declared closeness modulus ``R(delta)``."""

    name: str
    make: Callable
    r_of_delta: Callable
    delta0: float = 1.0
    shares_partition: bool = True
    shares_branch_images: bool = True
    description: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    def at(self, delta: float) -> SkewProduct:
        delta = float(delta)
        if not 0 <= delta < self.delta0:
            raise ValueError(f"delta = {delta} outside [0, {self.delta0})")
        if delta not in self._cache:
            self._cache[delta] = self.make(delta)
        return self._cache[delta]

    def modulus_vanishes(self, ks=range(3, 21)) -> bool:
        """``|R(delta) log delta|`` decreases along ``delta = 2^-k``."""
        vals = [abs(self.r_of_delta(2.0 ** -k) * math.log(2.0 ** -k)) for k in ks]
        return all(b <= a for a, b in zip(vals, vals[1:]))


def identity_family() -> PerturbationFamily:
    base = SkewProduct(doubling(), linear_y(0.5))
    return PerturbationFamily("identity", lambda d: base, lambda d: d,
                              description="doubling map with G = y/2 for every delta")


def linear_2pow_slope_family(branches: int = 40) -> PerturbationFamily:
    """Slope ``2^i (1+delta)`` at the left end of each branch, same partition and images."""
    g = linear_y(0.5)
    return PerturbationFamily(
        "linear_2pow_slope",
        lambda d: SkewProduct(linear_2pow(branches, d), g),
        lambda d: d,
        description="linear_2pow with Moebius branches of left slope 2^i (1 + delta), G = y/2",
    )


def fiber_shift_family() -> PerturbationFamily:
    return PerturbationFamily(
        "fiber_shift",
        lambda d: SkewProduct(doubling(), linear_y(0.5, 0.0, 0.1 * d)),
        lambda d: d,
        description="doubling map with G = y/2 + 0.1 delta, declared modulus R = delta",
    )


def alpha_const_shift_family(branches: int = 40) -> PerturbationFamily:
    def make(d):
        fmap = gauss(branches)
        return SkewProduct(fmap, alpha_const(fmap, shifts=0.1 * d))

    return PerturbationFamily(
        "alpha_const_shift", make, lambda d: d,
        description="Gauss map with G = alpha_i y + 0.1 delta on branch i, declared modulus R = delta",
    )


def alpha_const_scale_family(branches: int = 40) -> PerturbationFamily:
    """Gauss map with branchwise rates ``(1 - delta) alpha_i``; fibers collapse to 0, the marginal carries the variation."""
    def make(d):
        fmap = gauss(branches)
        rates = (1.0 - d) * (0.5 - 2.0 ** (-np.arange(1, branches + 1) - 2.0))
        return SkewProduct(fmap, alpha_const(fmap, alphas=rates))

    return PerturbationFamily(
        "alpha_const_scale", make, lambda d: 0.5 * d,
        description="Gauss map with G = (1 - delta) alpha_i y on branch i",
    )


FAMILIES = {
    "identity": lambda branches=40: identity_family(),
    "linear_2pow_slope": linear_2pow_slope_family,
    "fiber_shift": lambda branches=40: fiber_shift_family(),
    "alpha_const_shift": alpha_const_shift_family,
    "alpha_const_scale": alpha_const_scale_family,
}


def get_family(name: str, branches: int = 40) -> PerturbationFamily:
    try:
        return FAMILIES[name](branches)
    except KeyError:
        raise KeyError(f"unknown perturbation family {name!r}; available: {sorted(FAMILIES)}") from None


# ---------------------------------------------------------------------------
# closeness conditions


def _preimage_profile(fmap: BranchedMap, gamma: np.ndarray):
    """Per-branch preimages and ``1/|f_i'|`` at them; NaN where ``gamma`` is outside the image."""
    idx = sorted(br.index for br in fmap.branches)
    pre = np.full((len(idx), gamma.size), np.nan)
    g = np.zeros((len(idx), gamma.size))
    for r, i in enumerate(idx):
        br = fmap.branch(i)
        inside = (gamma >= br.image_lo) & (gamma <= br.image_hi)
        x = np.clip(np.asarray(br.inverse(gamma[inside]), dtype=float), br.a, br.b)
        pre[r, inside] = x
        g[r, inside] = 1.0 / np.abs(np.asarray(br.derivative(x), dtype=float))
    return idx, pre, g


def verify_u_conditions(fam: PerturbationFamily, deltas: Sequence[float], samples: SamplingSpec = SamplingSpec(),
                        n_gamma: int = 513) -> list:
    """Sampled closeness quantities of ``F_delta`` to ``F_0`` compared with ``R(delta)``.

    Rows carry ``u21`` (sum of reciprocal-derivative differences at paired
    preimages), ``u22`` (largest preimage displacement), ``u23`` (sup
    distance of fiber maps) and the range of ``sum_i 1/|f_delta'|`` over the
    sampled points.  Preimages are paired by branch index.
    """
    gamma = np.linspace(0.0, 1.0, n_gamma)
    F0 = fam.at(0.0)
    idx0, pre0, g0 = _preimage_profile(F0.base, gamma)
    x = samples.x_grid(F0.base)
    y = samples.y
    G0 = F0.fiber(x[:, None], y[None, :])
    rows = []
    for d in deltas:
        Fd = fam.at(d)
        idx, pre, g = _preimage_profile(Fd.base, gamma)
        if idx != idx0:
            raise SkewstabError("perturbed map does not share the branch labels of the reference map")
        r = float(fam.r_of_delta(d))
        u21 = float(np.max(np.sum(np.abs(g - g0), axis=0)))
        both = ~np.isnan(pre) & ~np.isnan(pre0)
        u22 = float(np.max(np.where(both, np.abs(pre - pre0), 0.0)))
        u23 = float(np.max(np.abs(Fd.fiber(x[:, None], y[None, :]) - G0)))
        mass = np.sum(g, axis=0) + Fd.base.tail_value
        rows.append({
            "delta": float(d), "r": r, "u21": u21, "u22": u22, "u23": u23,
            "u21_ok": u21 <= r + 1e-12, "u22_ok": u22 <= r + 1e-12, "u23_ok": u23 <= r + 1e-12,
            "pf_one_min": float(mass.min()), "pf_one_max": float(mass.max()),
            "tail_bound": Fd.base.tail_value,
        })
    return rows


def _step_tests(n_cells: int, rng: np.random.Generator, count: int):
    x = (np.arange(n_cells) + 0.5) / n_cells
    tests = []
    for k in range(count):
        c = rng.uniform(0.05, 0.95)
        if k % 3 == 0:
            tests.append((x < c).astype(float))
        elif k % 3 == 1:
            tests.append((x >= c).astype(float))
        else:
            cuts = np.sort(rng.random(rng.integers(2, 9)))
            levels = rng.random(cuts.size + 1)
            tests.append(levels[np.searchsorted(cuts, x)])
    return tests


def fit_lasota_yorke(fmap: BranchedMap, n_cells: int = 1024, n_iter: int = 30, n_tests: int = 12,
                     seed: int = 0, scheme: str = "ulam") -> dict:
    """Fit ``|P^n h|_v <= lambda^n |h|_v + D |h|_1`` on nonnegative step functions.

    ``D`` is the largest late-time ratio ``|P^n h|_v / |h|_1`` (at least 1);
    ``lambda`` is the smallest per-step factor that covers the excess over
    ``D |h|_1`` at every step.
    """
    rng = np.random.default_rng(seed)
    trajectories = []
    for h in _step_tests(n_cells, rng, n_tests):
        dv = DensityVector(h)
        bv = [dv.bv_norm]
        for _ in range(n_iter):
            dv = pf_apply(fmap, dv, scheme)
            bv.append(dv.bv_norm)
        trajectories.append((np.array(bv), DensityVector(h).l1))
    late = n_iter // 2
    D = max(1.0, max(float(np.max(bv[late:])) / l1 for bv, l1 in trajectories))
    lam = 0.0
    for bv, l1 in trajectories:
        excess = bv[1:] - D * l1
        n = np.arange(1, bv.size)
        pos = excess > 1e-12 * bv[0]
        if pos.any():
            lam = max(lam, float(np.max((excess[pos] / bv[0]) ** (1.0 / n[pos]))))
    return {"D": D, "lambda": lam, "ok": lam < 1.0,
            "trajectories": [bv.tolist() for bv, _ in trajectories]}


def verify_a_conditions(fam: PerturbationFamily, deltas: Sequence[float], n_cells: int = 1024,
                        n_iter: int = 30, seed: int = 0) -> dict:
    """Uniform Lasota-Yorke fit of the base maps and uniform fiber constants over ``deltas``."""
    rows = []
    for d in deltas:
        F = fam.at(d)
        ly = fit_lasota_yorke(F.base, n_cells, n_iter, seed=seed, scheme=F.scheme)
        c = F.constants
        rows.append({"delta": float(d), "D": ly["D"], "lambda": ly["lambda"], "a1_ok": ly["ok"],
                     "alpha4": c.alpha4, "u4": c.u4, "k": c.k})
    if not rows:
        raise ValueError("no deltas given")
    sup_a4 = max(r["alpha4"] for r in rows)
    return {
        "rows": rows,
        "sup_D": max(r["D"] for r in rows),
        "sup_lambda": max(r["lambda"] for r in rows),
        "a1_ok": all(r["a1_ok"] for r in rows),
        "sup_alpha4": sup_a4,
        "sup_u4": max(r["u4"] for r in rows),
        "a2_ok": sup_a4 < 1,
    }


# ---------------------------------------------------------------------------
# operator gap and uniform variation bound


@dataclass
class BuBound:
    empirical: float
    ceiling: float
    slack: float
    per_delta: dict

    @property
    def ok(self) -> bool:
        return self.empirical <= self.ceiling + self.slack

    @property
    def value(self) -> float:
        return self.empirical

    def as_dict(self) -> dict:
        return {"empirical": self.empirical, "ceiling": self.ceiling, "slack": self.slack, "ok": self.ok,
                "per_delta": {str(k): v for k, v in self.per_delta.items()}}


def b_u_bound(fam: PerturbationFamily, deltas: Sequence[float], measures: Optional[dict] = None,
              n_cells: int = 1024, tol: float = 1e-8) -> BuBound:
    """Largest fiber variation of the invariant measures, with its analytic ceiling.

    ``measures`` maps delta to a precomputed invariant measure; missing ones
    are computed.  The ceiling is ``sup U4 / (1 - sup alpha4)``.
    """
    deltas = list(deltas)
    if not deltas:
        raise ValueError("b_u_bound needs at least one delta")
    measures = dict(measures or {})
    per = {}
    a4, u4 = [], []
    n = n_cells
    for d in deltas:
        F = fam.at(d)
        mu = measures.get(d)
        if mu is None:
            mu = fixed_point(F, tol=tol, n_cells=n_cells).measure
        n = mu.n_cells
        per[float(d)] = variation(mu)
        a4.append(F.constants.alpha4)
        u4.append(F.constants.u4)
    ceiling = max(u4) / (1 - max(a4))
    return BuBound(max(per.values()), ceiling, 2 * mu.merge_eps * n, per)


def operator_gap(fam: PerturbationFamily, delta: float, mu_delta: DiscretizedMeasure,
                 b_u: float, samples: SamplingSpec = SamplingSpec()):
    """``||(F_0* - F_delta*) mu_delta||_1`` and the bound ``C1 R(delta)``, ``C1 = |G_0|_lip + 3 B_u + 2``."""
    F0 = fam.at(0.0)
    Fd = fam.at(delta)
    gap = distance_l1(pushforward(F0, mu_delta), pushforward(Fd, mu_delta))
    c1 = estimate_lip(F0.fiber, F0.base, samples) + 3 * b_u + 2
    return gap, c1 * fam.r_of_delta(delta)


def leafwise_perturbation(fam: PerturbationFamily, delta: float, mu: DiscretizedMeasure,
                          samples: SamplingSpec = SamplingSpec()):
    """Per-cell ``||G_0(x,.)_* nu - G_delta(x,.)_* nu||_W`` and ``R(delta)(1 + |G_0|_lip)||nu||_W``.

    The bound is meant for positive ``mu``.
    """
    F0, Fd = fam.at(0.0), fam.at(delta)
    n = mu.n_cells
    x = ((np.arange(n) + 0.5) / n)[mu.cells]
    a = DiscretizedMeasure(n, mu.offsets, F0.fiber.apply_checked(x, mu.y), mu.w, mu.merge_eps)
    b = DiscretizedMeasure(n, mu.offsets, Fd.fiber.apply_checked(x, mu.y), mu.w, mu.merge_eps)
    lhs = _kernels.diff_norms(a.offsets, a.y, a.w, b.offsets, b.y, b.w)
    lip = estimate_lip(F0.fiber, F0.base, samples)
    rhs = fam.r_of_delta(delta) * (1 + lip) * cell_norms(mu)
    return lhs, rhs


# ---------------------------------------------------------------------------
# sweep


@dataclass
class StabilityRow:
    delta: float
    diff_l1: float
    variation: float
    gap: float
    c1_bound: float
    ratio: float
    converged: bool
    r: float = float("nan")
    residual: float = float("nan")
    schedule_n: int = 0
    overlay_bound: float = float("nan")

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class StabilityReport:
    family: str
    rows: list
    b_u: float
    c1: float
    rho2: float
    d1_surrogate: float
    passed: bool
    reason: str
    n_cells: int
    b_u_ceiling: float = float("nan")
    reference_converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    CSV_COLUMNS = ("delta", "diff_l1", "variation", "gap", "c1_bound", "ratio", "converged")

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("family", "b_u", "c1", "rho2", "d1_surrogate", "passed",
                                             "reason", "n_cells", "b_u_ceiling", "reference_converged")}
        d["rows"] = [r.as_dict() for r in self.rows]
        d["diagnostics"] = self.diagnostics
        return d

    def csv_rows(self) -> list:
        return [{c: getattr(r, c) for c in self.CSV_COLUMNS} for r in self.rows]


def ratio_verdict(ratios: Sequence[float], window: int = 5, spread: float = 10.0, growth: float = 1.1):
    """Boundedness of the stability ratio sequence (ordered by decreasing delta).

    Passes when every ratio is zero, or when over the last ``window`` points
    the max/min spread is at most ``spread`` and the fitted per-step growth
    factor of the log-ratios is at most ``growth``.
    """
    r = np.asarray(ratios, dtype=float)
    if r.size == 0:
        return False, "no rows"
    if not np.all(np.isfinite(r)):
        return False, "non-finite ratio"
    if np.all(r == 0):
        return True, "all differences vanish"
    tail = r[-window:]
    if np.any(tail <= 0):
        return False, "zero ratio among non-zero ones"
    sp = float(tail.max() / tail.min())
    if sp > spread:
        return False, f"max/min over the last {tail.size} points is {sp:.3g} > {spread:g}"
    if tail.size >= 2:
        slope = float(np.polyfit(np.arange(tail.size), np.log(tail), 1)[0])
        if slope > math.log(growth):
            return False, f"ratios grow by a factor {math.exp(slope):.3g} per step"
    return True, f"max/min over the last {tail.size} points is {sp:.3g}"


def stability_sweep(fam: PerturbationFamily, deltas: Sequence[float] = DEFAULT_DELTAS, n_cells: int = 2048,
                    tol: float = 1e-8, max_iter: int = 10_000, rate_trials: int = 2, seed: int = 0) -> StabilityReport:
    """Invariant measures along ``deltas`` compared with the unperturbed one.

    Non-convergent points keep their best iterate and are marked; the sweep
    never passes with such rows.
    """
    deltas = sorted((float(d) for d in deltas), reverse=True)
    bad = [d for d in deltas if not 0 < d < fam.delta0]
    if bad:
        raise ValueError(f"deltas must lie in (0, {fam.delta0}): {bad}")

    def solve(d):
        try:
            res = fixed_point(fam.at(d), tol=tol, max_iter=max_iter, n_cells=n_cells)
        except FixedPointError as exc:
            log.warning("delta=%g: %s", d, exc)
            res = exc.result
        return res

    ref = solve(0.0)
    mu0 = ref.measure
    sols = {d: solve(d) for d in deltas}
    measures = {0.0: mu0, **{d: s.measure for d, s in sols.items()}}
    bu = b_u_bound(fam, [0.0] + deltas, measures, n_cells=n_cells)
    F0 = fam.at(0.0)
    g_lip = estimate_lip(F0.fiber, F0.base)
    c1 = g_lip + 3 * bu.empirical + 2

    try:
        fit = estimate_rate(F0, mu0, trials=rate_trials, seed=seed)
        rho2, c2 = fit.rho2, fit.c2
    except SkewstabError as exc:  # pragma: no cover - diagnostic only
        log.warning("rate fit failed: %s", exc)
        rho2, c2 = float("nan"), float("nan")

    rows = []
    for d in deltas:
        sol = sols[d]
        mu = sol.measure
        r = fam.r_of_delta(d)
        diff = distance_l1(mu, mu0)
        gap, bound = operator_gap(fam, d, mu, bu.empirical)
        rows.append(StabilityRow(d, diff, bu.per_delta[d], gap, bound, diff / (r * abs(math.log(d))),
                                 bool(sol.converged and ref.converged), r, sol.residual))

    # overlay of the iterate-schedule bound with empirical constants
    big_c = max((row.gap / row.r for row in rows if row.r > 0), default=0.0)
    big_m = max(norm_s1(m, with_variation=False).s1 for m in measures.values())
    for row in rows:
        if 0 < rho2 < 1:
            n_sched = max(1, int(math.floor(math.log(row.delta) / math.log(rho2))))
            row.schedule_n = n_sched
            row.overlay_bound = row.r * big_c * n_sched + 2 * c2 * big_m * rho2 ** n_sched

    ok, reason = ratio_verdict([row.ratio for row in rows])
    if not all(row.converged for row in rows):
        ok, reason = False, "fixed point did not converge at some delta"
    return StabilityReport(
        family=fam.name, rows=rows, b_u=bu.empirical, c1=c1, rho2=rho2,
        d1_surrogate=max((row.ratio for row in rows), default=0.0), passed=ok, reason=reason,
        n_cells=n_cells, b_u_ceiling=bu.ceiling, reference_converged=ref.converged,
        diagnostics={"g_lip": g_lip, "c2": c2, "gap_constant": big_c, "sup_s1": big_m, "b_u_ok": bu.ok},
    )
