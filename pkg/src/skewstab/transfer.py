"""Transfer operator of a skew product ``F(x, y) = (f(x), G(x, y))`` on discretized measures."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DecayError, FixedPointError, H3Error
from .fibers import FiberConstants, FiberMap, h3_constants
from .maps import BranchedMap
from .measures import (
    ATOM_CAP,
    DiscretizedMeasure,
    FiberAtoms,
    cell_norms,
    coalesce,
    distance_l1,
    norm_l1,
    norm_s1,
    product_measure,
    variation,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SkewProduct:
    base: BranchedMap
    fiber: FiberMap
    constants: Optional[FiberConstants] = None
    scheme: str = "ulam"
    cap: int = ATOM_CAP

    def __post_init__(self):
        if self.constants is None:
            object.__setattr__(self, "constants", h3_constants(self.fiber, self.base))
        if not self.constants.alpha4 < 1:
            raise H3Error(f"alpha4 = {self.constants.alpha4} is not below 1")

    @property
    def tail_bound(self) -> float:
        return self.base.tail_value

    def plan(self, n_cells: int):
        return self.base.plan(n_cells, self.scheme)


def _expand(offsets, sources):
    """Atom indices of the given source cells, concatenated, and the owning slot."""
    counts = offsets[sources + 1] - offsets[sources]
    total = int(counts.sum())
    slot = np.repeat(np.arange(sources.size), counts)
    first = np.cumsum(counts) - counts
    atom = offsets[sources][slot] + (np.arange(total) - first[slot])
    return atom, slot


def pushforward_atoms(F: SkewProduct, mu: DiscretizedMeasure):
    """Raw (cell, y, w) atoms of ``F_* mu`` before coalescing, plus the tail-pool cap error."""
    n = mu.n_cells
    plan = F.plan(n)
    atom, link = _expand(mu.offsets, plan.source)
    cells = [plan.target[link]]
    ys = [F.fiber.apply_checked(plan.x[link], mu.y[atom])]
    ws = [plan.weight[link] * mu.w[atom]]
    moved = 0.0

    if plan.has_tail:
        t_atom, t_slot = _expand(mu.offsets, plan.tail_cells)
        if t_atom.size:
            pool_w = plan.tail_frac[t_slot] * mu.w[t_atom] / n
            _, py, pw, moved = coalesce(np.zeros(t_atom.size, dtype=np.int64), mu.y[t_atom], pool_w, 1,
                                        mu.merge_eps, F.cap)
            py = F.fiber.apply_checked(np.full(py.size, plan.tail_x), py)
            targets = np.flatnonzero(plan.tail_density)
            cells.append(np.repeat(targets, py.size))
            ys.append(np.tile(py, targets.size))
            ws.append(np.outer(plan.tail_density[targets], pw).ravel())
    return np.concatenate(cells), np.concatenate(ys), np.concatenate(ws), moved


def pushforward(F: SkewProduct, mu: DiscretizedMeasure) -> DiscretizedMeasure:
    """Leafwise transfer: each target leaf collects the images of its preimage leaves, weighted by ``1/|f'|``."""
    cell, y, w, moved = pushforward_atoms(F, mu)
    out = DiscretizedMeasure.from_atoms(mu.n_cells, cell, y, w, mu.merge_eps, F.cap)
    if moved:
        object.__setattr__(out, "cap_error", out.cap_error + moved)
    return out


def iterate(F: SkewProduct, mu: DiscretizedMeasure, n: int) -> DiscretizedMeasure:
    for _ in range(n):
        mu = pushforward(F, mu)
    return mu


def leafwise_excess(F: SkewProduct, mu: DiscretizedMeasure, x: Optional[np.ndarray] = None) -> np.ndarray:
    """``||G(x_j, .)_* mu|_j||_W - ||mu|_j||_W`` per cell, at base points ``x_j`` (cell centers by default)."""
    n = mu.n_cells
    if x is None:
        x = (np.arange(n) + 0.5) / n
    cells = mu.cells
    image = DiscretizedMeasure(n, mu.offsets, F.fiber.apply_checked(x[cells], mu.y), mu.w, mu.merge_eps)
    # positions may lose their order; the kernel sorts per cell
    return cell_norms(image) - cell_norms(mu)


# ---------------------------------------------------------------------------
# fixed point


@dataclass
class FixedPointResult:
    measure: DiscretizedMeasure
    iterations: int
    residual: float
    rate_estimate: float
    converged: bool
    history: list = field(default_factory=list)
    mass_defect: float = 0.0

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "rate_estimate": self.rate_estimate,
            "converged": self.converged,
            "mass_defect": self.mass_defect,
        }


def _residual_rate(residuals, skip: int = 5) -> float:
    r = np.asarray(residuals[skip:], dtype=float)
    r = r[r > 0]
    if r.size < 3:
        return float("nan")
    slope = np.polyfit(np.arange(r.size), np.log(r), 1)[0]
    return float(math.exp(slope))


def default_init(n_cells: int) -> DiscretizedMeasure:
    return product_measure(n_cells, FiberAtoms.delta(0.5))


def fixed_point(F: SkewProduct, init: Optional[DiscretizedMeasure] = None, tol: float = 1e-8,
                max_iter: int = 10_000, n_cells: int = 4096, track_norms: bool = False,
                stall_iter: Optional[int] = 200) -> FixedPointResult:
    """Iterate the normalized transfer operator until ``||F_* mu - mu||_1 <= tol``.

    Each iterate is rescaled to unit mass, which removes the small mass
    defect of a truncated map.  ``track_norms`` adds the strong norm and the
    fiber variation of every iterate to the history.  The loop gives up
    early once the best residual has not improved for ``stall_iter``
    iterations (typically the atom cap limiting the attainable accuracy).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    mu = default_init(n_cells) if init is None else init
    if not mu.is_positive() or abs(mu.total_mass - 1) > 1e-8:
        raise ValueError("initial measure must be a probability")
    history = []
    best = (math.inf, mu, 0)
    residual = math.inf
    defect = 0.0
    it = 0
    while it < max_iter:
        nu = pushforward(F, mu)
        it += 1
        mass = nu.total_mass
        defect = 1.0 - mass
        nu = nu.scaled(1.0 / mass)
        residual = distance_l1(nu, mu)
        row = {"n": it, "residual": residual, "l1": norm_l1(nu)}
        if track_norms:
            rep = norm_s1(nu)
            row.update(s1=rep.s1, variation=rep.variation)
        history.append(row)
        mu = nu
        if residual < best[0]:
            best = (residual, nu, it)
        if residual <= tol:
            break
        if stall_iter is not None and it - best[2] >= stall_iter:
            break
    rate = _residual_rate([h["residual"] for h in history])
    if residual <= tol:
        return FixedPointResult(mu, it, residual, rate, True, history, defect)
    res = FixedPointResult(best[1], best[2], best[0], rate, False, history, defect)
    why = "stalled" if it < max_iter else "stopped"
    raise FixedPointError(f"residual {best[0]:.3g} exceeds tol {tol:g}; {why} after {it} iterations "
                          f"(cap error {mu.cap_error:.3g})", res)


# ---------------------------------------------------------------------------
# convergence to equilibrium


@dataclass
class RateFit:
    rho2: float
    c2: float
    trials: list
    decay_observed: bool

    def as_dict(self) -> dict:
        return {"rho2": self.rho2, "c2": self.c2, "decay_observed": self.decay_observed,
                "trials": [{k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in t.items()}
                           for t in self.trials]}


def random_probability(n_cells: int, rng: np.random.Generator, n_atoms: int = 3, n_modes: int = 4,
                       merge_eps: float = 1e-6) -> DiscretizedMeasure:
    """Smooth positive random density times a random fiber probability."""
    x = (np.arange(n_cells) + 0.5) / n_cells
    coef = rng.uniform(-1, 1, n_modes) / (2 * n_modes)
    dens = 1 + sum(c * np.cos(math.pi * (k + 1) * x) for k, c in enumerate(coef))
    dens = dens / dens.mean()
    ys = rng.random(n_atoms)
    ws = rng.dirichlet(np.ones(n_atoms))
    cell = np.repeat(np.arange(n_cells), n_atoms)
    return DiscretizedMeasure.from_atoms(n_cells, cell, np.tile(ys, n_cells), np.outer(dens, ws).ravel(), merge_eps)


def _fit_window(logs: np.ndarray, skip: int = 5, rel: float = 0.05):
    """Start of the fit window: first index past ``skip`` where consecutive slopes agree within ``rel``."""
    s = np.diff(logs)
    for i in range(skip, s.size - 1):
        if abs(s[i + 1] - s[i]) < rel * abs(s[i]):
            return i
    return min(skip, max(0, logs.size - 3))


def estimate_rate(F: SkewProduct, mu_star: DiscretizedMeasure, trials: int = 3, n_steps: int = 40,
                  seed: int = 0, floor: Optional[float] = None) -> RateFit:
    """Fit the decay of ``||F^n_*(nu - mu*)||_1`` for random product probabilities ``nu``.

    Distances below ``floor`` are dominated by the error in ``mu*`` and are
    not fitted; by default the floor is 100 times the one-step residual of
    ``mu*``.  The fit also stops at the first increase of the distance.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    n = mu_star.n_cells
    if floor is None:
        step = pushforward(F, mu_star)
        step = step.scaled(1.0 / step.total_mass) if step.total_mass > 0 else step
        floor = max(1e-11, 100 * distance_l1(step, mu_star))
    out = []
    for t in range(trials):
        nu = random_probability(n, rng, merge_eps=mu_star.merge_eps)
        s1_0 = norm_s1(nu - mu_star, with_variation=False).s1
        d = [distance_l1(nu, mu_star)]
        if d[0] <= floor:
            out.append({"trial": t, "skipped": True})
            continue
        for _ in range(n_steps):
            nu = pushforward(F, nu)
            d.append(distance_l1(nu, mu_star))
            if d[-1] <= floor:
                break
        d = np.array(d)
        end = int(np.flatnonzero(d > floor)[-1]) + 1
        rises = np.flatnonzero(np.diff(d[:end]) >= 0)
        rises = rises[rises >= 5]
        if rises.size:
            end = int(rises[0]) + 1
        d_fit = d[:end]
        logs = np.log(d_fit)
        if logs.size < 3:
            # collapsed to the floor almost at once: faster than any rate we can fit
            out.append({"trial": t, "skipped": False, "slope": -np.inf, "start": 0, "norms": d, "s1_0": s1_0})
            continue
        start = _fit_window(logs)
        idx = np.arange(start, logs.size)
        slope = float(np.polyfit(idx, logs[idx], 1)[0]) if idx.size >= 2 else float(logs[-1] - logs[-2])
        out.append({"trial": t, "skipped": False, "slope": slope, "start": int(start), "norms": d, "s1_0": s1_0})

    fitted = [o for o in out if not o["skipped"]]
    if not fitted:
        return RateFit(0.0, 0.0, out, True)
    slopes = np.array([o["slope"] for o in fitted])
    finite = slopes[np.isfinite(slopes)]
    slope = float(finite.max()) if finite.size else -np.inf
    decay = slope < 0
    rho = float(math.exp(slope)) if np.isfinite(slope) else 0.0
    c2 = 0.0
    if decay and rho > 0:
        for o in fitted:
            k = np.arange(o["norms"].size)
            c2 = max(c2, float(np.max(o["norms"] / (rho ** k * o["s1_0"]))))
    return RateFit(rho, c2, out, decay)


def equilibrium_rate(F: SkewProduct, trials: int = 3, mu_star: Optional[DiscretizedMeasure] = None,
                     n_cells: int = 1024, seed: int = 0, n_steps: int = 40) -> float:
    """Per-step decay factor ``rho2`` of zero-mass measures ``nu - mu*``.

    The slowest trial wins.  Raises :class:`DecayError` when no decay is seen.
    """
    if mu_star is None:
        mu_star = fixed_point(F, n_cells=n_cells).measure
    fit = estimate_rate(F, mu_star, trials, n_steps=n_steps, seed=seed)
    if not fit.decay_observed:
        raise DecayError(f"no decay of ||F^n(nu - mu*)||_1: fitted factor {fit.rho2:.4g}")
    return fit.rho2


# ---------------------------------------------------------------------------
# Lasota-Yorke type checks


@dataclass
class LasotaYorkeReport:
    l1: list
    l1_non_increasing: bool
    variation: list
    variation_bound: list
    variation_ok: bool
    s1: list
    r2: float
    big_r2: float
    c2: float
    violations: list

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _fit_ly(s1, l1_0):
    """Surrogate ``(R2, r2, C2)`` with ``s1_n <= R2 r2^n s1_0 + (C2 + 1) l1_0``."""
    s1 = np.asarray(s1, dtype=float)
    if s1[0] == 0 or l1_0 == 0:
        return 0.0, 0.0, 0.0
    tail = s1[len(s1) * 2 // 3:]
    c2 = max(0.0, float(tail.max()) / l1_0 - 1.0)
    excess = s1 - (c2 + 1.0) * l1_0
    n = np.arange(s1.size)
    pos = excess > 0
    if pos.sum() >= 2:
        slope = np.polyfit(n[pos], np.log(excess[pos]), 1)[0]
        r2 = float(min(math.exp(slope), 1.0))
    else:
        r2 = 0.5
    big_r2 = float(np.max(np.where(pos, excess, 0.0) / (r2 ** n * s1[0]))) if r2 > 0 else 0.0
    return big_r2, r2, c2


def lasota_yorke_check(F: SkewProduct, mu: DiscretizedMeasure, n_steps: int = 20, slack: float = 1e-6) -> LasotaYorkeReport:
    """Weak-norm monotonicity, the fiber-variation bound for ``F^k`` and fitted strong-norm constants.

    The variation bound ``alpha4^n V(mu) + U4/(1-alpha4) ||mu||_1`` is only
    claimed for positive measures with constant marginal; it is evaluated
    for any input and violations are listed.
    """
    c = F.constants
    tail = F.tail_bound
    l1, s1 = [], []
    cur = mu
    for _ in range(n_steps + 1):
        rep = norm_s1(cur, with_variation=False)
        l1.append(rep.l1)
        s1.append(rep.s1)
        cur = pushforward(F, cur)
    violations = []
    for i in range(1, len(l1)):
        if l1[i] > l1[i - 1] + tail + slack:
            violations.append(f"||F^{i} mu||_1 = {l1[i]:.12g} exceeds previous {l1[i - 1]:.12g}")

    v0 = variation(mu)
    m1 = l1[0]
    var, bound = [], []
    cur = mu
    for i in range(n_steps + 1):
        v = variation(cur)
        b = c.alpha4 ** i * v0 + c.u4 / (1 - c.alpha4) * m1
        var.append(v)
        bound.append(b)
        if v > b + slack:
            violations.append(f"V(Fbar^{i} mu) = {v:.12g} exceeds bound {b:.12g}")
        if i < n_steps:
            cur = iterate(F, cur, c.k)
    big_r2, r2, c2 = _fit_ly(s1, m1)
    return LasotaYorkeReport(
        l1=l1, l1_non_increasing=not any(v.startswith("||") for v in violations),
        variation=var, variation_bound=bound, variation_ok=not any(v.startswith("V(") for v in violations),
        s1=s1, r2=r2, big_r2=big_r2, c2=c2, violations=violations,
    )
