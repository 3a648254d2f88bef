"""Fiber maps ``G(x, y)`` and sampled estimates of their contraction constants."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import FiberRangeError, H3Error
from .maps import BranchedMap, inverse_derivative_samples, iterate_map

RANGE_TOL = 1e-12
# closer samples make difference quotients dominated by rounding
MIN_SPACING = 1e-6


@dataclass(frozen=True, eq=False)
class FiberMap:
    """Vectorized fiber action ``action(x, y)`` with optional declared constants.

    ``per_branch`` signals that the action may jump across branch boundaries,
    so horizontal quotients must stay inside one branch.
    """

    action: Callable
    per_branch: bool = False
    declared_alpha: Optional[float] = None
    declared_lip: Optional[float] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.declared_alpha is not None and not 0 <= self.declared_alpha < 1:
            raise ValueError("declared_alpha must lie in [0, 1)")
        if self.declared_lip is not None and self.declared_lip < 0:
            raise ValueError("declared_lip must be non-negative")

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.asarray(self.action(x, y), dtype=float)
        return np.broadcast_to(out, np.broadcast(x, y).shape)

    def apply_checked(self, x, y):
        out = self(x, y)
        if out.size and (out.min() < -RANGE_TOL or out.max() > 1 + RANGE_TOL):
            raise FiberRangeError(f"fiber map {self.name!r} left [0, 1]: range [{out.min()}, {out.max()}]")
        return np.clip(out, 0.0, 1.0)


def apply(gm: FiberMap, x: float, y: float) -> float:
    if not (0 <= x <= 1 and 0 <= y <= 1):
        raise ValueError(f"(x, y) = ({x}, {y}) outside the unit square")
    return float(gm.apply_checked(np.array([x]), np.array([y]))[0])


@dataclass(frozen=True)
class SamplingSpec:
    """Nested sample grids: ``n_x`` subintervals per branch, ``n_y`` fiber points (all pairs used)."""

    n_x: int = 256
    n_y: int = 33

    def __post_init__(self):
        if self.n_x < 2 or self.n_y < 2:
            raise ValueError("need at least two samples in each direction")

    @property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_y)

    @property
    def n_pairs(self) -> int:
        return self.n_y * (self.n_y - 1) // 2

    def x_grid(self, fmap: Optional[BranchedMap] = None) -> np.ndarray:
        if fmap is None:
            return np.arange(1, self.n_x) / self.n_x
        return np.concatenate([br.grid(self.n_x) for br in fmap.ordered])


def estimate_alpha(gm: FiberMap, samples: SamplingSpec = SamplingSpec(), fmap: Optional[BranchedMap] = None) -> float:
    """Largest sampled vertical quotient ``|G(x,y1) - G(x,y2)| / |y1 - y2|``."""
    x = samples.x_grid(fmap)
    y = samples.y
    i, j = np.triu_indices(y.size, 1)
    vals = gm(x[:, None], y[None, :])
    q = np.abs(vals[:, i] - vals[:, j]) / (y[j] - y[i])
    return float(q.max()) if q.size else 0.0


def estimate_lip(gm: FiberMap, fmap: BranchedMap, samples: SamplingSpec = SamplingSpec()) -> float:
    """Largest horizontal quotient between neighbouring samples of the same branch.

    Branches shorter than ``2 MIN_SPACING`` are skipped and the others are
    sampled no finer than ``MIN_SPACING``.
    """
    y = samples.y
    best = 0.0
    for br in fmap.ordered:
        x = br.grid(min(samples.n_x, int(br.length / MIN_SPACING)))
        if x.size < 2:
            continue
        vals = gm(x[:, None], y[None, :])
        q = np.abs(np.diff(vals, axis=0)) / np.diff(x)[:, None]
        best = max(best, float(q.max()))
    return best


@dataclass(frozen=True)
class FiberConstants:
    alpha: float
    g_lip: float
    alpha4: float
    u4: float
    k: int
    sup_g: float = float("nan")
    var_g: float = float("nan")

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def inverse_derivative_profile(fmap: BranchedMap, k: int, n_per_branch: int = 256):
    """Sup and variation of ``1/|(f^k)'|`` over closed per-branch grids.

    The variation includes the jumps between neighbouring branches; the
    truncated tail adds at most twice its sup-sum.
    """
    target = iterate_map(fmap, k)
    _, g = inverse_derivative_samples(target, n_per_branch)
    tail = target.tail_value
    return float(g.max()), float(np.abs(np.diff(g)).sum() + 2 * tail)


def h3_constants(gm: FiberMap, fmap: BranchedMap, k: Optional[int] = None, k_max: int = 3,
                 samples: SamplingSpec = SamplingSpec()) -> FiberConstants:
    """Constants of the ``k``-th iterate; scans ``k = 1..k_max`` when ``k`` is None.

    ``alpha4 = alpha^k sup 1/|(f^k)'|`` and
    ``u4 = |G|_lip sup 1/|(f^k)'| + V(1/|(f^k)'|)``.
    """
    alpha = estimate_alpha(gm, samples, fmap)
    g_lip = estimate_lip(gm, fmap, samples)
    # a declared rate is a supremum the samples can only approach from below
    if gm.declared_alpha is not None:
        alpha = max(alpha, gm.declared_alpha)
    if gm.declared_lip is not None:
        g_lip = max(g_lip, gm.declared_lip)
    ks = [int(k)] if k is not None else list(range(1, k_max + 1))
    if any(kk < 1 for kk in ks):
        raise ValueError("k must be >= 1")
    # sample iterates coarsely: composed maps multiply the branch count
    last = None
    for kk in ks:
        n_per = max(8, samples.n_x // (16 ** (kk - 1)))
        sup_g, var_g = inverse_derivative_profile(fmap, kk, n_per)
        a4 = alpha ** kk * sup_g
        last = FiberConstants(alpha, g_lip, a4, g_lip * sup_g + var_g, kk, sup_g, var_g)
        if a4 < 1:
            return last
    raise H3Error(f"alpha4 = {last.alpha4:.6g} >= 1 at every k up to {ks[-1]}")


# ---------------------------------------------------------------------------
# fixtures


def _branch_lookup(fmap: BranchedMap, values: np.ndarray, fallback: float):
    """Vectorized ``x -> values[i(x) - 1]`` with ``fallback`` off the represented branches."""
    idx = np.array([br.index for br in fmap.ordered])
    table = np.append(np.where(idx <= values.size, values[np.minimum(idx, values.size) - 1], fallback), fallback)

    def lookup(x):
        pos = fmap.locate(x)
        return table[np.where(pos < 0, len(idx), pos)]

    return lookup


def alpha_const(fmap: BranchedMap, alphas: Optional[Sequence[float]] = None,
                shifts: Optional[Sequence[float]] = None) -> FiberMap:
    """``G(x, y) = alpha_i y + t_i`` on branch ``i``: constant in ``x`` within each branch.

    Default ``alpha_i = 1/2 - 2^(-i-2)``, whose supremum 1/2 is not attained.
    """
    n = fmap.n_truncated
    if alphas is None:
        a = 0.5 - 2.0 ** (-np.arange(1, n + 1) - 2.0)
        a_tail = 0.5
    else:
        a = np.asarray(alphas, dtype=float)
        a_tail = float(a.max())
    t = np.zeros(a.size) if shifts is None else np.broadcast_to(np.asarray(shifts, dtype=float), a.shape).copy()
    if np.any(a < 0) or np.any(a >= 1) or np.any(t < 0) or np.any(a + t > 1):
        raise ValueError("need 0 <= alpha_i < 1, t_i >= 0 and alpha_i + t_i <= 1")
    t_tail = float(t.max()) if a_tail + t.max() <= 1 else 0.0
    alpha_of = _branch_lookup(fmap, a, a_tail)
    shift_of = _branch_lookup(fmap, t, t_tail)
    params = {"alphas": None if alphas is None else a.tolist(), "shifts": None if shifts is None else t.tolist()}
    return FiberMap(lambda x, y: alpha_of(x) * y + shift_of(x), per_branch=True,
                    declared_alpha=float(max(a.max(), a_tail)), declared_lip=0.0,
                    name="alpha_const", params=params)


def lip_coeff(fmap: BranchedMap, p: Optional[Sequence[float]] = None, q: float = 0.2) -> FiberMap:
    """``G(x, y) = h_i(x) y`` with ``h_i(x) = p_i + q (x - a_i)`` on branch ``i``."""
    n = fmap.n_truncated
    pv = 0.2 + 0.1 * (np.arange(1, n + 1) % 2) if p is None else np.asarray(p, dtype=float)
    lefts = np.array([fmap.branch(i).a if i <= n else 0.0 for i in range(1, pv.size + 1)])
    longest = max(br.length for br in fmap.branches)
    if np.any(pv < 0) or pv.max() + abs(q) * longest >= 1 or np.any(pv - abs(q) * longest < 0):
        raise ValueError("h_i must stay in [0, 1) on its branch")
    p_of = _branch_lookup(fmap, pv, float(pv.max()))
    a_of = _branch_lookup(fmap, lefts, 0.0)
    params = {"p": None if p is None else pv.tolist(), "q": q}
    return FiberMap(lambda x, y: (p_of(x) + q * (x - a_of(x))) * y, per_branch=True,
                    declared_alpha=float(pv.max() + abs(q) * longest), declared_lip=abs(q),
                    name="lip_coeff", params=params)


def linear_y(alpha: float = 0.5, c: float = 0.0, shift: float = 0.0) -> FiberMap:
    """``G(x, y) = alpha y + c x + shift``."""
    lo = shift + min(0.0, c)
    hi = alpha + shift + max(0.0, c)
    if not 0 <= alpha < 1 or lo < 0 or hi > 1:
        raise ValueError(f"alpha y + c x + shift must map the unit square into [0, 1] (range [{lo}, {hi}])")
    return FiberMap(lambda x, y: alpha * y + c * x + shift, declared_alpha=alpha, declared_lip=abs(c),
                    name="linear_y", params={"alpha": alpha, "c": c, "shift": shift})


def constant(value: float = 0.0) -> FiberMap:
    if not 0 <= value <= 1:
        raise ValueError("constant fiber value must lie in [0, 1]")
    return FiberMap(lambda x, y: np.full(np.broadcast(x, y).shape, float(value)),
                    declared_alpha=0.0, declared_lip=0.0, name="constant", params={"value": value})


FIBER_FIXTURES = ("alpha_const", "lip_coeff", "linear_y", "constant")


def fiber_from_spec(spec, fmap: BranchedMap) -> FiberMap:
    """Build a fiber map from ``{"type": name, "params": {...}}`` (or a JSON string)."""
    if isinstance(spec, str):
        spec = json.loads(spec) if spec.strip().startswith("{") else {"type": spec}
    kind = spec.get("type")
    params = dict(spec.get("params") or {})
    if kind == "linear_y":
        return linear_y(float(params.get("alpha", 0.5)), float(params.get("c", 0.0)), float(params.get("shift", 0.0)))
    if kind == "constant":
        return constant(float(params.get("value", 0.0)))
    if kind == "alpha_const":
        return alpha_const(fmap, params.get("alphas"), params.get("shifts"))
    if kind == "lip_coeff":
        return lip_coeff(fmap, params.get("p"), float(params.get("q", 0.2)))
    raise KeyError(f"unknown fiber fixture {kind!r}; available: {list(FIBER_FIXTURES)}")
