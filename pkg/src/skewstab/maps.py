"""Interval maps with countably many monotone branches and their transfer operator.

A map is stored as a finite list of branches (the first ``n_truncated`` of a
countable family) together with a bound on what the discarded tail can
contribute.  Maps whose tail has a closed form may also carry a
:class:`TailModel`, which lets the discretized operator send the tail mass
back into the interval instead of losing it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import polygamma

from .errors import BranchRangeError, DomainError

SCHEMES = ("ulam", "collocation")
KINDS = ("convex", "expanding", "pre")


def _vec(fn):
    return lambda x: fn(np.asarray(x, dtype=float))


@dataclass(frozen=True, eq=False)
class Branch:
    """One monotone branch ``f_i`` on ``(a, b)``.

    ``forward``, ``inverse`` and ``derivative`` accept numpy arrays.
    """

    index: int
    a: float
    b: float
    forward: Callable
    inverse: Callable
    derivative: Callable
    image_lo: float = field(default=None)
    image_hi: float = field(default=None)

    def __post_init__(self):
        if not (0.0 <= self.a < self.b <= 1.0):
            raise ValueError(f"branch {self.index}: need 0 <= a < b <= 1, got ({self.a}, {self.b})")
        if self.image_lo is None or self.image_hi is None:
            ends = np.asarray(self.forward(np.array([self.a, self.b])), dtype=float)
            object.__setattr__(self, "image_lo", float(min(ends)))
            object.__setattr__(self, "image_hi", float(max(ends)))

    @property
    def increasing(self) -> bool:
        mid = 0.5 * (self.a + self.b)
        return bool(np.asarray(self.derivative(np.array([mid])))[0] > 0)

    @property
    def length(self) -> float:
        return self.b - self.a

    def grid(self, n: int, closed: bool = False) -> np.ndarray:
        """Points ``a + (b - a) j / n``; interior ones only unless ``closed``."""
        j = np.arange(0, n + 1) if closed else np.arange(1, n)
        return self.a + (self.b - self.a) * j / n

    def validate(self, n_samples: int = 64) -> list:
        problems = []
        x = self.grid(n_samples)
        fx = np.asarray(self.forward(x), dtype=float)
        d = np.diff(fx)
        if not (np.all(d > 0) or np.all(d < 0)):
            problems.append(f"branch {self.index}: forward is not strictly monotone")
        back = np.asarray(self.inverse(fx), dtype=float)
        err = np.max(np.abs(back - x)) if x.size else 0.0
        if err > 1e-10:
            problems.append(f"branch {self.index}: inverse(forward(x)) off by {err:.3g}")
        if np.any(np.asarray(self.derivative(x)) == 0):
            problems.append(f"branch {self.index}: derivative vanishes")
        if self.image_lo < -1e-12 or self.image_hi > 1 + 1e-12:
            problems.append(f"branch {self.index}: image leaves [0, 1]")
        return problems


def linear_branch(index, a, b, slope, intercept) -> Branch:
    return Branch(
        index, a, b,
        forward=_vec(lambda x: slope * x + intercept),
        inverse=_vec(lambda y: (y - intercept) / slope),
        derivative=_vec(lambda x: np.full_like(x, float(slope))),
    )


def moebius_branch(index, a, b, p, q, r, s) -> Branch:
    """Branch ``x -> (p x + q) / (r x + s)``."""
    det = p * s - q * r
    return Branch(
        index, a, b,
        forward=_vec(lambda x: (p * x + q) / (r * x + s)),
        inverse=_vec(lambda y: (q - s * y) / (r * y - p)),
        derivative=_vec(lambda x: det / (r * x + s) ** 2),
    )


@dataclass(frozen=True, eq=False)
class TailModel:
    """Closed-form description of the branches beyond the truncation.

    ``image_mass(lo, hi)`` is the Lebesgue mass of points of the tail region
    mapped into ``[lo, hi]``; ``image_density(y)`` is its derivative in ``hi``,
    i.e. the sum of ``1/|f_i'|`` over tail preimages of ``y``.
    """

    lo: float
    hi: float
    image_mass: Callable
    image_density: Callable
    fiber_x: float

    @property
    def length(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True, eq=False)
class DensityVector:
    """Piecewise-constant function on ``n`` uniform cells of [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("density needs a non-empty 1-d array")
        if not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def n_cells(self) -> int:
        return self.values.size

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) / self.n_cells

    @property
    def integral(self) -> float:
        return float(self.values.sum() / self.n_cells)

    @property
    def l1(self) -> float:
        return float(np.abs(self.values).sum() / self.n_cells)

    @property
    def variation(self) -> float:
        return float(np.abs(np.diff(self.values)).sum())

    @property
    def bv_norm(self) -> float:
        return self.l1 + self.variation

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        j = np.clip(np.floor(x * self.n_cells).astype(np.int64), 0, self.n_cells - 1)
        return self.values[j]

    def normalized(self) -> "DensityVector":
        return DensityVector(self.values / self.integral)

    @classmethod
    def from_function(cls, fn, n_cells: int, subsamples: int = 1) -> "DensityVector":
        """Cell averages of ``fn`` by a midpoint rule with ``subsamples`` points per cell."""
        k = np.arange(subsamples)
        x = (np.arange(n_cells)[:, None] + (k[None, :] + 0.5) / subsamples) / n_cells
        return cls(np.asarray(fn(x), dtype=float).mean(axis=1))


@dataclass(frozen=True, eq=False)
class TransferPlan:
    """Sparse description of the discretized transfer operator on ``n`` cells.

    Each link moves the content of ``source`` cell into ``target`` cell with
    density factor ``weight``; fiber maps are evaluated at base point ``x``.
    Cells overlapping the tail region are pooled (by fraction ``tail_frac``)
    and spread over targets with density factors ``tail_density``.
    """

    n_cells: int
    scheme: str
    target: np.ndarray
    source: np.ndarray
    branch: np.ndarray
    x: np.ndarray
    weight: np.ndarray
    tail_cells: np.ndarray
    tail_frac: np.ndarray
    tail_density: np.ndarray
    tail_x: float

    @property
    def has_tail(self) -> bool:
        return self.tail_cells.size > 0

    def apply(self, h: np.ndarray) -> np.ndarray:
        n = self.n_cells
        out = np.bincount(self.target, weights=self.weight * h[self.source], minlength=n)
        if self.has_tail:
            pooled = float(np.dot(self.tail_frac, h[self.tail_cells])) / n
            out = out + self.tail_density * pooled
        return out


@dataclass(frozen=True, eq=False)
class BranchedMap:
    """Truncated countable-branch interval map.

    ``tail_bound(N)`` bounds ``sum_{i > N} sup 1/|f_i'|`` for the discarded
    branches; ``n0`` is the iterate at which a ``"pre"`` map becomes convex
    or expanding.
    """

    branches: tuple
    tail_bound: Callable = lambda n: 0.0
    kind: str = "expanding"
    n0: int = 1
    name: str = "custom"
    tail: Optional[TailModel] = None
    _plans: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.branches:
            raise ValueError("a map needs at least one branch")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        ordered = tuple(sorted(self.branches, key=lambda br: br.a))
        for left, right in zip(ordered, ordered[1:]):
            if right.a < left.b - 1e-15:
                raise ValueError(f"branches {left.index} and {right.index} overlap")
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "_order", ordered)
        object.__setattr__(self, "_lefts", np.array([br.a for br in ordered]))
        object.__setattr__(self, "_rights", np.array([br.b for br in ordered]))
        object.__setattr__(self, "_by_index", {br.index: br for br in self.branches})
        covered = float(np.sum(self._rights - self._lefts))
        tail_len = self.tail.length if self.tail is not None else self.tail_value
        if covered + tail_len < 1 - 1e-9:
            raise ValueError(f"branches cover {covered:.12g} of [0, 1]; declared tail {tail_len:.3g} is too small")

    @property
    def n_truncated(self) -> int:
        return len(self.branches)

    @property
    def tail_value(self) -> float:
        return float(self.tail_bound(self.n_truncated))

    @property
    def ordered(self) -> tuple:
        return self._order

    def branch(self, index: int) -> Branch:
        try:
            return self._by_index[index]
        except KeyError:
            raise KeyError(f"no branch with index {index}") from None

    def locate(self, x) -> np.ndarray:
        """Vectorized branch lookup: position in :attr:`ordered`, or -1."""
        x = np.asarray(x, dtype=float)
        pos = np.searchsorted(self._lefts, x, side="left") - 1
        ok = pos >= 0
        pc = np.where(ok, pos, 0)
        ok &= (x > self._lefts[pc]) & (x < self._rights[pc])
        return np.where(ok, pos, -1)

    def validate(self, n_samples: int = 64) -> list:
        problems = []
        for br in self.branches:
            problems.extend(br.validate(n_samples))
        return problems

    def plan(self, n_cells: int, scheme: str = "ulam") -> TransferPlan:
        key = (int(n_cells), scheme)
        if key not in self._plans:
            self._plans[key] = build_plan(self, n_cells, scheme)
        return self._plans[key]


# ---------------------------------------------------------------------------
# point-level operations


def branch_of(fmap: BranchedMap, x: float) -> Optional[int]:
    """Index of the branch whose open interval contains ``x``, else ``None``."""
    pos = int(fmap.locate(np.array([x]))[0])
    if pos < 0:
        return None
    return fmap.ordered[pos].index


def evaluate(fmap: BranchedMap, x: float) -> float:
    i = branch_of(fmap, x)
    if i is None:
        raise DomainError(f"x = {x!r} lies in no represented branch")
    return float(np.asarray(fmap.branch(i).forward(np.array([x])))[0])


def branch_inverse(fmap: BranchedMap, i: int, gamma: float) -> float:
    br = fmap.branch(i)
    if not (br.image_lo - 1e-12 <= gamma <= br.image_hi + 1e-12):
        raise BranchRangeError(
            f"gamma = {gamma!r} outside image [{br.image_lo}, {br.image_hi}] of branch {i}"
        )
    x = float(np.asarray(br.inverse(np.array([gamma])))[0])
    return min(max(x, br.a), br.b)


# ---------------------------------------------------------------------------
# discretized transfer operator


def _ulam_links(br: Branch, n: int):
    lo_c = int(np.floor(br.a * n)) + 1
    hi_c = int(np.ceil(br.b * n)) - 1
    cell_pts = np.arange(lo_c, hi_c + 1) / n
    lo_t = int(np.floor(br.image_lo * n)) + 1
    hi_t = int(np.ceil(br.image_hi * n)) - 1
    tgt_pts = np.asarray(br.inverse(np.arange(lo_t, hi_t + 1) / n), dtype=float)
    bps = np.concatenate(([br.a, br.b], cell_pts, tgt_pts))
    bps = np.unique(np.clip(bps, br.a, br.b))
    length = np.diff(bps)
    keep = length > 0
    mid = (0.5 * (bps[:-1] + bps[1:]))[keep]
    length = length[keep]
    src = np.clip(np.floor(mid * n).astype(np.int64), 0, n - 1)
    img = np.asarray(br.forward(mid), dtype=float)
    tgt = np.clip(np.floor(img * n).astype(np.int64), 0, n - 1)
    return tgt, src, mid, n * length


def _collocation_links(br: Branch, n: int):
    centers = (np.arange(n) + 0.5) / n
    tgt = np.flatnonzero((centers > br.image_lo) & (centers < br.image_hi))
    x = np.clip(np.asarray(br.inverse(centers[tgt]), dtype=float), br.a, br.b)
    src = np.clip(np.floor(x * n).astype(np.int64), 0, n - 1)
    g = 1.0 / np.abs(np.asarray(br.derivative(x), dtype=float))
    return tgt.astype(np.int64), src, x, g


def build_plan(fmap: BranchedMap, n_cells: int, scheme: str = "ulam") -> TransferPlan:
    """Assemble the sparse transfer plan.

    ``"ulam"`` weights a (source, target) pair by the exact Lebesgue mass of
    the source cell that lands in the target cell, so the base operator
    conserves mass cell by cell.  ``"collocation"`` evaluates the pointwise
    formula at target cell centers.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    n = int(n_cells)
    maker = _ulam_links if scheme == "ulam" else _collocation_links
    parts = []
    for br in fmap.branches:
        tgt, src, x, wt = maker(br, n)
        parts.append((tgt, src, np.full(tgt.size, br.index, dtype=np.int64), x, wt))
    tgt, src, bidx, x, wt = (np.concatenate(cols) for cols in zip(*parts))
    order = np.lexsort((x, bidx, tgt))

    tail = fmap.tail
    if tail is not None and tail.length > 0:
        first = int(np.floor(tail.lo * n))
        last = min(int(np.ceil(tail.hi * n)) - 1, n - 1)
        cells = np.arange(first, last + 1)
        frac = n * (np.minimum((cells + 1) / n, tail.hi) - np.maximum(cells / n, tail.lo))
        keep = frac > 0
        cells, frac = cells[keep], frac[keep]
        edges = np.arange(n + 1) / n
        if scheme == "ulam":
            dens = n * np.asarray(tail.image_mass(edges[:-1], edges[1:]), dtype=float) / tail.length
        else:
            dens = np.asarray(tail.image_density((edges[:-1] + edges[1:]) / 2), dtype=float) / tail.length
        tail_x = tail.fiber_x
    else:
        cells = np.zeros(0, dtype=np.int64)
        frac = np.zeros(0)
        dens = np.zeros(n)
        tail_x = 0.0

    return TransferPlan(
        n_cells=n, scheme=scheme,
        target=tgt[order], source=src[order], branch=bidx[order], x=x[order], weight=wt[order],
        tail_cells=cells.astype(np.int64), tail_frac=frac, tail_density=dens, tail_x=float(tail_x),
    )


def pf_apply(fmap: BranchedMap, h: DensityVector, scheme: str = "ulam") -> DensityVector:
    """Perron-Frobenius operator of ``fmap`` on a piecewise-constant density."""
    plan = fmap.plan(h.n_cells, scheme)
    return DensityVector(plan.apply(h.values))


# ---------------------------------------------------------------------------
# map-class checks


@dataclass
class MapClassReport:
    iterate: int
    n_branches: int
    monotone: bool
    inverse_ok: bool
    beta: float
    expanding: bool
    convex: bool
    increasing: bool
    starts_at_zero: bool
    endpoint_sum: float
    summable: bool
    zero_slope: Optional[float]
    zero_slope_ok: bool
    problems: list = field(default_factory=list)

    @property
    def convex_class(self) -> bool:
        return self.increasing and self.convex and self.starts_at_zero and self.summable and self.zero_slope_ok

    @property
    def expanding_class(self) -> bool:
        return self.monotone and self.expanding

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["convex_class"] = self.convex_class
        d["expanding_class"] = self.expanding_class
        return d


def inverse_derivative_samples(fmap: BranchedMap, n_per_branch: int = 256):
    """Closed per-branch grids (ordered in x) and ``1/|f'|`` on them."""
    xs, gs = [], []
    for br in fmap.ordered:
        x = br.grid(n_per_branch, closed=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = 1.0 / np.abs(np.asarray(br.derivative(x), dtype=float))
        ok = np.isfinite(g)
        xs.append(x[ok])
        gs.append(g[ok])
    return np.concatenate(xs), np.concatenate(gs)


def check_map_class(fmap: BranchedMap, iterate: Optional[int] = None, n_samples: int = 64) -> MapClassReport:
    """Sampled check of the convex and expanding class conditions for ``f^iterate``."""
    k = fmap.n0 if iterate is None else int(iterate)
    target = fmap if k == 1 else iterate_map(fmap, k)
    problems = target.validate(n_samples)
    monotone = not any("monotone" in p for p in problems)
    inverse_ok = not any("inverse" in p for p in problems)

    _, g = inverse_derivative_samples(target, n_samples)
    beta = float(g.max())

    convex = True
    increasing = True
    starts_at_zero = True
    endpoint_sum = 0.0
    for br in target.branches:
        x = br.grid(n_samples, closed=True)
        fx = np.asarray(br.forward(x), dtype=float)
        if np.any(np.diff(fx, 2) < -1e-10):
            convex = False
        if not br.increasing:
            increasing = False
        if abs(fx[0]) > 1e-9:
            starts_at_zero = False
        endpoint_sum += 1.0 / abs(float(np.asarray(br.derivative(np.array([br.a])))[0]))
    endpoint_sum += target.tail_value
    summable = bool(np.isfinite(endpoint_sum))

    # item (3) only binds when 0 is not an accumulation point of the partition
    first = target.ordered[0]
    zero_slope = None
    zero_slope_ok = True
    if first.a == 0.0 and len(target.ordered) > 1 and target.ordered[1].a > 1e-6:
        zero_slope = float(np.asarray(first.derivative(np.array([0.0])))[0])
        zero_slope_ok = zero_slope > 1.0

    return MapClassReport(
        iterate=k, n_branches=target.n_truncated, monotone=monotone, inverse_ok=inverse_ok,
        beta=beta, expanding=beta < 1.0, convex=convex, increasing=increasing,
        starts_at_zero=starts_at_zero, endpoint_sum=endpoint_sum, summable=summable,
        zero_slope=zero_slope, zero_slope_ok=zero_slope_ok, problems=problems,
    )


# ---------------------------------------------------------------------------
# iterates


def _compose(first: Branch, second: Branch, index: int) -> Optional[Branch]:
    lo = max(first.image_lo, second.a)
    hi = min(first.image_hi, second.b)
    if hi <= lo:
        return None
    ends = np.asarray(first.inverse(np.array([lo, hi])), dtype=float)
    a, b = float(max(min(ends), first.a)), float(min(max(ends), first.b))
    if b <= a:
        return None
    f1, f2 = first, second
    return Branch(
        index, a, b,
        forward=lambda x: f2.forward(f1.forward(x)),
        inverse=lambda y: f1.inverse(f2.inverse(y)),
        derivative=lambda x: f2.derivative(f1.forward(x)) * f1.derivative(x),
    )


def iterate_map(fmap: BranchedMap, k: int) -> BranchedMap:
    """Branch data of ``f^k`` by composing represented branches."""
    if k < 1:
        raise ValueError("iterate must be >= 1")
    if k == 1:
        return fmap
    prev = iterate_map(fmap, k - 1)
    out = []
    for first in prev.ordered:
        for second in fmap.ordered:
            br = _compose(first, second, len(out) + 1)
            if br is not None:
                out.append(br)
    sup_sum = sum(1.0 / np.min(np.abs(br.derivative(br.grid(8, closed=True)))) for br in fmap.branches)
    base_tail = fmap.tail_value
    total = sup_sum + base_tail
    # a discarded composition uses a discarded branch at one of the k steps
    bound = k * base_tail * max(1.0, total) ** (k - 1)
    missing = max(0.0, 1.0 - sum(br.length for br in out))
    return BranchedMap(
        tuple(out), tail_bound=lambda n, _b=max(bound, missing): _b,
        kind=fmap.kind, n0=1, name=f"{fmap.name}^{k}",
    )


# ---------------------------------------------------------------------------
# built-in fixtures


def doubling() -> BranchedMap:
    return BranchedMap(
        (linear_branch(1, 0.0, 0.5, 2.0, 0.0), linear_branch(2, 0.5, 1.0, 2.0, -1.0)),
        tail_bound=lambda n: 0.0, kind="expanding", name="doubling",
    )


def gauss(n_branches: int = 40, tail_closure: bool = True) -> BranchedMap:
    """Gauss map ``1/x - i`` on ``(1/(i+1), 1/i)``; expanding from the second iterate."""
    N = int(n_branches)
    brs = tuple(moebius_branch(i, 1.0 / (i + 1), 1.0 / i, -float(i), 1.0, 1.0, 0.0) for i in range(1, N + 1))
    tail = None
    if tail_closure:
        # tail preimages of y are 1/(y+i), i > N; sums are polygamma values
        def mass(lo, hi):
            return polygamma(0, np.asarray(hi) + N + 1) - polygamma(0, np.asarray(lo) + N + 1)

        def density(y):
            return polygamma(1, np.asarray(y) + N + 1)

        # mean tail preimage of y = 1/2, weighted by 1/(y+i)^2
        fx = float(-polygamma(2, 1.5 + N) / 2 / polygamma(1, 1.5 + N))
        tail = TailModel(0.0, 1.0 / (N + 1), mass, density, fx)
    return BranchedMap(
        brs, tail_bound=lambda n: float(polygamma(1, n + 1)), kind="pre", n0=2, name="gauss", tail=tail,
    )


def luroth_dyadic(n_branches: int = 40) -> BranchedMap:
    """Lüroth map with ``I_i = (2^-i, 2^(1-i)]``, ``f(x) = (t_i - x) / a_i``."""
    brs = []
    for i in range(1, int(n_branches) + 1):
        a_i = 2.0 ** -i
        t_i = 2.0 ** (1 - i)
        brs.append(linear_branch(i, a_i, t_i, -1.0 / a_i, t_i / a_i))
    return BranchedMap(tuple(brs), tail_bound=lambda n: 2.0 ** -n, kind="expanding", name="luroth_dyadic")


def linear_2pow(n_branches: int = 40, delta: float = 0.0) -> BranchedMap:
    """Full linear branches of slope ``2^i`` on intervals of length ``2^-i``.

    With ``delta > 0`` each branch becomes the Möbius map
    ``u -> (1+delta) u / (1 + delta u)`` in the local coordinate ``u``: same
    partition and images, slope ``2^i (1+delta)`` at the left endpoint.
    """
    brs = []
    for i in range(1, int(n_branches) + 1):
        a = 1.0 - 2.0 ** (1 - i)
        ell = 2.0 ** -i
        b = a + ell
        if delta == 0.0:
            brs.append(linear_branch(i, a, b, 1.0 / ell, -a / ell))
        else:
            d = float(delta)
            brs.append(moebius_branch(i, a, b, 1.0 + d, -(1.0 + d) * a, d, ell - d * a))
    return BranchedMap(tuple(brs), tail_bound=lambda n: 2.0 ** -n, kind="expanding", name="linear_2pow")


def mixed_slopes(n_branches: int = 40) -> BranchedMap:
    """Linear branches from 0 with one contracting branch (slope 1/2).

    ``(0, 1/4)`` slope 4 onto (0, 1); ``(1/4, 1/2)`` slope 1/2 onto (0, 1/8);
    the rest of (1/2, 1) is tiled by full branches of slope ``2^(j+1)``.
    Every composition of two branches has slope at least 2.
    """
    N = int(n_branches)
    if N < 3:
        raise ValueError("mixed_slopes needs at least 3 branches")
    brs = [linear_branch(1, 0.0, 0.25, 4.0, 0.0), linear_branch(2, 0.25, 0.5, 0.5, -0.125)]
    for j in range(1, N - 1):
        a = 1.0 - 2.0 ** -j
        ell = 2.0 ** (-j - 1)
        brs.append(linear_branch(j + 2, a, a + ell, 1.0 / ell, -a / ell))
    return BranchedMap(tuple(brs), tail_bound=lambda n: 2.0 ** (1 - n), kind="convex", n0=2, name="mixed_slopes")


def gauss_density(n_cells: int) -> DensityVector:
    """Cell averages of the Gauss invariant density ``1/((1+x) log 2)``."""
    edges = np.arange(n_cells + 1) / n_cells
    return DensityVector(n_cells * np.diff(np.log1p(edges)) / np.log(2.0))


MAP_FIXTURES = {
    "gauss": gauss,
    "luroth_dyadic": luroth_dyadic,
    "linear_2pow": linear_2pow,
    "mixed_slopes": mixed_slopes,
    "doubling": lambda n_branches=None: doubling(),
}


def get_map(name: str, branches: int = 40) -> BranchedMap:
    try:
        maker = MAP_FIXTURES[name]
    except KeyError:
        raise KeyError(f"unknown map fixture {name!r}; available: {sorted(MAP_FIXTURES)}") from None
    return maker(branches)


def map_from_json(doc) -> BranchedMap:
    """Build a map from ``{"branches": [{a, b, kind, params}], "tail_bound": {...}}``.

    ``kind`` is ``"linear"`` (params ``slope``, ``intercept``) or
    ``"moebius"`` (params ``p, q, r, s`` for ``(p x + q) / (r x + s)``).
    """
    if isinstance(doc, str):
        doc = json.loads(doc)
    items = doc["branches"] if isinstance(doc, dict) else doc
    brs = []
    for i, item in enumerate(items, start=1):
        kind = item.get("kind", "linear")
        p = item.get("params", {})
        if kind == "linear":
            brs.append(linear_branch(i, float(item["a"]), float(item["b"]), float(p["slope"]), float(p.get("intercept", 0.0))))
        elif kind == "moebius":
            brs.append(moebius_branch(i, float(item["a"]), float(item["b"]),
                                      *(float(p[c]) for c in "pqrs")))
        else:
            raise ValueError(f"unknown branch kind {kind!r}")
    tb = doc.get("tail_bound") if isinstance(doc, dict) else None
    if tb is None:
        tail_bound = lambda n: 0.0
    elif tb.get("type") == "geometric":
        r = float(tb["ratio"])
        if not 0 <= r < 1:
            raise ValueError("geometric tail ratio must lie in [0, 1)")
        tail_bound = lambda n, r=r: r ** (n + 1) / (1 - r)
    else:
        raise ValueError(f"unknown tail_bound type {tb.get('type')!r}")
    meta = doc if isinstance(doc, dict) else {}
    return BranchedMap(tuple(brs), tail_bound=tail_bound, kind=meta.get("kind", "expanding"),
                       n0=int(meta.get("n0", 1)), name=meta.get("name", "custom"))
