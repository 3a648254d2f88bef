"""Signed measures on [0, 1] x [0, 1] with an explicit cellwise disintegration.

The base interval is cut into ``n_cells`` uniform cells.  On cell ``j`` the
measure is ``phi_j dx x nu_j`` where ``nu_j`` is a finite signed combination of
point masses in the fiber, normalized so that the signed mass of ``nu_j`` is
``phi_j``.  In other words ``nu_j`` is the restriction of the measure to a leaf
in cell ``j``, and ``phi`` is the density of the marginal.

All atoms live in one flat CSR layout (``offsets``, ``y``, ``w``) with signed
weights; the positive and negative lists of a cell are sign views of it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import _kernels
from .maps import DensityVector

log = logging.getLogger(__name__)

MERGE_EPS = 1e-6
ATOM_CAP = 64


@dataclass(frozen=True, eq=False)
class FiberAtoms:
    """Signed atomic measure on [0, 1] split into its Jordan parts.

    ``pos`` and ``neg`` are ``(k, 2)`` arrays of ``(y, w)`` rows with ``w > 0``.
    """

    pos: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    neg: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    merge_eps: float = MERGE_EPS

    def __post_init__(self):
        for name in ("pos", "neg"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1, 2)
            if arr.size and (np.any(arr[:, 0] < 0) or np.any(arr[:, 0] > 1)):
                raise ValueError(f"{name} atoms must lie in [0, 1]")
            if arr.size and np.any(arr[:, 1] <= 0):
                raise ValueError(f"{name} weights must be strictly positive")
            object.__setattr__(self, name, arr)

    @classmethod
    def delta(cls, y: float, w: float = 1.0) -> "FiberAtoms":
        return cls(pos=[[y, w]]) if w > 0 else cls(neg=[[y, -w]])

    @classmethod
    def from_signed(cls, y, w, merge_eps: float = MERGE_EPS) -> "FiberAtoms":
        y = np.asarray(y, dtype=float)
        w = np.asarray(w, dtype=float)
        p, q = w > 0, w < 0
        return cls(np.column_stack([y[p], w[p]]), np.column_stack([y[q], -w[q]]), merge_eps)

    def signed(self):
        """Support points and signed weights, positives first."""
        y = np.concatenate([self.pos[:, 0], self.neg[:, 0]])
        w = np.concatenate([self.pos[:, 1], -self.neg[:, 1]])
        return y, w

    @property
    def mass(self) -> float:
        return float(self.pos[:, 1].sum() - self.neg[:, 1].sum())

    def normalized(self) -> "FiberAtoms":
        """Coalesce each sign list at ``merge_eps``."""
        y, w = self.signed()
        cell = np.zeros(y.size, dtype=np.int64)
        off, yy, ww, _ = coalesce(cell, y, w, 1, self.merge_eps, cap=None)
        return FiberAtoms.from_signed(yy, ww, self.merge_eps)


def _bl(y, w) -> float:
    return float(_kernels.bl_norm(np.ascontiguousarray(y, dtype=float), np.ascontiguousarray(w, dtype=float)))


def w1(a: FiberAtoms, b: Optional[FiberAtoms] = None) -> float:
    """Bounded-Lipschitz distance ``sup |int h da - int h db|`` over ``Lip(h) <= 1``, ``|h| <= 1``.

    Solved exactly as one program over the joint support of ``a - b``.
    """
    ya, wa = a.signed()
    if b is None:
        return _bl(ya, wa)
    yb, wb = b.signed()
    # both orientations, so that rounding cannot break the symmetry w1(a, b) == w1(b, a)
    return max(_bl(np.concatenate([ya, yb]), np.concatenate([wa, -wb])),
               _bl(np.concatenate([yb, ya]), np.concatenate([wb, -wa])))


def coalesce(cell, y, w, n_cells: int, merge_eps: float = MERGE_EPS, cap: Optional[int] = ATOM_CAP):
    """Merge atoms closer than ``merge_eps`` within each (cell, sign) list.

    Merged atoms sum their weights and sit at the weighted mean position.
    Lists longer than ``cap`` keep their heaviest atoms; each dropped atom is
    absorbed into the nearest kept one.  Returns ``(offsets, y, w, moved)``
    where ``moved`` bounds the transport cost of the cap step.
    """
    cell = np.asarray(cell, dtype=np.int64)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    keep = w != 0
    cell, y, w = cell[keep], y[keep], w[keep]
    if cell.size == 0:
        return np.zeros(n_cells + 1, dtype=np.int64), np.zeros(0), np.zeros(0), 0.0

    neg = w < 0
    order = np.lexsort((y, neg, cell))
    cell, y, w, neg = cell[order], y[order], w[order], neg[order]

    start = np.ones(cell.size, dtype=bool)
    start[1:] = (cell[1:] != cell[:-1]) | (neg[1:] != neg[:-1]) | (np.diff(y) > merge_eps)
    heads = np.flatnonzero(start)
    W = np.add.reduceat(w, heads)
    Y = np.clip(np.add.reduceat(w * y, heads) / W, 0.0, 1.0)
    C = cell[heads]
    S = neg[heads]
    nz = W != 0
    W, Y, C, S = W[nz], Y[nz], C[nz], S[nz]

    moved = 0.0
    if cap is not None and W.size > cap:
        group = C * 2 + S
        bounds = np.flatnonzero(np.r_[True, group[1:] != group[:-1], True])
        if np.any(np.diff(bounds) > cap):
            gc = C[bounds[:-1]]
            Y, W, nb, moved = _kernels.cap_groups(bounds.astype(np.int64), Y, W, int(cap))
            C = np.repeat(gc, np.diff(nb))
            log.debug("atom cap %d hit; transport moved %.3g", cap, moved)

    order = np.lexsort((Y, C))
    C, Y, W = C[order], Y[order], W[order]
    offsets = np.zeros(n_cells + 1, dtype=np.int64)
    np.cumsum(np.bincount(C, minlength=n_cells), out=offsets[1:])
    return offsets, Y, W, moved


@dataclass(frozen=True, eq=False)
class NormReport:
    l1: float
    s1: float
    bv_marginal: float
    variation: float

    def as_dict(self) -> dict:
        return {"l1": self.l1, "s1": self.s1, "bv_marginal": self.bv_marginal, "variation": self.variation}


@dataclass(frozen=True, eq=False)
class DiscretizedMeasure:
    """Cellwise disintegrated signed measure in CSR form.

    Atoms of cell ``j`` are ``y[offsets[j]:offsets[j+1]]`` with signed
    weights ``w``; their total is the marginal density value on that cell.
    Use :meth:`from_atoms` to build from raw (cell, y, w) triples.
    """

    n_cells: int
    offsets: np.ndarray
    y: np.ndarray
    w: np.ndarray
    merge_eps: float = MERGE_EPS
    cap_error: float = 0.0

    def __post_init__(self):
        off = np.ascontiguousarray(self.offsets, dtype=np.int64)
        if off.shape != (self.n_cells + 1,) or off[0] != 0 or np.any(np.diff(off) < 0):
            raise ValueError("offsets must be a non-decreasing array of length n_cells + 1 starting at 0")
        y = np.ascontiguousarray(self.y, dtype=float)
        w = np.ascontiguousarray(self.w, dtype=float)
        if y.shape != w.shape or y.size != off[-1]:
            raise ValueError("y and w must have offsets[-1] entries")
        if y.size and (y.min() < 0 or y.max() > 1):
            raise ValueError("atom positions must lie in [0, 1]")
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_atoms(cls, n_cells, cell, y, w, merge_eps=MERGE_EPS, cap=ATOM_CAP) -> "DiscretizedMeasure":
        cell = np.asarray(cell, dtype=np.int64)
        if cell.size and (cell.min() < 0 or cell.max() >= n_cells):
            raise ValueError("cell index out of range")
        off, yy, ww, moved = coalesce(cell, y, w, n_cells, merge_eps, cap)
        return cls(n_cells, off, yy, ww, merge_eps, moved)

    @classmethod
    def zero(cls, n_cells: int, merge_eps: float = MERGE_EPS) -> "DiscretizedMeasure":
        return cls(n_cells, np.zeros(n_cells + 1, dtype=np.int64), np.zeros(0), np.zeros(0), merge_eps)

    @classmethod
    def from_fibers(cls, fibers: Iterable[FiberAtoms], merge_eps=MERGE_EPS) -> "DiscretizedMeasure":
        fibers = list(fibers)
        cells, ys, ws = [], [], []
        for j, fa in enumerate(fibers):
            y, w = fa.signed()
            cells.append(np.full(y.size, j, dtype=np.int64))
            ys.append(y)
            ws.append(w)
        if not fibers:
            raise ValueError("need at least one cell")
        return cls.from_atoms(len(fibers), np.concatenate(cells), np.concatenate(ys), np.concatenate(ws), merge_eps)

    # -- views ------------------------------------------------------------

    @property
    def cells(self) -> np.ndarray:
        """Cell index of every atom."""
        return np.repeat(np.arange(self.n_cells), np.diff(self.offsets))

    @property
    def cell_mass(self) -> np.ndarray:
        return np.bincount(self.cells, weights=self.w, minlength=self.n_cells)

    @property
    def marginal(self) -> DensityVector:
        return DensityVector(self.cell_mass)

    @property
    def total_mass(self) -> float:
        return float(self.w.sum() / self.n_cells)

    @property
    def n_atoms(self) -> int:
        return int(self.y.size)

    def fiber(self, j: int) -> FiberAtoms:
        a, b = self.offsets[j], self.offsets[j + 1]
        return FiberAtoms.from_signed(self.y[a:b], self.w[a:b], self.merge_eps)

    @property
    def fibers(self) -> list:
        return [self.fiber(j) for j in range(self.n_cells)]

    def is_positive(self) -> bool:
        return bool(np.all(self.w >= 0))

    # -- arithmetic -------------------------------------------------------

    def scaled(self, c: float) -> "DiscretizedMeasure":
        if c == 0:
            return DiscretizedMeasure.zero(self.n_cells, self.merge_eps)
        return DiscretizedMeasure(self.n_cells, self.offsets, self.y, self.w * c, self.merge_eps, self.cap_error)

    def combine(self, other: "DiscretizedMeasure", a: float = 1.0, b: float = 1.0) -> "DiscretizedMeasure":
        if other.n_cells != self.n_cells:
            raise ValueError(f"cell counts differ: {self.n_cells} vs {other.n_cells}")
        return DiscretizedMeasure.from_atoms(
            self.n_cells,
            np.concatenate([self.cells, other.cells]),
            np.concatenate([self.y, other.y]),
            np.concatenate([a * self.w, b * other.w]),
            self.merge_eps,
        )

    def __add__(self, other):
        return self.combine(other)

    def __sub__(self, other):
        return subtract(self, other)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        fibers = []
        for j in range(self.n_cells):
            a, b = self.offsets[j], self.offsets[j + 1]
            y, w = self.y[a:b], self.w[a:b]
            fibers.append({
                "pos": [[float(v), float(u)] for v, u in zip(y[w > 0], w[w > 0])],
                "neg": [[float(v), float(-u)] for v, u in zip(y[w < 0], w[w < 0])],
            })
        return {
            "n_cells": self.n_cells,
            "merge_eps": self.merge_eps,
            "marginal": self.cell_mass.tolist(),
            "fibers": fibers,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscretizedMeasure":
        n = int(doc["n_cells"])
        fibers = doc["fibers"]
        if len(fibers) != n:
            raise ValueError(f"expected {n} fibers, got {len(fibers)}")
        cells, ys, ws = [], [], []
        for j, fb in enumerate(fibers):
            for y, w in fb.get("pos", []):
                cells.append(j); ys.append(y); ws.append(w)
            for y, w in fb.get("neg", []):
                cells.append(j); ys.append(y); ws.append(-w)
        mu = cls.from_atoms(n, np.array(cells, dtype=np.int64), np.array(ys, dtype=float),
                            np.array(ws, dtype=float), float(doc.get("merge_eps", MERGE_EPS)))
        if "marginal" in doc and not np.allclose(mu.cell_mass, doc["marginal"], atol=1e-9):
            raise ValueError("marginal does not match fiber masses")
        return mu

    @classmethod
    def from_json(cls, text: str) -> "DiscretizedMeasure":
        return cls.from_dict(json.loads(text))

    def cell_stats(self) -> dict:
        """Per-cell fiber mass, mean position and distance to a unit atom at 0."""
        c = self.cells
        mass = self.cell_mass
        moment = np.bincount(c, weights=self.w * self.y, minlength=self.n_cells)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(mass != 0, moment / np.where(mass == 0, 1, mass), np.nan)
        # append -delta_0 to every cell and take the norm of each group
        n = self.n_cells
        off0 = np.arange(n + 1, dtype=np.int64)
        to_zero = _kernels.diff_norms(self.offsets, self.y, self.w, off0, np.zeros(n), np.ones(n))
        return {"cell": np.arange(n), "x": (np.arange(n) + 0.5) / n, "density": mass,
                "mass": mass / n, "mean": mean, "w1_to_delta0": to_zero}


def product_measure(n_cells: int, nu: FiberAtoms, merge_eps: float = MERGE_EPS) -> DiscretizedMeasure:
    """Lebesgue measure times the probability ``nu``."""
    if nu.neg.size or nu.pos.size == 0:
        raise ValueError("product_measure needs a positive fiber measure")
    if abs(nu.mass - 1.0) > 1e-9:
        raise ValueError(f"fiber measure must be a probability, mass is {nu.mass}")
    y, w = nu.signed()
    k = y.size
    return DiscretizedMeasure.from_atoms(
        n_cells, np.repeat(np.arange(n_cells), k), np.tile(y, n_cells), np.tile(w, n_cells), merge_eps
    )


def subtract(a: DiscretizedMeasure, b: DiscretizedMeasure) -> DiscretizedMeasure:
    return a.combine(b, 1.0, -1.0)


def cell_norms(mu: DiscretizedMeasure) -> np.ndarray:
    """``||mu|_j||_W`` for every cell."""
    return _kernels.group_norms(mu.offsets, mu.y, mu.w)


def norm_l1(mu: DiscretizedMeasure) -> float:
    return float(cell_norms(mu).sum() / mu.n_cells)


def distance_l1(a: DiscretizedMeasure, b: DiscretizedMeasure) -> float:
    """``||a - b||_1`` with one program per cell over the joint support, no coalescing."""
    if a.n_cells != b.n_cells:
        raise ValueError(f"cell counts differ: {a.n_cells} vs {b.n_cells}")
    d = _kernels.diff_norms(a.offsets, a.y, a.w, b.offsets, b.y, b.w)
    return float(d.sum() / a.n_cells)


def bv_marginal(mu: DiscretizedMeasure) -> float:
    return mu.marginal.bv_norm


def variation(mu: DiscretizedMeasure) -> float:
    """Sum over neighbouring cells of ``||mu|_{j+1} - mu|_j||_W``."""
    if mu.n_cells < 2:
        return 0.0
    o = mu.offsets
    d = _kernels.diff_norms(o[1:], mu.y, mu.w, o[:-1], mu.y, mu.w)
    return float(d.sum())


def norm_s1(mu: DiscretizedMeasure, with_variation: bool = True) -> NormReport:
    l1 = norm_l1(mu)
    bv = bv_marginal(mu)
    v = variation(mu) if with_variation else float("nan")
    return NormReport(l1=l1, s1=bv + l1, bv_marginal=bv, variation=v)
