"""Invariant measures of skew products with contracting fibers."""

from .fibers import FiberMap, h3_constants
from .maps import BranchedMap, DensityVector, get_map, pf_apply
from .measures import DiscretizedMeasure, FiberAtoms, norm_l1, norm_s1, variation, w1
from .stability import get_family, stability_sweep
from .transfer import SkewProduct, equilibrium_rate, fixed_point, pushforward

__version__ = "0.1.0"

__all__ = [
    "BranchedMap", "DensityVector", "DiscretizedMeasure", "FiberAtoms", "FiberMap", "SkewProduct",
    "equilibrium_rate", "fixed_point", "get_family", "get_map", "h3_constants", "norm_l1", "norm_s1",
    "pf_apply", "pushforward", "stability_sweep", "variation", "w1",
]
