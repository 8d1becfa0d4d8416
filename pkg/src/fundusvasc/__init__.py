"""Fundus vasculature toolkit.

Normalizes color fundus images into a canonical 1024px frame, fuses
patch-level model predictions into full-image masks, decomposes artery/vein
segmentations into vessel graphs, and computes vascular biomarkers together
with the evaluation metrics used to validate them.
"""

__version__ = "0.1.0"

from . import biomarkers, evalstats, fuse, prep, raster, vesselgeom, vesselgraph

__all__ = [
    "biomarkers",
    "evalstats",
    "fuse",
    "prep",
    "raster",
    "vesselgeom",
    "vesselgraph",
]
