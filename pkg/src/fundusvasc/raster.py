"""Core raster types, label encoding conventions, and PNG I/O.

Conventions shared by every other module:

* arrays are row-major numpy arrays indexed ``[y, x]``;
* points are ``Keypoint(x, y)`` with x = column, y = row;
* binary masks use labels {0, 1} in memory and {0, 255} on disk;
* artery/vein masks use the 4-class encoding 0 = background, 1 = artery,
  2 = vein, 3 = crossing (a pixel that is both artery and vein).

All carrier types freeze their buffers after construction, so instances can
be shared freely across worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image


class LabelValueError(ValueError):
    """A mask pixel holds a value outside its declared label scheme."""


class LabelScheme(Enum):
    BINARY = "binary"
    AV4 = "av4"

    @property
    def cardinality(self) -> int:
        return 2 if self is LabelScheme.BINARY else 4


AV_BACKGROUND = 0
AV_ARTERY = 1
AV_VEIN = 2
AV_CROSSING = 3


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RgbImage:
    """8-bit 3-channel image, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected (H, W, 3) uint8 buffer, got shape {px.shape}")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class LabelMask:
    """Per-pixel small-integer class ids under a declared scheme."""

    labels: np.ndarray
    scheme: LabelScheme = LabelScheme.BINARY

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.uint8)
        if lab.ndim != 2:
            raise ValueError(f"expected 2-D label array, got shape {lab.shape}")
        bad = lab >= self.scheme.cardinality
        if bad.any():
            y, x = np.argwhere(bad)[0]
            raise LabelValueError(
                f"out-of-range label {int(lab[y, x])} at (x={int(x)}, y={int(y)}) "
                f"for scheme {self.scheme.name}"
            )
        object.__setattr__(self, "labels", _frozen(lab))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def foreground(self) -> np.ndarray:
        """Boolean view of non-background pixels."""
        return self.labels != 0


@dataclass(frozen=True)
class ProbMap:
    """Per-pixel per-class probabilities, shape (height, width, classes)."""

    values: np.ndarray

    def __post_init__(self):
        val = np.asarray(self.values, dtype=np.float32)
        if val.ndim == 2:
            val = val[:, :, None]
        if val.ndim != 3 or val.shape[2] < 1:
            raise ValueError(f"expected (H, W, C) array, got shape {val.shape}")
        if val.size and (val.min() < 0.0 or val.max() > 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(val))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def classes(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class Keypoint:
    """Subpixel image location, x = column, y = row."""

    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


def load_image(path: str | Path) -> RgbImage:
    with Image.open(path) as im:
        return RgbImage(np.asarray(im.convert("RGB")))


def save_image(image: RgbImage, path: str | Path) -> None:
    Image.fromarray(image.pixels).save(path)


def load_mask(
    path: str | Path,
    scheme: LabelScheme,
    extra_labels_to_background: tuple[int, ...] = (),
) -> LabelMask:
    """Load an 8-bit single-channel PNG as a label mask.

    For BINARY, pixel values {0, 255} are accepted as {0, 1}.  Values listed
    in ``extra_labels_to_background`` (e.g. an annotation-side "unknown"
    class) are mapped to background before validation; anything else outside
    the scheme raises LabelValueError with the offending value and position.
    """
    with Image.open(path) as im:
        if im.mode not in ("L", "P", "1"):
            im = im.convert("L")
        raw = np.asarray(im, dtype=np.uint8)
    if raw.ndim != 2:
        raise LabelValueError(f"{path}: expected single-channel mask, got shape {raw.shape}")
    if scheme is LabelScheme.BINARY:
        raw = np.where(raw == 255, 1, raw).astype(np.uint8)
    if extra_labels_to_background:
        raw = np.where(np.isin(raw, extra_labels_to_background), 0, raw).astype(np.uint8)
    return LabelMask(raw, scheme)


def save_mask(mask: LabelMask, path: str | Path) -> None:
    """Write a mask as 8-bit PNG; binary foreground is written as 255."""
    out = mask.labels
    if mask.scheme is LabelScheme.BINARY:
        out = (out * 255).astype(np.uint8)
    Image.fromarray(out, mode="L").save(path)


def split_av(mask: LabelMask) -> tuple[LabelMask, LabelMask]:
    """Split an AV4 mask into binary artery and vein masks.

    Crossing pixels (label 3) belong to both outputs.
    """
    if mask.scheme is not LabelScheme.AV4:
        raise ValueError(f"split_av requires AV4 scheme, got {mask.scheme.name}")
    lab = mask.labels
    artery = (lab == AV_ARTERY) | (lab == AV_CROSSING)
    vein = (lab == AV_VEIN) | (lab == AV_CROSSING)
    return (
        LabelMask(artery.astype(np.uint8), LabelScheme.BINARY),
        LabelMask(vein.astype(np.uint8), LabelScheme.BINARY),
    )


def merge_av(artery: LabelMask, vein: LabelMask) -> LabelMask:
    """Inverse of split_av: overlap becomes the crossing label."""
    if artery.labels.shape != vein.labels.shape:
        raise ValueError(
            f"dimension mismatch: artery {artery.labels.shape} vs vein {vein.labels.shape}"
        )
    a = artery.labels != 0
    v = vein.labels != 0
    out = np.zeros(a.shape, dtype=np.uint8)
    out[a] = AV_ARTERY
    out[v] = AV_VEIN
    out[a & v] = AV_CROSSING
    return LabelMask(out, LabelScheme.AV4)


# Palette used by the optional "pretty" AV4 PNG: background, artery red,
# vein blue, crossing magenta.
_AV4_PALETTE = [0, 0, 0, 220, 40, 40, 60, 80, 230, 200, 50, 200]


def save_mask_pretty(mask: LabelMask, path: str | Path) -> None:
    """Write an AV4 mask as a paletted PNG for viewers (not for loading back)."""
    if mask.scheme is not LabelScheme.AV4:
        raise ValueError("pretty output is defined for AV4 masks")
    im = Image.fromarray(mask.labels, mode="P")
    im.putpalette(_AV4_PALETTE + [0] * (768 - len(_AV4_PALETTE)))
    im.save(path)
