"""Fundus boundary detection and geometric/photometric normalization.

The visible fundus region of a CFI is bounded by a circle (the camera
aperture) optionally truncated by straight top/bottom/left/right lines.
This module detects those bounds, crops the image to a square around the
circle, resizes to a canonical frame (1024px by default), applies a
high-pass contrast enhancement with mirror padding across the boundary,
and replicates the geometric transform onto label masks and points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu

from .raster import Keypoint, LabelMask, RgbImage

OUT_SIZE = 1024

# Foreground binarization floor (8-bit); Otsu may go lower on dark images.
MIN_FG_THRESHOLD = 10
# Reject detections whose foreground covers less than this frame fraction.
MIN_FG_AREA_FRACTION = 0.01
# A straight run at an extreme row/column longer than this fraction of the
# estimated radius is reported as a cut line (a circle tangent produces a
# run of only ~2*sqrt(2r) pixels).
CUT_RUN_FRACTION = 0.5
# Circle-fit RMS residual above this fraction of the radius means the
# foreground is not fundus-shaped.
MAX_FIT_RESIDUAL_FRACTION = 0.08
# Cut lines change the crop square only when they remove more than this
# fraction of the circle diameter.
BIG_CUT_FRACTION = 0.25

# Enhancement defaults: sigma as a fraction of the normalized radius, and
# the high-pass gain.
ENHANCE_SIGMA_FRACTION = 1.0 / 15.0
ENHANCE_ALPHA = 4.0


class NoFundusFound(RuntimeError):
    """The image has no detectable illuminated fundus region."""


@dataclass(frozen=True)
class Bounds:
    """Detected fundus boundary: a circle plus optional cut lines.

    Cut offsets are absolute row (top/bottom) or column (left/right)
    positions in the same frame as the circle.
    """

    cx: float
    cy: float
    r: float
    cut_top: float | None = None
    cut_bottom: float | None = None
    cut_left: float | None = None
    cut_right: float | None = None

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("circle radius must be positive")
        for name, val, lo, hi in (
            ("cut_top", self.cut_top, self.cy - self.r, self.cy + self.r),
            ("cut_bottom", self.cut_bottom, self.cy - self.r, self.cy + self.r),
            ("cut_left", self.cut_left, self.cx - self.r, self.cx + self.r),
            ("cut_right", self.cut_right, self.cx - self.r, self.cx + self.r),
        ):
            if val is not None and not (lo - 1.0 <= val <= hi + 1.0):
                raise ValueError(f"{name}={val} does not intersect the circle")
        if self.cut_top is not None and self.cut_bottom is not None:
            if self.cut_top >= self.cut_bottom:
                raise ValueError("cut_top must be above cut_bottom")
        if self.cut_left is not None and self.cut_right is not None:
            if self.cut_left >= self.cut_right:
                raise ValueError("cut_left must be left of cut_right")

    def to_dict(self) -> dict:
        return {
            "cx": self.cx,
            "cy": self.cy,
            "r": self.r,
            "cut_top": self.cut_top,
            "cut_bottom": self.cut_bottom,
            "cut_left": self.cut_left,
            "cut_right": self.cut_right,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Bounds":
        return cls(**d)


@dataclass(frozen=True)
class NormTransform:
    """Invertible crop-and-scale map from source frame to normalized frame.

    Forward: p_norm = (p_src - origin) * out_size / side.
    """

    x0: float
    y0: float
    side: float
    out_size: int = OUT_SIZE

    @property
    def scale(self) -> float:
        return self.out_size / self.side

    def apply_point(self, p: Keypoint) -> Keypoint:
        s = self.scale
        return Keypoint((p.x - self.x0) * s, (p.y - self.y0) * s)

    def invert_point(self, p: Keypoint) -> Keypoint:
        s = self.scale
        return Keypoint(p.x / s + self.x0, p.y / s + self.y0)

    def to_dict(self) -> dict:
        return {
            "x0": self.x0,
            "y0": self.y0,
            "side": self.side,
            "out_size": self.out_size,
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormTransform":
        d = {k: v for k, v in d.items() if k != "scale"}  # derived field
        return cls(**d)


def _largest_component(binary: np.ndarray) -> np.ndarray:
    labeled, n = ndimage.label(binary, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros_like(binary)
    sizes = np.bincount(labeled.ravel())
    sizes[0] = 0
    return labeled == int(sizes.argmax())


def _fit_circle(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float, float, float]:
    """Least-squares (Kasa) circle fit; returns (cx, cy, r, rms residual)."""
    a = np.column_stack([xs, ys, np.ones_like(xs)])
    b = xs * xs + ys * ys
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    cx, cy = sol[0] / 2.0, sol[1] / 2.0
    r2 = sol[2] + cx * cx + cy * cy
    if r2 <= 0:
        return cx, cy, 0.0, float("inf")
    r = math.sqrt(r2)
    resid = np.hypot(xs - cx, ys - cy) - r
    return cx, cy, r, float(np.sqrt(np.mean(resid * resid)))


def detect_bounds(image: RgbImage) -> Bounds:
    """Detect the circular fundus boundary and any straight cut lines.

    Binarizes max(R, G, B) with an Otsu threshold (floored), keeps the
    largest connected component, flags extreme rows/columns whose run
    length is too long to be a circle tangent as cut lines, and fits a
    circle to the remaining boundary pixels.

    Raises NoFundusFound for frames with too little foreground or a
    boundary that is not circle-shaped.
    """
    fg = image.pixels.max(axis=2)
    if int(fg.max()) < MIN_FG_THRESHOLD:
        raise NoFundusFound("no pixels above the foreground threshold")
    thr = max(float(threshold_otsu(fg)), float(MIN_FG_THRESHOLD))
    binary = fg >= thr
    comp = _largest_component(binary)
    area = int(comp.sum())
    if area < MIN_FG_AREA_FRACTION * comp.size:
        raise NoFundusFound(
            f"foreground area {area} below {MIN_FG_AREA_FRACTION:.0%} of frame"
        )

    h, w = comp.shape
    rows = np.flatnonzero(comp.any(axis=1))
    cols = np.flatnonzero(comp.any(axis=0))
    r_est = max(rows[-1] - rows[0], cols[-1] - cols[0]) / 2.0
    if r_est <= 0:
        raise NoFundusFound("degenerate foreground extent")
    run_thr = CUT_RUN_FRACTION * r_est

    row_counts = comp.sum(axis=1)
    col_counts = comp.sum(axis=0)
    cut_top = float(rows[0]) if row_counts[rows[0]] > run_thr else None
    cut_bottom = float(rows[-1]) if row_counts[rows[-1]] > run_thr else None
    cut_left = float(cols[0]) if col_counts[cols[0]] > run_thr else None
    cut_right = float(cols[-1]) if col_counts[cols[-1]] > run_thr else None

    boundary = comp & ~ndimage.binary_erosion(comp, structure=np.ones((3, 3), dtype=bool))
    ys, xs = np.nonzero(boundary)
    keep = np.ones(len(xs), dtype=bool)
    # Exclude frame-border pixels and pixels near cut lines from the fit.
    keep &= (ys > 0) & (ys < h - 1) & (xs > 0) & (xs < w - 1)
    margin = 2.0
    if cut_top is not None:
        keep &= ys > cut_top + margin
    if cut_bottom is not None:
        keep &= ys < cut_bottom - margin
    if cut_left is not None:
        keep &= xs > cut_left + margin
    if cut_right is not None:
        keep &= xs < cut_right - margin
    if keep.sum() < 16:
        raise NoFundusFound("too few circular boundary pixels to fit")

    cx, cy, r, rms = _fit_circle(xs[keep].astype(float), ys[keep].astype(float))
    if r <= 0 or rms > MAX_FIT_RESIDUAL_FRACTION * r:
        # One outlier-rejection pass: drop points far from the first fit.
        dist = np.abs(np.hypot(xs[keep] - cx, ys[keep] - cy) - r)
        inliers = dist < max(3.0, 0.02 * max(r, 1.0))
        if inliers.sum() >= 16:
            cx, cy, r, rms = _fit_circle(
                xs[keep][inliers].astype(float), ys[keep][inliers].astype(float)
            )
    if r <= 0 or rms > MAX_FIT_RESIDUAL_FRACTION * r:
        raise NoFundusFound(f"boundary fit residual {rms:.1f}px too large for radius {r:.1f}px")

    return Bounds(cx, cy, r, cut_top, cut_bottom, cut_left, cut_right)


def _crop_window(bounds: Bounds, big_cut_fraction: float) -> tuple[float, float, float]:
    """Square crop (x0, y0, side) around the circle, honoring deep cuts.

    A cut line shrinks the square only when it removes more than
    ``big_cut_fraction`` of the circle diameter; shallow cuts keep the
    2r side so small border trims do not change scale.
    """
    s = 2.0 * bounds.r
    xl, xr = bounds.cx - bounds.r, bounds.cx + bounds.r
    yt, yb = bounds.cy - bounds.r, bounds.cy + bounds.r
    deep = big_cut_fraction * s
    if bounds.cut_top is not None and bounds.cut_top - yt > deep:
        yt = bounds.cut_top
    if bounds.cut_bottom is not None and yb - bounds.cut_bottom > deep:
        yb = bounds.cut_bottom
    if bounds.cut_left is not None and bounds.cut_left - xl > deep:
        xl = bounds.cut_left
    if bounds.cut_right is not None and xr - bounds.cut_right > deep:
        xr = bounds.cut_right
    side = max(xr - xl, yb - yt)
    x0 = (xl + xr) / 2.0 - side / 2.0
    y0 = (yt + yb) / 2.0 - side / 2.0
    return x0, y0, side


def normalize(
    image: RgbImage,
    bounds: Bounds,
    out_size: int = OUT_SIZE,
    big_cut_fraction: float = BIG_CUT_FRACTION,
) -> tuple[RgbImage, NormTransform]:
    """Crop the fundus square and bilinearly resize to out_size x out_size.

    Regions of the square outside the source frame are zero-padded.  The
    returned transform maps source points to normalized points and back.
    """
    x0, y0, side = _crop_window(bounds, big_cut_fraction)
    t = NormTransform(x0, y0, side, out_size)
    dst = np.arange(out_size, dtype=np.float64)
    src_x = x0 + dst / t.scale
    src_y = y0 + dst / t.scale
    gx, gy = np.meshgrid(src_x, src_y)
    out = np.empty((out_size, out_size, 3), dtype=np.float32)
    for c in range(3):
        out[:, :, c] = ndimage.map_coordinates(
            image.pixels[:, :, c].astype(np.float32),
            [gy, gx],
            order=1,
            mode="constant",
            cval=0.0,
        )
    return RgbImage(np.clip(np.rint(out), 0, 255).astype(np.uint8)), t


def transform_bounds(bounds: Bounds, t: NormTransform) -> Bounds:
    """Map bounds into the normalized frame of ``t``."""
    s = t.scale

    def _row(v):
        return None if v is None else (v - t.y0) * s

    def _col(v):
        return None if v is None else (v - t.x0) * s

    return Bounds(
        cx=(bounds.cx - t.x0) * s,
        cy=(bounds.cy - t.y0) * s,
        r=bounds.r * s,
        cut_top=_row(bounds.cut_top),
        cut_bottom=_row(bounds.cut_bottom),
        cut_left=_col(bounds.cut_left),
        cut_right=_col(bounds.cut_right),
    )


def bounds_mask(bounds: Bounds, shape: tuple[int, int]) -> np.ndarray:
    """Boolean mask of the fundus interior (circle minus cut regions)."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    mask = (xs - bounds.cx) ** 2 + (ys - bounds.cy) ** 2 <= bounds.r**2
    if bounds.cut_top is not None:
        mask &= ys >= bounds.cut_top
    if bounds.cut_bottom is not None:
        mask &= ys <= bounds.cut_bottom
    if bounds.cut_left is not None:
        mask &= xs >= bounds.cut_left
    if bounds.cut_right is not None:
        mask &= xs <= bounds.cut_right
    return mask


def _mirror_pad(pixels: np.ndarray, bounds: Bounds) -> np.ndarray:
    """Fill pixels outside the fundus region by reflecting across its boundary.

    Cut lines are mirrored first (reflection across the line), then the
    remaining outside pixels are reflected radially across the circle, so a
    Gaussian blur near the boundary sees locally plausible content instead
    of the black surround.
    """
    h, w = pixels.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    src_x = xs.copy()
    src_y = ys.copy()
    if bounds.cut_top is not None:
        above = src_y < bounds.cut_top
        src_y[above] = 2.0 * bounds.cut_top - src_y[above]
    if bounds.cut_bottom is not None:
        below = src_y > bounds.cut_bottom
        src_y[below] = 2.0 * bounds.cut_bottom - src_y[below]
    if bounds.cut_left is not None:
        left = src_x < bounds.cut_left
        src_x[left] = 2.0 * bounds.cut_left - src_x[left]
    if bounds.cut_right is not None:
        right = src_x > bounds.cut_right
        src_x[right] = 2.0 * bounds.cut_right - src_x[right]

    dx = src_x - bounds.cx
    dy = src_y - bounds.cy
    dist = np.hypot(dx, dy)
    outside = dist > bounds.r
    # Clamp the reflected radius 1px inside the circle so rounding cannot
    # land on a background pixel at the rasterized rim.
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.clip(2.0 * bounds.r - dist, 0.0, max(bounds.r - 1.0, 0.0)) / np.where(
            dist == 0, 1.0, dist
        )
    src_x = np.where(outside, bounds.cx + dx * frac, src_x)
    src_y = np.where(outside, bounds.cy + dy * frac, src_y)

    ix = np.clip(np.floor(src_x + 0.5).astype(np.intp), 0, w - 1)
    iy = np.clip(np.floor(src_y + 0.5).astype(np.intp), 0, h - 1)
    return pixels[iy, ix]


def enhance(
    image: RgbImage,
    bounds: Bounds,
    sigma_fraction: float = ENHANCE_SIGMA_FRACTION,
    alpha: float = ENHANCE_ALPHA,
) -> RgbImage:
    """High-pass contrast enhancement inside the fundus region.

    out = clip(alpha * (I - G_sigma * I) + 128) with sigma =
    sigma_fraction * r, computed on a mirror-padded image so the boundary
    produces no halo; everything outside the bounds is set to exactly 0.

    ``bounds`` must be expressed in the frame of ``image`` (for normalized
    images, pass the output of transform_bounds).
    """
    sigma = sigma_fraction * bounds.r
    mirrored = _mirror_pad(image.pixels, bounds).astype(np.float32)
    blurred = np.empty_like(mirrored)
    for c in range(3):
        blurred[:, :, c] = ndimage.gaussian_filter(mirrored[:, :, c], sigma=sigma)
    enhanced = np.clip(alpha * (mirrored - blurred) + 128.0, 0, 255)
    inside = bounds_mask(bounds, image.pixels.shape[:2])
    enhanced[~inside] = 0.0
    return RgbImage(np.rint(enhanced).astype(np.uint8))


def transform_mask(mask: LabelMask, t: NormTransform) -> LabelMask:
    """Resample a label mask with nearest-neighbor (labels never blended)."""
    out_size = t.out_size
    dst = np.arange(out_size, dtype=np.float64)
    src_x = t.x0 + dst / t.scale
    src_y = t.y0 + dst / t.scale
    ix = np.floor(src_x + 0.5).astype(np.intp)
    iy = np.floor(src_y + 0.5).astype(np.intp)
    h, w = mask.labels.shape
    valid_x = (ix >= 0) & (ix < w)
    valid_y = (iy >= 0) & (iy < h)
    out = np.zeros((out_size, out_size), dtype=np.uint8)
    sub = mask.labels[np.clip(iy, 0, h - 1)[:, None], np.clip(ix, 0, w - 1)[None, :]]
    valid = valid_y[:, None] & valid_x[None, :]
    out[valid] = sub[valid]
    return LabelMask(out, mask.scheme)


def transform_point(p: Keypoint, t: NormTransform) -> Keypoint:
    return t.apply_point(p)


def save_sidecar(path: str | Path, bounds: Bounds, transform: NormTransform) -> None:
    """Persist bounds + transform JSON so results can map back to source."""
    payload = {"bounds": bounds.to_dict(), "transform": transform.to_dict()}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_sidecar(path: str | Path) -> tuple[Bounds, NormTransform]:
    payload = json.loads(Path(path).read_text())
    return Bounds.from_dict(payload["bounds"]), NormTransform.from_dict(payload["transform"])
