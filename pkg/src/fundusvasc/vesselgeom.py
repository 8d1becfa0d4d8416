"""Per-segment differential geometry.

Tortuosity is computed directly on chain pixels (its definition is a sum
over points); curvature, inflection counting, perpendicular width
measurement, and bifurcation angles need derivatives and therefore go
through a cubic smoothing spline fitted to the chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import splev, splprep

MIN_CHAIN_POINTS = 5
SPLINE_MAX_DEVIATION = 1.5
CURVATURE_STEP = 5.0
INFLECTION_EPS = 0.002
WIDTH_STEP = 2.0
RAY_STRIDE = 0.25


class TooShort(ValueError):
    """Chain has too few points for spline fitting."""


@dataclass
class SegmentSpline:
    """Smoothing-spline parametrization gamma(t) of a pixel chain.

    Exposes position and first/second derivatives with respect to t plus an
    arc-length lookup so callers can sample at fixed pixel intervals.  The
    usable parameter range is the one produced by arc_samples/t_at_arc
    (the fit is padded internally, so t=0/t=1 lie outside the chain).
    """

    tck: tuple
    arc_length: float
    _t_dense: np.ndarray
    _arc_dense: np.ndarray

    def eval(self, t: np.ndarray | float) -> np.ndarray:
        x, y = splev(t, self.tck)
        return np.stack([np.atleast_1d(x), np.atleast_1d(y)], axis=-1)

    def deriv(self, t: np.ndarray | float, order: int = 1) -> np.ndarray:
        x, y = splev(t, self.tck, der=order)
        return np.stack([np.atleast_1d(x), np.atleast_1d(y)], axis=-1)

    def t_at_arc(self, s: np.ndarray | float) -> np.ndarray:
        return np.interp(s, self._arc_dense, self._t_dense)

    def point_at_arc(self, s: float) -> np.ndarray:
        return self.eval(self.t_at_arc(s))[0]

    def arc_samples(self, step: float) -> np.ndarray:
        """Parameter values at every ``step`` px of arc length (incl. t=0)."""
        arcs = np.arange(0.0, self.arc_length + 1e-9, step)
        return self.t_at_arc(arcs)

    def interior_arc_samples(self, step: float) -> np.ndarray:
        """Arc samples excluding a two-step margin at each end, where the
        fitted derivatives are dominated by chain-end jitter; falls back to
        the midpoint for segments too short to have an interior."""
        margin = 2.0 * step
        arcs = np.arange(margin, self.arc_length - margin + 1e-9, step)
        if arcs.size == 0:
            arcs = np.array([self.arc_length / 2.0])
        return self.t_at_arc(arcs)


def _dedupe(chain: np.ndarray) -> np.ndarray:
    pts = np.asarray(chain, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"chain must be (N, 2), got {pts.shape}")
    if len(pts) < 2:
        return pts
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(np.diff(pts, axis=0) != 0, axis=1)
    return pts[keep]


def fit_spline(chain: np.ndarray, max_deviation: float = SPLINE_MAX_DEVIATION) -> SegmentSpline:
    """Fit a cubic smoothing spline over the chord-length parameter.

    The chain is reflection-padded at both ends before fitting so the
    spline has no free-end hooks (derivatives near the segment endpoints
    matter for widths and bifurcation angles); the exposed parametrization
    covers only the original chain.  The smoothing factor starts
    permissive and is tightened until the spline stays within
    ``max_deviation`` px of every original point.
    """
    pts = _dedupe(chain)
    if len(pts) < MIN_CHAIN_POINTS:
        raise TooShort(f"chain has {len(pts)} points, need >= {MIN_CHAIN_POINTS}")
    m = len(pts)
    pad = min(8, m - 1)
    pre = 2.0 * pts[0] - pts[pad:0:-1]
    post = 2.0 * pts[-1] - pts[-2 : -2 - pad : -1]
    ext = np.vstack([pre, pts, post])

    seg = np.hypot(*np.diff(ext, axis=0).T)
    u = np.concatenate([[0.0], np.cumsum(seg)])
    u /= u[-1]
    t0, t1 = float(u[pad]), float(u[pad + m - 1])
    u_core = u[pad : pad + m]

    smooth = len(ext) * 0.25
    tck = None
    for _ in range(8):
        tck, _u = splprep([ext[:, 0], ext[:, 1]], u=u, s=smooth, k=3)
        fx, fy = splev(u_core, tck)
        dev = float(np.max(np.hypot(fx - pts[:, 0], fy - pts[:, 1])))
        if dev <= max_deviation:
            break
        smooth /= 4.0
    else:
        tck, _u = splprep([ext[:, 0], ext[:, 1]], u=u, s=0, k=3)

    t_dense = np.linspace(t0, t1, max(200, 8 * m))
    dx, dy = splev(t_dense, tck, der=1)
    speed = np.hypot(dx, dy)
    arc = np.concatenate([[0.0], np.cumsum((speed[1:] + speed[:-1]) / 2.0 * np.diff(t_dense))])
    return SegmentSpline(tck=tck, arc_length=float(arc[-1]), _t_dense=t_dense, _arc_dense=arc)


def tortuosity(chain: np.ndarray) -> float | None:
    """Arc length over chord length of the raw chain points (>= 1).

    Returns None for closed chains (coincident endpoints), where the chord
    is zero and the measure is undefined.
    """
    pts = _dedupe(chain)
    if len(pts) < 2:
        raise ValueError("tortuosity needs at least 2 distinct points")
    chord = math.hypot(pts[-1, 0] - pts[0, 0], pts[-1, 1] - pts[0, 1])
    if chord == 0.0:
        return None
    arc = float(np.hypot(*np.diff(pts, axis=0).T).sum())
    return arc / chord


def _curvature(spline: SegmentSpline, t: np.ndarray, signed: bool) -> np.ndarray:
    d1 = spline.deriv(t, 1)
    d2 = spline.deriv(t, 2)
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    speed2 = d1[:, 0] ** 2 + d1[:, 1] ** 2
    denom = np.power(speed2, 1.5)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(denom > 0, cross / denom, 0.0)
    return k if signed else np.abs(k)


def curvature_at(spline: SegmentSpline, t: np.ndarray) -> np.ndarray:
    """Unsigned curvature |x'y'' - y'x''| / (x'^2 + y'^2)^(3/2)."""
    return _curvature(spline, np.atleast_1d(np.asarray(t, dtype=float)), signed=False)


def mean_curvature(spline: SegmentSpline, step: float = CURVATURE_STEP) -> float:
    """Mean unsigned curvature sampled every ``step`` px of arc length."""
    t = spline.interior_arc_samples(step)
    return float(np.mean(curvature_at(spline, t)))


def inflection_count(
    spline: SegmentSpline,
    eps: float = INFLECTION_EPS,
    step: float = CURVATURE_STEP,
) -> int:
    """Number of sign changes of signed curvature along the arc samples.

    Samples with |curvature| below ``eps`` are treated as straight and
    ignored, suppressing discretization jitter.
    """
    t = spline.interior_arc_samples(step)
    k = _curvature(spline, t, signed=True)
    signs = np.sign(k[np.abs(k) >= eps])
    if len(signs) < 2:
        return 0
    return int(np.count_nonzero(np.diff(signs) != 0))


def _cast_ray(
    mask: np.ndarray, origin: np.ndarray, direction: np.ndarray, stride: float
) -> float:
    """Distance from origin to the first background pixel along direction."""
    h, w = mask.shape
    limit = int(2 * (h + w) / stride)
    for k in range(1, limit):
        q = origin + (k * stride) * direction
        ix = math.floor(q[0] + 0.5)
        iy = math.floor(q[1] + 0.5)
        if ix < 0 or iy < 0 or ix >= w or iy >= h or not mask[iy, ix]:
            return k * stride
    return limit * stride


def measure_widths(
    spline: SegmentSpline,
    mask: np.ndarray,
    step: float = WIDTH_STEP,
    stride: float = RAY_STRIDE,
) -> tuple[np.ndarray, float | None]:
    """Perpendicular ray-cast widths at regular arc intervals, plus median.

    At every ``step`` px of arc length both perpendicular rays are extended
    in ``stride`` px increments until they reach a background pixel of
    ``mask``; the width is the distance between the two hit points.
    Samples whose spline point already lies on background (segmentation /
    skeleton mismatch) are skipped; if every sample is skipped the median
    is None.
    """
    fg = np.asarray(mask) != 0
    h, w = fg.shape
    widths = []
    for t in spline.arc_samples(step):
        p = spline.eval(t)[0]
        ix = math.floor(p[0] + 0.5)
        iy = math.floor(p[1] + 0.5)
        if ix < 0 or iy < 0 or ix >= w or iy >= h or not fg[iy, ix]:
            continue
        d1 = spline.deriv(t, 1)[0]
        norm = math.hypot(d1[0], d1[1])
        if norm == 0:
            continue
        n = np.array([-d1[1] / norm, d1[0] / norm])
        d_plus = _cast_ray(fg, p, n, stride)
        d_minus = _cast_ray(fg, p, -n, stride)
        widths.append(d_plus + d_minus)
    arr = np.asarray(widths, dtype=float)
    if arr.size == 0:
        return arr, None
    return arr, float(np.median(arr))


def bifurcation_angle(
    node_xy: np.ndarray,
    child_splines: list[SegmentSpline],
    delta: float,
) -> float | None:
    """Smallest angle (degrees) between two child vessels at distance delta.

    Child splines must be oriented away from the bifurcation (arc 0 at the
    node).  Bifurcations with any child shorter than delta are excluded
    from statistics and return None.
    """
    if len(child_splines) != 2:
        raise ValueError(f"expected exactly 2 children, got {len(child_splines)}")
    node = np.asarray(node_xy, dtype=float)
    dirs = []
    for sp in child_splines:
        if sp.arc_length < delta:
            return None
        v = sp.point_at_arc(delta) - node
        norm = math.hypot(v[0], v[1])
        if norm == 0:
            return None
        dirs.append(v / norm)
    cosang = float(np.clip(np.dot(dirs[0], dirs[1]), -1.0, 1.0))
    return math.degrees(math.acos(cosang))
