"""Synthetic inputs with known ground truth.

Generators for boundary-detection disks, constant-width bars, random
vessel trees, and a full phantom eye (two temporal arcades with side
branches, disc, fovea).  Construction values (angles, widths, chains,
bifurcation counts) are recorded so tests can compare pipeline output
against them.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from .prep import Bounds, NormTransform
from .raster import Keypoint, LabelMask, LabelScheme, RgbImage

FUNDUS_COLOR = (196, 108, 52)


def synthetic_fundus(
    size: tuple[int, int] = (1000, 1000),
    center: tuple[float, float] = (500.0, 500.0),
    radius: float = 450.0,
    cut_top: float | None = None,
    cut_bottom: float | None = None,
    cut_left: float | None = None,
    cut_right: float | None = None,
    color: tuple[int, int, int] = FUNDUS_COLOR,
) -> RgbImage:
    """Bright disk on black, optionally truncated by straight cuts.

    ``center`` is (cx, cy); cuts black out rows/columns outside the given
    offsets, mimicking camera aperture truncation.
    """
    h, w = size
    ys, xs = np.mgrid[0:h, 0:w]
    cx, cy = center
    dist2 = (xs - cx) ** 2 + (ys - cy) ** 2
    inside = dist2 <= radius**2
    # Mild radial falloff so binarization is exercised on non-flat input.
    falloff = 1.0 - 0.25 * np.sqrt(np.clip(dist2, 0, None)) / max(radius, 1.0)
    img = np.zeros((h, w, 3), dtype=np.uint8)
    for c, base in enumerate(color):
        img[:, :, c] = np.where(inside, np.clip(base * falloff, 40, 255), 0).astype(np.uint8)
    if cut_top is not None:
        img[: int(cut_top), :, :] = 0
    if cut_bottom is not None:
        img[int(cut_bottom) + 1 :, :, :] = 0
    if cut_left is not None:
        img[:, : int(cut_left), :] = 0
    if cut_right is not None:
        img[:, int(cut_right) + 1 :, :] = 0
    return RgbImage(img)


def bar_mask(
    shape: tuple[int, int],
    p0: tuple[float, float],
    p1: tuple[float, float],
    width: float,
) -> np.ndarray:
    """Boolean band of the given width around the segment p0-p1 (round caps).

    A pixel belongs to the bar when its distance to the segment is at
    most width/2, so a bar of odd width on an integer centerline spans
    exactly ``width`` pixels across when axis-aligned.
    """
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    ax, ay = p0
    bx, by = p1
    vx, vy = bx - ax, by - ay
    vlen2 = vx * vx + vy * vy
    if vlen2 == 0:
        d = np.hypot(xs - ax, ys - ay)
    else:
        t = np.clip(((xs - ax) * vx + (ys - ay) * vy) / vlen2, 0.0, 1.0)
        d = np.hypot(xs - (ax + t * vx), ys - (ay + t * vy))
    return d <= width / 2.0


def wedge_mask(
    shape: tuple[int, int],
    p0: tuple[float, float],
    p1: tuple[float, float],
    width0: float,
    width1: float,
) -> np.ndarray:
    """Band whose width ramps linearly from width0 at p0 to width1 at p1."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    ax, ay = p0
    bx, by = p1
    vx, vy = bx - ax, by - ay
    vlen2 = vx * vx + vy * vy
    t = np.clip(((xs - ax) * vx + (ys - ay) * vy) / vlen2, 0.0, 1.0)
    d = np.hypot(xs - (ax + t * vx), ys - (ay + t * vy))
    half = (width0 + t * (width1 - width0)) / 2.0
    return d <= half


def _band_from_samples(shape: tuple[int, int], samples: np.ndarray, width: float) -> np.ndarray:
    """Pixels within width/2 of the densely sampled curve (KD-tree query)."""
    from scipy.spatial import cKDTree

    h, w = shape
    half = width / 2.0
    tree = cKDTree(samples)
    lo = np.maximum(samples.min(axis=0) - half - 1, 0).astype(int)
    hi = np.minimum(samples.max(axis=0) + half + 2, [w, h]).astype(int)
    ys, xs = np.mgrid[lo[1] : hi[1], lo[0] : hi[0]]
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)
    dist, _ = tree.query(pts, k=1)
    band = np.zeros(shape, dtype=bool)
    band[ys.ravel()[dist <= half], xs.ravel()[dist <= half]] = True
    return band


def _collapse_corners(chain: np.ndarray) -> np.ndarray:
    """Replace axis-aligned L-steps with their diagonal shortcut.

    Rounding dense curve samples yields the supercover path, which takes
    two unit steps around every corner; thinning produces the minimal
    8-connected chain instead.  Dropping each corner pixel makes the
    construction chain (and hence its digital arc length) comparable to
    what the skeleton pipeline recovers.
    """
    pts = list(map(tuple, chain.astype(int)))
    changed = True
    while changed:
        changed = False
        out = [pts[0]]
        i = 1
        while i < len(pts) - 1:
            prev, cur, nxt = out[-1], pts[i], pts[i + 1]
            if (
                abs(nxt[0] - prev[0]) <= 1
                and abs(nxt[1] - prev[1]) <= 1
                and (prev[0] == cur[0]) != (prev[1] == cur[1])
            ):
                changed = True
                i += 1  # skip the corner pixel
                continue
            out.append(cur)
            i += 1
        out.extend(pts[i:])
        pts = out
    return np.array(pts, dtype=float)


def rasterize_curve(
    shape: tuple[int, int], samples: np.ndarray, width: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw a width-px band along densely sampled (x, y) curve points.

    Returns (band mask, centerline chain).  The band holds every pixel
    within width/2 of the curve; the chain is the minimal 8-connected
    pixel path of the rounded samples (supercover corners collapsed),
    which is the centerline thinning should recover.
    """
    h, w = shape
    band = _band_from_samples(shape, samples, float(width))
    ix = np.floor(samples[:, 0] + 0.5).astype(int)
    iy = np.floor(samples[:, 1] + 0.5).astype(int)
    keep = np.ones(len(ix), dtype=bool)
    keep[1:] = (np.diff(ix) != 0) | (np.diff(iy) != 0)
    ix, iy = ix[keep], iy[keep]
    ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    chain = _collapse_corners(np.stack([ix[ok], iy[ok]], axis=1).astype(float))
    return band, chain


def sample_arc_path(
    start: tuple[float, float],
    heading_deg: float,
    straight_len: float,
    arc_len: float,
    arc_curvature: float,
    step: float = 0.25,
) -> np.ndarray:
    """Dense (x, y) samples of a straight run followed by a circular arc.

    ``heading_deg`` is measured from +x with +y pointing down the image,
    so positive headings point up.  Positive curvature turns the heading
    further counterclockwise (on screen: further upward).
    """
    pts = [np.array(start, dtype=float)]
    heading = math.radians(heading_deg)
    pos = pts[0].copy()
    n_straight = int(straight_len / step)
    d = np.array([math.cos(heading), -math.sin(heading)])
    for _ in range(n_straight):
        pos = pos + step * d
        pts.append(pos.copy())
    n_arc = int(arc_len / step)
    for _ in range(n_arc):
        heading += arc_curvature * step
        d = np.array([math.cos(heading), -math.sin(heading)])
        pos = pos + step * d
        pts.append(pos.copy())
    return np.array(pts)


def chain_tortuosity(chain: np.ndarray) -> float:
    """Arc/chord of a pixel chain, the construction-side oracle value."""
    arc = float(np.hypot(*np.diff(chain, axis=0).T).sum())
    chord = float(np.hypot(chain[-1, 0] - chain[0, 0], chain[-1, 1] - chain[0, 1]))
    return arc / chord


@dataclass
class RandomTree:
    skeleton: np.ndarray
    n_segments: int
    n_bifurcations: int


def random_tree(
    shape: tuple[int, int] = (900, 900),
    n_segments: int = 100,
    seed: int = 0,
    min_len: int = 30,
    max_len: int = 55,
) -> RandomTree:
    """Random binary tree drawn as 1px digital lines with exact topology.

    Branch geometry is constrained (sibling separation >= 44 degrees, new
    segments rejected if they come within one pixel of existing ones away
    from their own junction), so the drawn raster is a valid skeleton whose
    graph has exactly ``n_bifurcations`` degree-3 nodes by construction.
    """
    from skimage.draw import line as _line

    rng = random.Random(seed)
    h, w = shape
    skel = np.zeros(shape, dtype=bool)

    def _draw(p0, p1):
        rr, cc = _line(p0[1], p0[0], p1[1], p1[0])
        skel[rr, cc] = True
        return list(zip(cc.tolist(), rr.tolist()))

    def _fits(p0, heading, length):
        x1 = int(round(p0[0] + length * math.cos(heading)))
        y1 = int(round(p0[1] - length * math.sin(heading)))
        if not (10 <= x1 < w - 10 and 10 <= y1 < h - 10):
            return None
        rr, cc = _line(p0[1], p0[0], y1, x1)
        pixels = list(zip(cc.tolist(), rr.tolist()))
        for px, py in pixels[3:]:
            if skel[max(0, py - 1) : py + 2, max(0, px - 1) : px + 2].any():
                return None
        return (x1, y1), pixels

    root = (w // 2, h // 2)
    heading0 = rng.uniform(0, 2 * math.pi)
    length0 = rng.randint(min_len, max_len)
    first = _fits(root, heading0, length0)
    while first is None:
        heading0 = rng.uniform(0, 2 * math.pi)
        first = _fits(root, heading0, length0)
    tip, pixels = first
    for px, py in pixels:
        skel[py, px] = True
    tips = [(tip, heading0)]
    segments = 1
    bifurcations = 0

    attempts = 0
    while segments < n_segments and tips and attempts < 20000:
        attempts += 1
        idx = rng.randrange(len(tips))
        (tx, ty), heading = tips[idx]
        half = math.radians(rng.uniform(22, 55))
        jitter = math.radians(rng.uniform(-10, 10))
        h1 = heading + half + jitter
        h2 = heading - half + jitter
        l1 = rng.randint(min_len, max_len)
        l2 = rng.randint(min_len, max_len)
        c1 = _fits((tx, ty), h1, l1)
        if c1 is None:
            continue
        # Tentatively draw child 1 so child 2 is checked against it too.
        (t1, px1) = c1
        drawn1 = _draw((tx, ty), t1)
        c2 = _fits((tx, ty), h2, l2)
        if c2 is None:
            for px, py in drawn1:
                skel[py, px] = False
            skel[ty, tx] = True  # junction pixel stays part of the parent line
            continue
        (t2, _px2) = c2
        _draw((tx, ty), t2)
        tips.pop(idx)
        tips.append((t1, h1))
        tips.append((t2, h2))
        segments += 2
        bifurcations += 1
    return RandomTree(skeleton=skel, n_segments=segments, n_bifurcations=bifurcations)


@dataclass
class PhantomEye:
    """Generated eye with construction ground truth for end-to-end checks."""

    size: int
    artery: LabelMask
    vein: LabelMask
    disc: LabelMask
    fovea: Keypoint
    roi: np.ndarray
    bounds: Bounds
    transform: NormTransform
    disc_center: Keypoint
    disc_radius: float
    # Construction values, per vessel class:
    temporal_angle: dict[str, float] = field(default_factory=dict)
    arcade_width: dict[str, int] = field(default_factory=dict)
    branch_width: dict[str, int] = field(default_factory=dict)
    branch_angle_deg: float = 50.0
    n_bifurcations: dict[str, int] = field(default_factory=dict)
    density: dict[str, float] = field(default_factory=dict)
    tortuosity_values: dict[str, list[float]] = field(default_factory=dict)
    centerline_chains: dict[str, list[np.ndarray]] = field(default_factory=dict)


def _rotate(d: np.ndarray, deg: float) -> np.ndarray:
    a = math.radians(deg)
    # +deg rotates counterclockwise on screen (y axis points down)
    return np.array(
        [d[0] * math.cos(a) + d[1] * math.sin(a), -d[0] * math.sin(a) + d[1] * math.cos(a)]
    )


def _arc_positions(samples: np.ndarray) -> np.ndarray:
    seg = np.hypot(*np.diff(samples, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def phantom_eye(
    size: int = 1024,
    disc_center: tuple[float, float] = (312.0, 512.0),
    disc_radius: float = 60.0,
    fovea: tuple[float, float] = (662.0, 512.0),
    temporal_angle_artery: float = 120.0,
    temporal_angle_vein: float = 110.0,
    artery_width: int = 9,
    vein_width: int = 11,
) -> PhantomEye:
    """Two-arcade phantom with one side branch per arcade.

    Each arcade starts 20px from the disc center along its own ray (so the
    first 2 disc radii of arc are exactly straight and the temporal-angle
    construction value is exact), runs straight for 130px, then follows a
    gentle circular arc.  A thinner side branch leaves each arcade at a
    known angle, giving two bifurcations per class.
    """
    dc = np.array(disc_center)
    shape = (size, size)

    ys, xs = np.mgrid[0:size, 0:size]
    roi = (xs - size / 2) ** 2 + (ys - size / 2) ** 2 <= (0.49 * size) ** 2
    disc = (xs - dc[0]) ** 2 + (ys - dc[1]) ** 2 <= disc_radius**2

    eye = PhantomEye(
        size=size,
        artery=LabelMask(np.zeros(shape, np.uint8)),
        vein=LabelMask(np.zeros(shape, np.uint8)),
        disc=LabelMask(disc.astype(np.uint8)),
        fovea=Keypoint(*fovea),
        roi=roi,
        bounds=Bounds(cx=size / 2, cy=size / 2, r=0.49 * size),
        transform=NormTransform(0.0, 0.0, float(size), size),
        disc_center=Keypoint(*disc_center),
        disc_radius=disc_radius,
        temporal_angle={"artery": temporal_angle_artery, "vein": temporal_angle_vein},
        arcade_width={"artery": artery_width, "vein": vein_width},
        branch_width={"artery": 5, "vein": 7},
        n_bifurcations={"artery": 2, "vein": 2},
    )

    specs = (
        ("artery", temporal_angle_artery, artery_width, 5),
        ("vein", temporal_angle_vein, vein_width, 7),
    )
    for vessel_class, angle, w_main, w_branch in specs:
        mask = np.zeros(shape, dtype=bool)
        chains: list[np.ndarray] = []
        torts: list[float] = []
        for sign in (+1.0, -1.0):
            heading = sign * angle / 2.0
            d = np.array([math.cos(math.radians(heading)), -math.sin(math.radians(heading))])
            start = dc + 20.0 * d
            path = sample_arc_path(
                tuple(start), heading, straight_len=130.0, arc_len=250.0,
                arc_curvature=sign * (1.0 / 500.0),
            )
            arcs = _arc_positions(path)
            branch_at = 230.0
            bi = int(np.searchsorted(arcs, branch_at))
            # branch leaves away from the turn direction
            tangent = path[bi + 4] - path[bi - 4]
            tangent /= np.hypot(*tangent)
            bdir = _rotate(tangent, -sign * eye.branch_angle_deg)
            bpath = np.array(
                [path[bi] + t * bdir for t in np.arange(0.0, 80.0, 0.25)]
            )

            band_m, chain_m = rasterize_curve(shape, path, w_main)
            band_b, chain_b = rasterize_curve(shape, bpath, w_branch)
            mask |= band_m | band_b

            # Construction segments: proximal (start..branch), distal
            # (branch..tip), and the straight branch.
            split = int(np.searchsorted(_arc_positions(chain_m), branch_at))
            proximal, distal = chain_m[: split + 1], chain_m[split:]
            for chain in (proximal, distal, chain_b):
                chains.append(chain)
                torts.append(chain_tortuosity(chain))
        lm = LabelMask(mask.astype(np.uint8))
        if vessel_class == "artery":
            eye.artery = lm
        else:
            eye.vein = lm
        eye.centerline_chains[vessel_class] = chains
        eye.tortuosity_values[vessel_class] = torts
        eye.density[vessel_class] = 100.0 * int((mask & roi).sum()) / int(roi.sum())
    return eye


def phantom_av_mask(eye: PhantomEye) -> LabelMask:
    """AV4 mask of the phantom (crossing label where classes overlap)."""
    a = eye.artery.labels != 0
    v = eye.vein.labels != 0
    out = np.zeros(a.shape, dtype=np.uint8)
    out[a] = 1
    out[v] = 2
    out[a & v] = 3
    return LabelMask(out, LabelScheme.AV4)


def render_phantom_cfi(eye: PhantomEye) -> RgbImage:
    """Paint the phantom as a plausible fundus photograph.

    The illuminated region follows the phantom's own bounds circle so a
    boundary detector recovers the recorded geometry; vessels and disc are
    drawn in contrasting shades for visual inspection only.
    """
    size = eye.size
    ys, xs = np.mgrid[0:size, 0:size]
    dist = np.hypot(xs - eye.bounds.cx, ys - eye.bounds.cy)
    inside = dist <= eye.bounds.r
    falloff = 1.0 - 0.25 * dist / max(eye.bounds.r, 1.0)
    img = np.zeros((size, size, 3), dtype=np.float64)
    for c, base in enumerate(FUNDUS_COLOR):
        img[:, :, c] = np.where(inside, np.clip(base * falloff, 40, 255), 0)
    img[eye.disc.labels != 0] = (235, 205, 150)
    img[eye.vein.labels != 0] = (110, 30, 25)
    img[eye.artery.labels != 0] = (150, 45, 35)
    return RgbImage(np.clip(img, 0, 255).astype(np.uint8))
