"""Image-level vascular biomarkers.

Computes, per vessel class (artery/vein): vascular density, central
retinal equivalents (CRE) by iterative Knudtson pairing of calibers at a
measurement circle around the disc, the temporal arcade angle, per-segment
geometry aggregates (caliber, tortuosity, curvature, inflections,
bifurcation angles), and the bifurcation count.  Every feature degrades to
an explicit missing value instead of aborting the record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import vesselgeom, vesselgraph
from .raster import Keypoint, LabelMask
from .vesselgraph import KIND_BIFURCATION, VesselGraph

KNUDTSON_ARTERY = 0.88
KNUDTSON_VEIN = 0.95

ARTERY = "artery"
VEIN = "vein"

# CSV column order for feature records (after image id / class columns).
FEATURE_COLUMNS = (
    "temporal_angle",
    "cre",
    "vascular_density",
    "caliber_med",
    "caliber_std",
    "tortuosity_med",
    "tortuosity_lw",
    "curvature_med",
    "inflection_med",
    "bif_angle_mean",
    "bif_angle_med",
    "n_bifurcations",
)


@dataclass(frozen=True)
class RegionSpec:
    """Anatomical context for regional measurements.

    ``roi`` is the fundus region-of-interest mask (density denominator).
    Disc and fovea may be absent, in which case the features that need
    them come out missing.  The temporal side is the half-plane containing
    the fovea relative to the vertical line through the disc center.
    """

    roi: np.ndarray
    disc_center: Keypoint | None = None
    disc_radius: float | None = None
    fovea: Keypoint | None = None
    laterality: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "roi", np.asarray(self.roi) != 0)
        if self.disc_radius is not None and self.disc_radius <= 0:
            raise ValueError("disc radius must be positive")

    @property
    def temporal_sign(self) -> float | None:
        """+1 if the temporal side is toward +x, -1 toward -x."""
        if self.disc_center is None or self.fovea is None:
            return None
        dx = self.fovea.x - self.disc_center.x
        if dx == 0:
            return None
        return math.copysign(1.0, dx)


def region_from_masks(
    roi: np.ndarray,
    disc_mask: LabelMask | np.ndarray | None = None,
    fovea: Keypoint | None = None,
    laterality: str | None = None,
) -> RegionSpec:
    """Build a RegionSpec, deriving the disc circle from its mask.

    The disc radius is the radius of the equal-area circle, sqrt(area/pi),
    which is robust to non-circular disc masks.
    """
    disc_center = None
    disc_radius = None
    if disc_mask is not None:
        fg = disc_mask.foreground() if isinstance(disc_mask, LabelMask) else np.asarray(disc_mask) != 0
        area = int(fg.sum())
        if area > 0:
            ys, xs = np.nonzero(fg)
            disc_center = Keypoint(float(xs.mean()), float(ys.mean()))
            disc_radius = math.sqrt(area / math.pi)
    return RegionSpec(roi, disc_center, disc_radius, fovea, laterality)


@dataclass
class FeatureConfig:
    """Tunable parameters of feature extraction; defaults are for the 1024 frame."""

    cre_radius: float = 3.0  # measurement circle, in disc radii
    delta: float = 10.0  # bifurcation-angle sampling distance, px
    width_step: float = 2.0  # caliber sampling interval along the spline, px
    inflection_eps: float = vesselgeom.INFLECTION_EPS
    curvature_step: float = vesselgeom.CURVATURE_STEP
    curvature_scale: float = 1.0  # report scale for curvature values
    prune_len: float = vesselgraph.PRUNE_LEN
    min_chain_points: int = vesselgeom.MIN_CHAIN_POINTS
    exclude_disc_bifurcations: bool = True

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class FeatureRecord:
    """Biomarkers of one vessel class in one image; None marks a missing value."""

    temporal_angle: float | None = None
    cre: float | None = None
    vascular_density: float | None = None
    caliber_med: float | None = None
    caliber_std: float | None = None
    tortuosity_med: float | None = None
    tortuosity_lw: float | None = None
    curvature_med: float | None = None
    inflection_med: float | None = None
    bif_angle_mean: float | None = None
    bif_angle_med: float | None = None
    n_bifurcations: float | None = None

    def as_dict(self) -> dict[str, float | None]:
        return {name: getattr(self, name) for name in FEATURE_COLUMNS}


def vascular_density(mask: LabelMask | np.ndarray, roi: np.ndarray) -> float:
    """Percentage of ROI pixels labeled vessel: 100 * sum(I*M) / sum(M)."""
    vessel = mask.foreground() if isinstance(mask, LabelMask) else np.asarray(mask) != 0
    roi = np.asarray(roi) != 0
    if vessel.shape != roi.shape:
        raise ValueError(f"dimension mismatch: {vessel.shape} vs {roi.shape}")
    denom = int(roi.sum())
    if denom == 0:
        raise ValueError("empty ROI")
    return 100.0 * int((vessel & roi).sum()) / denom


def knudtson_factor(vessel_class: str) -> float:
    if vessel_class == ARTERY:
        return KNUDTSON_ARTERY
    if vessel_class == VEIN:
        return KNUDTSON_VEIN
    raise ValueError(f"unknown vessel class {vessel_class!r}")


def cre(widths: list[float] | np.ndarray, vessel_class: str) -> float | None:
    """Central retinal equivalent by iterative Knudtson pairing.

    Repeatedly replaces the largest and smallest width with
    k * sqrt(w_max^2 + w_min^2) (k = 0.88 arteries, 0.95 veins) until one
    value remains.  Fewer than 2 input widths yield a missing value.
    """
    vals = sorted(float(w) for w in np.asarray(widths, dtype=float))
    if len(vals) < 2:
        return None
    k = knudtson_factor(vessel_class)
    while len(vals) > 1:
        combined = k * math.hypot(vals[0], vals[-1])
        vals = sorted(vals[1:-1] + [combined])
    return vals[0]


def aggregate(values, mode: str, lengths=None) -> float | None:
    """Aggregate per-segment values: med, mean, std (population) or LW.

    LW is the length-weighted mean sum(v_i * L_i) / sum(L_i).  None
    entries are dropped; an empty input yields a missing value.
    """
    if lengths is None:
        pairs = [(v, 1.0) for v in values if v is not None]
    else:
        pairs = [(v, l) for v, l in zip(values, lengths) if v is not None]
    if not pairs:
        return None
    vals = np.array([p[0] for p in pairs], dtype=float)
    if mode == "med":
        return float(np.median(vals))
    if mode == "mean":
        return float(np.mean(vals))
    if mode == "std":
        return float(np.std(vals))
    if mode == "LW":
        wts = np.array([p[1] for p in pairs], dtype=float)
        total = wts.sum()
        if total == 0:
            return None
        return float(np.sum(vals * wts) / total)
    raise ValueError(f"unknown aggregation mode {mode!r}")


@dataclass
class SegmentMeasure:
    """Per-segment measurements used to build the image-level record."""

    edge_id: int
    length: float
    spline: vesselgeom.SegmentSpline | None
    tortuosity: float | None = None
    mean_curvature: float | None = None
    inflections: float | None = None
    caliber: float | None = None


def measure_segments(
    graph: VesselGraph,
    mask: np.ndarray,
    cfg: FeatureConfig,
) -> dict[int, SegmentMeasure]:
    """Fit splines and measure every graph edge long enough to carry one."""
    out: dict[int, SegmentMeasure] = {}
    fg = np.asarray(mask) != 0
    for eid in sorted(graph.edges):
        edge = graph.edges[eid]
        measure = SegmentMeasure(edge_id=eid, length=edge.length, spline=None)
        out[eid] = measure
        if len(edge.chain) < cfg.min_chain_points:
            continue
        try:
            spline = vesselgeom.fit_spline(edge.chain)
        except vesselgeom.TooShort:
            continue
        measure.spline = spline
        measure.tortuosity = vesselgeom.tortuosity(edge.chain)
        measure.mean_curvature = (
            vesselgeom.mean_curvature(spline, step=cfg.curvature_step) * cfg.curvature_scale
        )
        measure.inflections = float(
            vesselgeom.inflection_count(spline, eps=cfg.inflection_eps, step=cfg.curvature_step)
        )
        _, measure.caliber = vesselgeom.measure_widths(spline, fg, step=cfg.width_step)
    return out


def _inside_disc(x: float, y: float, region: RegionSpec) -> bool:
    if region.disc_center is None or region.disc_radius is None:
        return False
    return math.hypot(x - region.disc_center.x, y - region.disc_center.y) <= region.disc_radius


def count_bifurcations(graph: VesselGraph, region: RegionSpec, cfg: FeatureConfig) -> int:
    """Bifurcation nodes, optionally excluding the optic-nerve-head tangle."""
    count = 0
    for node in graph.nodes.values():
        if node.kind != KIND_BIFURCATION:
            continue
        if cfg.exclude_disc_bifurcations and _inside_disc(node.x, node.y, region):
            continue
        count += 1
    return count


def bifurcation_angles(
    graph: VesselGraph,
    measures: dict[int, SegmentMeasure],
    region: RegionSpec,
    cfg: FeatureConfig,
) -> list[float]:
    """Angles at oriented bifurcations with exactly two measurable children.

    Children shorter than delta (or too short for a spline) exclude their
    bifurcation, matching the measurement protocol.
    """
    angles = []
    for node in graph.bifurcations():
        if cfg.exclude_disc_bifurcations and _inside_disc(node.x, node.y, region):
            continue
        children = graph.children(node.id)
        if len(children) != 2:
            continue
        child_splines = []
        for edge in children:
            m = measures.get(edge.id)
            if m is None or m.spline is None:
                child_splines = None
                break
            child_splines.append(m.spline)
        if child_splines is None:
            continue
        angle = vesselgeom.bifurcation_angle(
            np.array([node.x, node.y]), child_splines, cfg.delta
        )
        if angle is not None:
            angles.append(angle)
    return angles


def _circle_crossing_widths(
    graph: VesselGraph,
    measures: dict[int, SegmentMeasure],
    mask: np.ndarray,
    region: RegionSpec,
    cfg: FeatureConfig,
) -> list[float]:
    """One local caliber per temporal-side crossing of the measurement circle."""
    if region.disc_center is None or region.disc_radius is None:
        return []
    sign = region.temporal_sign
    if sign is None:
        return []
    radius = cfg.cre_radius * region.disc_radius
    dc = np.array([region.disc_center.x, region.disc_center.y])
    fg = np.asarray(mask) != 0
    widths: list[float] = []
    for eid in sorted(graph.edges):
        m = measures.get(eid)
        if m is None or m.spline is None:
            continue
        chain = graph.edges[eid].chain
        dist = np.hypot(chain[:, 0] - dc[0], chain[:, 1] - dc[1]) - radius
        crossing_idx = np.nonzero(np.diff(np.sign(dist)) != 0)[0]
        if crossing_idx.size == 0:
            continue
        seg = np.hypot(*np.diff(chain, axis=0).T)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        for i in crossing_idx:
            p = chain[i]
            if (p[0] - dc[0]) * sign < 0:
                continue
            local = _local_caliber(m.spline, fg, arc[i], cfg)
            if local is not None:
                widths.append(local)
    return widths


def _local_caliber(
    spline: vesselgeom.SegmentSpline,
    fg: np.ndarray,
    arc_pos: float,
    cfg: FeatureConfig,
) -> float | None:
    """Median ray-cast width over a short arc window around ``arc_pos``."""
    lo = max(0.0, arc_pos - 2 * cfg.width_step)
    hi = min(spline.arc_length, arc_pos + 2 * cfg.width_step)
    samples = np.linspace(lo, hi, 5)
    vals = []
    h, w = fg.shape
    for s in samples:
        t = float(spline.t_at_arc(s))
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
        vals.append(
            vesselgeom._cast_ray(fg, p, n, vesselgeom.RAY_STRIDE)
            + vesselgeom._cast_ray(fg, p, -n, vesselgeom.RAY_STRIDE)
        )
    if not vals:
        return None
    return float(np.median(vals))


def compute_cre(
    graph: VesselGraph,
    measures: dict[int, SegmentMeasure],
    mask: np.ndarray,
    region: RegionSpec,
    vessel_class: str,
    cfg: FeatureConfig,
) -> float | None:
    """CRE over temporal-side calibers at the measurement circle.

    Missing when the disc is unknown or fewer than two vessels cross the
    circle on the temporal side.
    """
    widths = _circle_crossing_widths(graph, measures, mask, region, cfg)
    return cre(widths, vessel_class)


def temporal_angle(
    graph: VesselGraph,
    measures: dict[int, SegmentMeasure],
    region: RegionSpec,
) -> float | None:
    """Angle between the superior- and inferior-temporal arcade directions.

    The arcade for each vertical half is the root-to-leaf path with the
    largest length-weighted caliber that leaves the disc toward the
    temporal half-plane.  Each arcade's direction is the mean unit vector
    from the disc center over its first 2 disc radii of arc; the result is
    the angle between the two directions.  Either arcade missing yields a
    missing value.
    """
    if region.disc_center is None or region.disc_radius is None:
        return None
    sign = region.temporal_sign
    if sign is None:
        return None
    dc = np.array([region.disc_center.x, region.disc_center.y])

    paths = _root_leaf_paths(graph)
    best_up: tuple[float, np.ndarray] | None = None
    best_down: tuple[float, np.ndarray] | None = None
    for path in paths:
        chain = _path_chain(graph, path)
        direction = _arcade_direction(chain, dc, 2.0 * region.disc_radius)
        if direction is None:
            continue
        if direction[0] * sign <= 0:
            continue  # not leaving toward the temporal side
        score = 0.0
        for eid in path:
            m = measures.get(eid)
            caliber = m.caliber if m is not None and m.caliber is not None else 0.0
            score += graph.edges[eid].length * caliber
        if direction[1] <= 0 and (best_up is None or score > best_up[0]):
            best_up = (score, direction)
        if direction[1] >= 0 and (best_down is None or score > best_down[0]):
            best_down = (score, direction)
    if best_up is None or best_down is None:
        return None
    cosang = float(np.clip(np.dot(best_up[1], best_down[1]), -1.0, 1.0))
    return math.degrees(math.acos(cosang))


def _root_leaf_paths(graph: VesselGraph) -> list[list[int]]:
    """Edge-id paths from each orientation root down to every leaf."""
    paths = []
    for node in graph.nodes.values():
        if graph.children(node.id):
            continue
        if node.parent_edge is None:
            continue
        # leaf: walk up parent edges
        path = []
        nid = node.id
        while graph.nodes[nid].parent_edge is not None:
            eid = graph.nodes[nid].parent_edge
            path.append(eid)
            nid = graph.edges[eid].parent
            if len(path) > len(graph.edges):
                break  # defensive: malformed orientation
        paths.append(path[::-1])
    return paths


def _path_chain(graph: VesselGraph, path: list[int]) -> np.ndarray:
    chains = [graph.edges[eid].chain for eid in path]
    return np.vstack(chains) if chains else np.empty((0, 2))


def _arcade_direction(chain: np.ndarray, dc: np.ndarray, max_arc: float) -> np.ndarray | None:
    if len(chain) < 2:
        return None
    seg = np.hypot(*np.diff(chain, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    pts = chain[arc <= max_arc]
    rel = pts - dc
    dist = np.hypot(rel[:, 0], rel[:, 1])
    ok = dist >= 1.0
    if not ok.any():
        return None
    units = rel[ok] / dist[ok, None]
    mean = units.mean(axis=0)
    norm = math.hypot(mean[0], mean[1])
    if norm == 0:
        return None
    return mean / norm


def extract_features(
    artery: LabelMask | np.ndarray,
    vein: LabelMask | np.ndarray,
    region: RegionSpec,
    cfg: FeatureConfig | None = None,
) -> dict[str, FeatureRecord]:
    """Run the full per-class pipeline and assemble feature records.

    Deterministic for fixed inputs and config; every unavailable feature is
    reported as a missing value rather than aborting the record.
    """
    cfg = cfg or FeatureConfig()
    out = {}
    for vessel_class, mask in ((ARTERY, artery), (VEIN, vein)):
        fg = mask.foreground() if isinstance(mask, LabelMask) else np.asarray(mask) != 0
        out[vessel_class] = _extract_class(fg, region, vessel_class, cfg)
    return out


def _extract_class(
    fg: np.ndarray, region: RegionSpec, vessel_class: str, cfg: FeatureConfig
) -> FeatureRecord:
    rec = FeatureRecord()
    if region.roi.shape == fg.shape and region.roi.any():
        rec.vascular_density = vascular_density(fg, region.roi)

    skel = vesselgraph.skeletonize(fg)
    graph = vesselgraph.build_graph(skel, prune_len=cfg.prune_len)
    if region.disc_center is not None:
        graph = vesselgraph.orient_graph(graph, region.disc_center)
    if not graph.edges:
        return rec

    measures = measure_segments(graph, fg, cfg)
    torts = [m.tortuosity for m in measures.values() if m.spline is not None]
    lengths = [m.length for m in measures.values() if m.spline is not None]
    curvs = [m.mean_curvature for m in measures.values() if m.spline is not None]
    infls = [m.inflections for m in measures.values() if m.spline is not None]
    cals = [m.caliber for m in measures.values() if m.spline is not None]

    rec.tortuosity_med = aggregate(torts, "med")
    rec.tortuosity_lw = aggregate(torts, "LW", lengths)
    rec.curvature_med = aggregate(curvs, "med")
    rec.inflection_med = aggregate(infls, "med")
    rec.caliber_med = aggregate(cals, "med")
    rec.caliber_std = aggregate(cals, "std")
    rec.n_bifurcations = float(count_bifurcations(graph, region, cfg))

    if region.disc_center is not None:
        angles = bifurcation_angles(graph, measures, region, cfg)
        rec.bif_angle_mean = aggregate(angles, "mean")
        rec.bif_angle_med = aggregate(angles, "med")
        rec.cre = compute_cre(graph, measures, fg, region, vessel_class, cfg)
        rec.temporal_angle = temporal_angle(graph, measures, region)
    return rec
