"""Evaluation machinery: overlap metrics, feature comparison tables,
grouped cross-validation folds, and binned distribution summaries.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .raster import Keypoint, LabelMask

QUALITY_BINS = ("Good", "Usable", "Bad")
REGION_BINS = ("macula", "disc", "other")


def dice(pred: LabelMask | np.ndarray, gt: LabelMask | np.ndarray) -> float:
    """Dice overlap 2|P∩G| / (|P|+|G|); two empty masks agree perfectly (1.0)."""
    p = pred.foreground() if isinstance(pred, LabelMask) else np.asarray(pred) != 0
    g = gt.foreground() if isinstance(gt, LabelMask) else np.asarray(gt) != 0
    if p.shape != g.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {g.shape}")
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / total


def keypoint_error(pred: Keypoint, gt: Keypoint) -> float:
    """Euclidean (L2) distance in pixels."""
    return math.hypot(pred.x - gt.x, pred.y - gt.y)


@dataclass
class EvalRecord:
    """Per-image evaluation row with grouping metadata."""

    image_id: str
    group_id: str
    quality: str | None = None
    region: str | None = None
    dice: dict[str, float] = field(default_factory=dict)
    fovea_l2: float | None = None


@dataclass
class ComparisonRow:
    """One feature's comparison across systems: grader mean, per-system MAE
    and Pearson r, and per-system significance of the MAE difference
    against the reference system."""

    feature: str
    grader_mean: float | None
    n: dict[str, int]
    mae: dict[str, float | None]
    pearson_r: dict[str, float | None]
    significance: dict[str, str]
    insufficient: dict[str, bool]


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    if len(x) < 2 or np.std(x) == 0 or np.std(y) == 0:
        return None
    return float(stats.pearsonr(x, y)[0])


def _significance_marker(p: float) -> str:
    if p < 0.001:
        return "p<0.001"
    if p < 0.05:
        return "p<0.05"
    return "none"


def compare_features(
    gt: dict[str, dict[str, float | None]],
    systems: dict[str, dict[str, dict[str, float | None]]],
    reference: str | None = None,
    min_samples: int = 3,
) -> list[ComparisonRow]:
    """Compare per-image feature sets of several systems against ground truth.

    ``gt`` maps image id -> {feature: value}; each entry of ``systems``
    does the same for one system.  Per feature and system, MAE and Pearson
    r are computed over pairwise-complete cases.  The significance of the
    MAE difference against ``reference`` (default: first system) uses a
    two-sided paired Wilcoxon signed-rank test on per-image absolute
    errors.  Rows with fewer than ``min_samples`` pairs are flagged
    insufficient.  Input row order never affects the result.
    """
    if not systems:
        raise ValueError("need at least one system to compare")
    system_names = sorted(systems)
    if reference is None:
        reference = system_names[0]
    if reference not in systems:
        raise ValueError(f"reference system {reference!r} not among systems")

    features = sorted({f for rec in gt.values() for f in rec})
    rows = []
    for feat in features:
        gt_vals = {
            img: rec[feat] for img, rec in gt.items() if rec.get(feat) is not None
        }
        grader_mean = float(np.mean(list(gt_vals.values()))) if gt_vals else None
        abs_errors: dict[str, dict[str, float]] = {}
        n: dict[str, int] = {}
        mae: dict[str, float | None] = {}
        pearson: dict[str, float | None] = {}
        insufficient: dict[str, bool] = {}
        for name in system_names:
            sys_rec = systems[name]
            pairs = sorted(
                img
                for img, g in gt_vals.items()
                if sys_rec.get(img, {}).get(feat) is not None
            )
            n[name] = len(pairs)
            if len(pairs) < min_samples:
                insufficient[name] = True
                mae[name] = None
                pearson[name] = None
                abs_errors[name] = {}
                continue
            insufficient[name] = False
            g = np.array([gt_vals[i] for i in pairs], dtype=float)
            s = np.array([sys_rec[i][feat] for i in pairs], dtype=float)
            err = np.abs(g - s)
            abs_errors[name] = dict(zip(pairs, err))
            mae[name] = float(err.mean())
            pearson[name] = _pearson(g, s)

        significance: dict[str, str] = {}
        ref_err = abs_errors.get(reference, {})
        for name in system_names:
            if name == reference:
                significance[name] = "ref"
                continue
            common = sorted(set(abs_errors.get(name, {})) & set(ref_err))
            if len(common) < min_samples:
                significance[name] = "n/a"
                continue
            d = np.array([abs_errors[name][i] - ref_err[i] for i in common])
            if np.all(d == 0):
                significance[name] = "none"
                continue
            p = float(stats.wilcoxon(d, alternative="two-sided").pvalue)
            significance[name] = _significance_marker(p)

        rows.append(
            ComparisonRow(
                feature=feat,
                grader_mean=grader_mean,
                n=n,
                mae=mae,
                pearson_r=pearson,
                significance=significance,
                insufficient=insufficient,
            )
        )
    return rows


def group_kfold(
    items: list[tuple[str, str]], k: int, seed: int = 0
) -> list[list[str]]:
    """Partition items into k folds without splitting any group.

    ``items`` are (item_id, group_id) pairs.  Distinct groups are shuffled
    deterministically under ``seed`` and dealt into folds whose sizes
    differ by at most one group.  Raises ValueError with fewer groups than
    folds.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    groups = sorted({g for _, g in items})
    if len(groups) < k:
        raise ValueError(f"{len(groups)} groups cannot fill {k} folds")
    rng = random.Random(seed)
    rng.shuffle(groups)
    assignment = {g: i % k for i, g in enumerate(groups)}
    folds: list[list[str]] = [[] for _ in range(k)]
    for item_id, group_id in items:
        folds[assignment[group_id]].append(item_id)
    return folds


@dataclass
class BinStats:
    """The numbers behind one box in a box plot (1.5 IQR whiskers)."""

    n: int
    median: float | None = None
    q1: float | None = None
    q3: float | None = None
    whisker_lo: float | None = None
    whisker_hi: float | None = None


def _bin_stats(vals: np.ndarray) -> BinStats:
    if vals.size == 0:
        return BinStats(n=0)
    q1, med, q3 = np.quantile(vals, [0.25, 0.5, 0.75], method="linear")
    iqr = q3 - q1
    return BinStats(
        n=int(vals.size),
        median=float(med),
        q1=float(q1),
        q3=float(q3),
        whisker_lo=float(vals[vals >= q1 - 1.5 * iqr].min()),
        whisker_hi=float(vals[vals <= q3 + 1.5 * iqr].max()),
    )


def binned_summary(
    pairs: list[tuple[str, float]], bins: tuple[str, ...] | None = None
) -> dict[str, BinStats]:
    """Per-bin distribution stats for (bin, value) pairs.

    Quartiles use linear interpolation (inclusive), whiskers the most
    extreme values within 1.5 IQR of the quartiles.  Bins listed in
    ``bins`` but absent from the data are reported with n = 0; data bins
    not listed are appended.
    """
    by_bin: dict[str, list[float]] = {}
    for b, v in pairs:
        by_bin.setdefault(b, []).append(v)
    order = list(bins) if bins is not None else sorted(by_bin)
    order += sorted(b for b in by_bin if b not in order)
    return {b: _bin_stats(np.asarray(by_bin.get(b, ()), dtype=float)) for b in order}
