import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fundusvasc import evalstats as es
from fundusvasc.raster import Keypoint, LabelMask


def dice_oracle(p, g):
    """Set-based pixel counting, independent of the vectorized path."""
    ps = set(np.flatnonzero(p).tolist())
    gs = set(np.flatnonzero(g).tolist())
    if not ps and not gs:
        return 1.0
    return 2.0 * len(ps & gs) / (len(ps) + len(gs))


class TestDice:
    def test_identical_nonempty(self):
        m = np.zeros((8, 8), bool)
        m[2:5, 2:5] = True
        assert es.dice(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((8, 8), bool)
        b = np.zeros((8, 8), bool)
        a[0, 0] = True
        b[7, 7] = True
        assert es.dice(a, b) == 0.0

    def test_half_overlap(self):
        a = np.zeros((20, 20), bool)
        b = np.zeros((20, 20), bool)
        a.ravel()[:100] = True
        b.ravel()[50:150] = True
        assert es.dice(a, b) == pytest.approx(0.5)

    def test_both_empty_is_one(self):
        z = np.zeros((4, 4), bool)
        assert es.dice(z, z) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            es.dice(np.zeros((2, 2), bool), np.zeros((3, 2), bool))

    def test_accepts_label_masks(self):
        m = LabelMask(np.eye(4, dtype=np.uint8))
        assert es.dice(m, m) == 1.0

    @given(
        a=arrays(np.bool_, (16, 16), elements=st.booleans()),
        b=arrays(np.bool_, (16, 16), elements=st.booleans()),
    )
    @settings(max_examples=80, deadline=None)
    def test_matches_oracle_and_symmetric(self, a, b):
        assert es.dice(a, b) == dice_oracle(a, b)
        assert es.dice(a, b) == es.dice(b, a)


class TestKeypointError:
    def test_identical(self):
        assert es.keypoint_error(Keypoint(5, 7), Keypoint(5, 7)) == 0.0

    def test_pythagorean(self):
        assert es.keypoint_error(Keypoint(0, 0), Keypoint(3, 4)) == 5.0

    def test_mean_aggregation(self):
        pairs = [(Keypoint(0, 0), Keypoint(3, 4)), (Keypoint(1, 1), Keypoint(1, 1))]
        mean = np.mean([es.keypoint_error(p, g) for p, g in pairs])
        assert mean == pytest.approx(2.5)


class TestCompareFeatures:
    def _gt(self, values):
        return {f"im{i}": {"f": v} for i, v in enumerate(values)}

    def test_identical_system(self):
        gt = self._gt([1.0, 2.0, 3.0, 4.0])
        rows = es.compare_features(gt, {"sys": gt})
        row = rows[0]
        assert row.mae["sys"] == 0.0
        assert row.pearson_r["sys"] == pytest.approx(1.0)
        assert row.grader_mean == pytest.approx(2.5)

    def test_anticorrelated(self):
        gt = self._gt([1.0, 2.0, 3.0, 4.0])
        sys = {f"im{i}": {"f": -v} for i, v in enumerate([1.0, 2.0, 3.0, 4.0])}
        rows = es.compare_features(gt, {"sys": sys})
        assert rows[0].pearson_r["sys"] == pytest.approx(-1.0)

    def test_hand_computed_five_samples(self):
        gt = self._gt([1.0, 2.0, 3.0, 4.0, 5.0])
        sys = {f"im{i}": {"f": v} for i, v in enumerate([1.0, 2.0, 3.0, 4.0, 10.0])}
        rows = es.compare_features(gt, {"sys": sys})
        assert rows[0].mae["sys"] == pytest.approx(1.0)
        # hand arithmetic: cov = 20, var_x = 10, var_y = 50 -> r = 20/sqrt(500)
        assert rows[0].pearson_r["sys"] == pytest.approx(20 / math.sqrt(500))

    def test_insufficient_pairs_flagged(self):
        gt = self._gt([1.0, 2.0])
        rows = es.compare_features(gt, {"sys": gt})
        assert rows[0].insufficient["sys"]
        assert rows[0].mae["sys"] is None

    def test_missing_values_dropped_pairwise(self):
        gt = {"a": {"f": 1.0}, "b": {"f": None}, "c": {"f": 3.0}, "d": {"f": 4.0}, "e": {"f": 5.0}}
        sys = {"a": {"f": 1.0}, "b": {"f": 2.0}, "c": {"f": None}, "d": {"f": 4.0}, "e": {"f": 5.0}}
        rows = es.compare_features(gt, {"sys": sys})
        assert rows[0].n["sys"] == 3  # a, d, e

    def test_row_order_invariant(self):
        gt = self._gt([1.0, 5.0, 2.0, 4.0, 3.0])
        sys = {f"im{i}": {"f": v + 0.5} for i, v in enumerate([1.0, 5.0, 2.0, 4.0, 3.0])}
        rows1 = es.compare_features(gt, {"s": sys})
        gt_rev = dict(reversed(list(gt.items())))
        sys_rev = dict(reversed(list(sys.items())))
        rows2 = es.compare_features(gt_rev, {"s": sys_rev})
        assert rows1[0].mae == rows2[0].mae
        assert rows1[0].pearson_r["s"] == pytest.approx(rows2[0].pearson_r["s"])

    def test_significance_between_systems(self):
        rng = np.random.default_rng(0)
        values = rng.normal(10, 2, 40)
        gt = self._gt(values)
        good = {f"im{i}": {"f": v + rng.normal(0, 0.01)} for i, v in enumerate(values)}
        bad = {f"im{i}": {"f": v + 3.0 + rng.normal(0, 0.01)} for i, v in enumerate(values)}
        rows = es.compare_features(gt, {"good": good, "bad": bad}, reference="good")
        row = rows[0]
        assert row.significance["good"] == "ref"
        assert row.significance["bad"] == "p<0.001"

    def test_identical_errors_not_significant(self):
        gt = self._gt([1.0, 2.0, 3.0, 4.0, 5.0])
        sys = {f"im{i}": {"f": v + 1.0} for i, v in enumerate([1.0, 2.0, 3.0, 4.0, 5.0])}
        rows = es.compare_features(gt, {"a": sys, "b": dict(sys)}, reference="a")
        assert rows[0].significance["b"] == "none"

    def test_insufficient_reference_marks_na(self):
        gt = self._gt([1.0, 2.0, 3.0, 4.0, 5.0])
        thin_ref = {"im0": {"f": 1.0}}  # too few pairs to test against
        full = {f"im{i}": {"f": v} for i, v in enumerate([1.0, 2.0, 3.0, 4.0, 5.0])}
        rows = es.compare_features(gt, {"ref": thin_ref, "sys": full}, reference="ref")
        assert rows[0].significance["sys"] == "n/a"
        assert rows[0].insufficient["ref"]

    def test_scale_shift_invariance_of_r(self):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 1, 20)
        gt = self._gt(x)
        pos = {f"im{i}": {"f": 3.0 * v + 7.0} for i, v in enumerate(x)}
        neg = {f"im{i}": {"f": -2.0 * v + 1.0} for i, v in enumerate(x)}
        rows = es.compare_features(gt, {"pos": pos, "neg": neg})
        assert rows[0].pearson_r["pos"] == pytest.approx(1.0)
        assert rows[0].pearson_r["neg"] == pytest.approx(-1.0)


class TestGroupKfold:
    def test_ten_groups_five_folds(self):
        items = [(f"im{i}", f"g{i % 10}") for i in range(40)]
        folds = es.group_kfold(items, 5, seed=1)
        assert len(folds) == 5
        groups_per_fold = [
            {g for item, g in items if item in set(fold)} for fold in folds
        ]
        assert all(len(gs) == 2 for gs in groups_per_fold)

    def test_no_group_split(self):
        rng = np.random.default_rng(2)
        items = [(f"im{i}", f"g{rng.integers(0, 12)}") for i in range(60)]
        folds = es.group_kfold(items, 4, seed=3)
        seen = {}
        for fi, fold in enumerate(folds):
            for item in fold:
                group = dict(items)[item]
                assert seen.setdefault(group, fi) == fi

    def test_folds_cover_all_items(self):
        items = [(f"im{i}", f"g{i % 7}") for i in range(30)]
        folds = es.group_kfold(items, 3, seed=0)
        assert sorted(x for fold in folds for x in fold) == sorted(i for i, _ in items)

    def test_too_few_groups(self):
        items = [("a", "g1"), ("b", "g2"), ("c", "g3")]
        with pytest.raises(ValueError):
            es.group_kfold(items, 5)

    def test_deterministic_under_seed(self):
        items = [(f"im{i}", f"g{i % 9}") for i in range(30)]
        assert es.group_kfold(items, 3, seed=7) == es.group_kfold(items, 3, seed=7)
        assert es.group_kfold(items, 3, seed=7) != es.group_kfold(items, 3, seed=8)

    def test_fold_sizes_within_one_group(self):
        for n_groups, k in ((11, 4), (13, 5), (7, 3)):
            items = [(f"im{i}", f"g{i % n_groups}") for i in range(n_groups * 2)]
            folds = es.group_kfold(items, k, seed=0)
            sizes = [len({dict(items)[x] for x in fold}) for fold in folds]
            assert max(sizes) - min(sizes) <= 1


class TestBinnedSummary:
    def test_single_bin_median(self):
        pairs = [("Good", v) for v in (0.7, 0.8, 0.9)]
        out = es.binned_summary(pairs)
        assert out["Good"].median == pytest.approx(0.8)
        assert out["Good"].n == 3

    def test_constant_values(self):
        out = es.binned_summary([("Good", 0.8)] * 5)
        s = out["Good"]
        assert s.median == s.q1 == s.q3 == 0.8
        assert s.whisker_lo == s.whisker_hi == 0.8

    def test_hand_computed_quartiles(self):
        # values 1..9 with linear interpolation: q1=3, med=5, q3=7
        pairs = [("x", float(v)) for v in range(1, 10)]
        s = es.binned_summary(pairs)["x"]
        assert (s.q1, s.median, s.q3) == (3.0, 5.0, 7.0)
        assert (s.whisker_lo, s.whisker_hi) == (1.0, 9.0)

    def test_outlier_excluded_from_whiskers(self):
        pairs = [("x", float(v)) for v in range(1, 10)] + [("x", 100.0)]
        s = es.binned_summary(pairs)["x"]
        assert s.whisker_hi < 100.0

    def test_empty_bin_reported(self):
        out = es.binned_summary([("Good", 0.5)], bins=("Good", "Usable", "Bad"))
        assert out["Usable"].n == 0
        assert out["Usable"].median is None
