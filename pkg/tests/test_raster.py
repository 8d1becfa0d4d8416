import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from fundusvasc import raster
from fundusvasc.raster import LabelMask, LabelScheme, LabelValueError


def test_load_mask_all_zero_binary(tmp_path):
    path = tmp_path / "zero.png"
    Image.fromarray(np.zeros((8, 10), np.uint8)).save(path)
    mask = raster.load_mask(path, LabelScheme.BINARY)
    assert mask.labels.shape == (8, 10)
    assert not mask.foreground().any()


def test_load_mask_av4_preserves_values(tmp_path):
    lab = np.arange(16, dtype=np.uint8).reshape(4, 4) % 4
    path = tmp_path / "av.png"
    Image.fromarray(lab).save(path)
    mask = raster.load_mask(path, LabelScheme.AV4)
    assert np.array_equal(mask.labels, lab)


def test_load_mask_out_of_range_reports_value_and_position(tmp_path):
    lab = np.zeros((5, 5), np.uint8)
    lab[2, 3] = 7
    path = tmp_path / "bad.png"
    Image.fromarray(lab).save(path)
    with pytest.raises(LabelValueError, match=r"out-of-range label 7.*x=3.*y=2"):
        raster.load_mask(path, LabelScheme.AV4)


def test_load_mask_binary_accepts_255(tmp_path):
    lab = np.zeros((4, 4), np.uint8)
    lab[1, 1] = 255
    path = tmp_path / "b.png"
    Image.fromarray(lab).save(path)
    mask = raster.load_mask(path, LabelScheme.BINARY)
    assert mask.labels[1, 1] == 1


def test_load_mask_unknown_label_mapped_to_background(tmp_path):
    lab = np.zeros((4, 4), np.uint8)
    lab[0, 0] = 4  # annotation-side "unknown" layer
    lab[1, 1] = 2
    path = tmp_path / "u.png"
    Image.fromarray(lab).save(path)
    with pytest.raises(LabelValueError):
        raster.load_mask(path, LabelScheme.AV4)
    mask = raster.load_mask(path, LabelScheme.AV4, extra_labels_to_background=(4,))
    assert mask.labels[0, 0] == 0
    assert mask.labels[1, 1] == 2


def test_save_load_roundtrip_binary_writes_255(tmp_path):
    lab = np.zeros((6, 6), np.uint8)
    lab[2:4, 2:4] = 1
    mask = LabelMask(lab, LabelScheme.BINARY)
    path = tmp_path / "rt.png"
    raster.save_mask(mask, path)
    on_disk = np.asarray(Image.open(path))
    assert set(np.unique(on_disk)) <= {0, 255}
    back = raster.load_mask(path, LabelScheme.BINARY)
    assert np.array_equal(back.labels, lab)


def test_save_load_roundtrip_av4_exact(tmp_path):
    rng = np.random.default_rng(0)
    lab = rng.integers(0, 4, size=(32, 32), dtype=np.uint8)
    path = tmp_path / "av.png"
    raster.save_mask(LabelMask(lab, LabelScheme.AV4), path)
    back = raster.load_mask(path, LabelScheme.AV4)
    assert np.array_equal(back.labels, lab)


def test_split_av_crossing_in_both():
    lab = np.array([[3, 1], [2, 0]], np.uint8)
    artery, vein = raster.split_av(LabelMask(lab, LabelScheme.AV4))
    assert artery.labels[0, 0] == 1 and vein.labels[0, 0] == 1  # crossing
    assert artery.labels[0, 1] == 1 and vein.labels[0, 1] == 0  # artery only
    assert artery.labels[1, 0] == 0 and vein.labels[1, 0] == 1  # vein only
    assert artery.labels[1, 1] == 0 and vein.labels[1, 1] == 0


def test_split_av_empty():
    artery, vein = raster.split_av(LabelMask(np.zeros((4, 4), np.uint8), LabelScheme.AV4))
    assert not artery.foreground().any() and not vein.foreground().any()


def test_split_av_wrong_scheme():
    with pytest.raises(ValueError, match="AV4"):
        raster.split_av(LabelMask(np.zeros((2, 2), np.uint8), LabelScheme.BINARY))


def test_merge_av_definition():
    a = LabelMask(np.array([[1, 0], [1, 0]], np.uint8))
    v = LabelMask(np.array([[1, 1], [0, 0]], np.uint8))
    merged = raster.merge_av(a, v)
    assert merged.labels[0, 0] == 3  # both -> crossing
    assert merged.labels[0, 1] == 2  # vein only
    assert merged.labels[1, 0] == 1  # artery only
    assert merged.labels[1, 1] == 0


def test_merge_av_dimension_mismatch():
    a = LabelMask(np.zeros((2, 2), np.uint8))
    v = LabelMask(np.zeros((3, 2), np.uint8))
    with pytest.raises(ValueError, match="mismatch"):
        raster.merge_av(a, v)


binary_arrays = arrays(np.uint8, (12, 12), elements=st.integers(0, 1))


@given(a=binary_arrays, v=binary_arrays)
@settings(max_examples=60, deadline=None)
def test_split_merge_identity(a, v):
    artery = LabelMask(a, LabelScheme.BINARY)
    vein = LabelMask(v, LabelScheme.BINARY)
    back_a, back_v = raster.split_av(raster.merge_av(artery, vein))
    assert np.array_equal(back_a.labels, artery.labels)
    assert np.array_equal(back_v.labels, vein.labels)


def test_pretty_av4_png(tmp_path):
    lab = np.array([[0, 1], [2, 3]], np.uint8)
    path = tmp_path / "pretty.png"
    raster.save_mask_pretty(LabelMask(lab, LabelScheme.AV4), path)
    im = Image.open(path)
    assert im.mode == "P"
    with pytest.raises(ValueError):
        raster.save_mask_pretty(LabelMask(np.zeros((2, 2), np.uint8)), path)


def test_types_are_immutable():
    mask = LabelMask(np.zeros((3, 3), np.uint8))
    with pytest.raises(ValueError):
        mask.labels[0, 0] = 1
    img = raster.RgbImage(np.zeros((3, 3, 3), np.uint8))
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 1
