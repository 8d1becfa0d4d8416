"""Model-agnostic prediction plumbing.

Assembles the 6-channel model input, fuses sliding-window patch
predictions with Gaussian blending, averages flip-based test-time
augmentations, decodes probabilities to label masks, and encodes/decodes
keypoint heatmaps.  The patch predictor itself is a pluggable seam: this
module ships a file-backed predictor (precomputed probability grids) and a
constant predictor for tests, not a neural network.
"""

from __future__ import annotations

import abc
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import Keypoint, LabelMask, LabelScheme, ProbMap

WINDOW = 512
STRIDE = 256

# Test-time augmentation sets; names match the per-task configuration.
TTA_SETS: dict[str, tuple[str, ...]] = {
    "none": ("id",),
    "horizontal": ("id", "h"),
    "vertical": ("id", "v"),
    "full": ("id", "h", "v", "hv"),
}


class PatchPredictor(abc.ABC):
    """Maps a (window, window, 6) float input to (window, window, C) probabilities.

    Implementations must be deterministic for a fixed input.  Set
    ``concurrency_safe = False`` if predict() may not be called from
    multiple threads at once.
    """

    num_classes: int = 1
    concurrency_safe: bool = True

    @abc.abstractmethod
    def predict(self, patch: np.ndarray, origin: tuple[int, int] = (0, 0)) -> np.ndarray:
        """Return class probabilities for one window.

        ``origin`` is the (x, y) offset of the window in the full frame;
        pixel-driven predictors may ignore it.
        """


class ConstantPredictor(PatchPredictor):
    """Returns the same probability everywhere; useful in tests."""

    def __init__(self, value: float, num_classes: int = 1):
        self.value = float(value)
        self.num_classes = num_classes

    def predict(self, patch, origin=(0, 0)):
        h, w = patch.shape[:2]
        return np.full((h, w, self.num_classes), self.value, dtype=np.float32)


class FilePredictor(PatchPredictor):
    """Serves precomputed probability patches from disk.

    Layout: a JSON manifest next to raw float32 grids, one file per window::

        {"window": 512, "classes": 2,
         "patches": {"x_y": "relative/path.f32", ...}}

    Each grid is a little-endian float32 buffer of window*window*classes
    values in (row, col, class) order.  Lookup is by window origin, so this
    predictor is meant for fusion without flip augmentation.
    """

    def __init__(self, manifest_path: str | Path):
        self.root = Path(manifest_path).parent
        manifest = json.loads(Path(manifest_path).read_text())
        self.window = int(manifest["window"])
        self.num_classes = int(manifest["classes"])
        self.patches: dict[str, str] = dict(manifest["patches"])

    def predict(self, patch, origin=(0, 0)):
        key = f"{origin[0]}_{origin[1]}"
        try:
            rel = self.patches[key]
        except KeyError:
            raise KeyError(f"no precomputed patch for window origin {origin}") from None
        buf = np.fromfile(self.root / rel, dtype="<f4")
        return buf.reshape(self.window, self.window, self.num_classes)


def stack_channels(original, enhanced) -> np.ndarray:
    """Concatenate original and enhanced RGB into a [0,1] float32 6-channel image.

    Accepts RgbImage carriers or plain (H, W, 3) uint8 arrays.
    """
    orig = original.pixels if hasattr(original, "pixels") else np.asarray(original)
    enh = enhanced.pixels if hasattr(enhanced, "pixels") else np.asarray(enhanced)
    if orig.shape != enh.shape:
        raise ValueError(f"dimension mismatch: {orig.shape} vs {enh.shape}")
    out = np.concatenate([orig, enh], axis=2).astype(np.float32)
    out /= 255.0
    return out


def _merge_weights(window: int) -> np.ndarray:
    """2-D Gaussian blending kernel, sigma = window / 4, centered in the window."""
    sigma = window / 4.0
    c = (window - 1) / 2.0
    ax = np.arange(window, dtype=np.float64) - c
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    return np.outer(g, g)


def _window_origins(size: int, window: int, stride: int) -> list[tuple[int, int]]:
    if size < window or (size - window) % stride != 0:
        raise ValueError(
            f"input size {size} does not tile exactly with window {window}, stride {stride}"
        )
    offsets = range(0, size - window + 1, stride)
    return [(x, y) for y in offsets for x in offsets]


def tiled_predict(
    x: np.ndarray,
    predictor: PatchPredictor,
    window: int = WINDOW,
    stride: int = STRIDE,
    threads: int = 1,
) -> ProbMap:
    """Sliding-window inference with 50% overlap and Gaussian merging.

    For a 1024 input with the default window/stride this issues exactly 9
    predictor calls at offsets {0, 256, 512}^2.  Per pixel the output is
    sum(w_i * p_i) / sum(w_i) over the covering windows, so probabilities
    stay in [0, 1].  Accumulation follows a fixed window order regardless
    of how many threads compute the predictions.
    """
    if x.ndim != 3:
        raise ValueError(f"expected (H, W, C) input, got shape {x.shape}")
    size = x.shape[0]
    if x.shape[1] != size:
        raise ValueError(f"expected square input, got {x.shape[:2]}")
    origins = _window_origins(size, window, stride)
    weights = _merge_weights(window)

    def _run(origin):
        ox, oy = origin
        pred = np.asarray(
            predictor.predict(x[oy : oy + window, ox : ox + window, :], origin=origin)
        )
        if pred.ndim == 2:
            pred = pred[:, :, None]
        if pred.shape[:2] != (window, window):
            raise ValueError(f"predictor output shape {pred.shape} != window {window}")
        return pred

    if threads > 1 and predictor.concurrency_safe:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            preds = list(pool.map(_run, origins))
    else:
        preds = [_run(o) for o in origins]

    classes = preds[0].shape[2]
    num = np.zeros((size, size, classes), dtype=np.float64)
    den = np.zeros((size, size), dtype=np.float64)
    for (ox, oy), pred in zip(origins, preds):
        num[oy : oy + window, ox : ox + window, :] += weights[:, :, None] * pred
        den[oy : oy + window, ox : ox + window] += weights
    out = num / den[:, :, None]
    return ProbMap(np.clip(out, 0.0, 1.0).astype(np.float32))


def _flip(arr: np.ndarray, aug: str) -> np.ndarray:
    if aug == "id":
        return arr
    if aug == "h":
        return arr[:, ::-1]
    if aug == "v":
        return arr[::-1, :]
    if aug == "hv":
        return arr[::-1, ::-1]
    raise ValueError(f"unknown augmentation {aug!r}")


def tta_predict(
    x: np.ndarray,
    predictor: PatchPredictor,
    augmentations: str = "full",
    window: int = WINDOW,
    stride: int = STRIDE,
    threads: int = 1,
) -> ProbMap:
    """Average tiled predictions over a flip set, realigned to the input frame.

    ``augmentations`` selects the set: "full" (identity + horizontal +
    vertical + both) for segmentation, "vertical"/"horizontal" for the
    single-flip tasks, "none" to disable.  Flips are involutions, so each
    output is realigned by re-applying its own flip before averaging; the
    average uses balanced pairwise sums so a flip-equivariant predictor
    reproduces its single-pass output bit-exactly.
    """
    augs = TTA_SETS.get(augmentations)
    if augs is None:
        raise ValueError(f"unknown augmentation set {augmentations!r}; use one of {sorted(TTA_SETS)}")
    outs = []
    for aug in augs:
        pred = tiled_predict(_flip(x, aug), predictor, window=window, stride=stride, threads=threads)
        outs.append(np.ascontiguousarray(_flip(pred.values, aug)))
    if len(outs) == 1:
        mean = outs[0]
    elif len(outs) == 2:
        mean = (outs[0] + outs[1]) / 2.0
    else:
        mean = ((outs[0] + outs[1]) + (outs[2] + outs[3])) / 4.0
    return ProbMap(mean)


def decode(prob: ProbMap, scheme: LabelScheme) -> LabelMask:
    """Threshold or argmax a probability map into a label mask.

    BINARY accepts 1 channel (foreground probability) or 2 channels
    (background/foreground); foreground wins at exactly 0.5.  AV4 requires
    4 channels and takes the per-pixel argmax, ties going to the lowest
    class index.
    """
    v = prob.values
    if scheme is LabelScheme.BINARY:
        if prob.classes not in (1, 2):
            raise ValueError(f"BINARY decode expects 1 or 2 classes, got {prob.classes}")
        fg = v[:, :, -1] if prob.classes == 2 else v[:, :, 0]
        return LabelMask((fg >= 0.5).astype(np.uint8), LabelScheme.BINARY)
    if scheme is LabelScheme.AV4:
        if prob.classes != 4:
            raise ValueError(f"AV4 decode expects 4 classes, got {prob.classes}")
        return LabelMask(np.argmax(v, axis=2).astype(np.uint8), LabelScheme.AV4)
    raise ValueError(f"unsupported scheme {scheme}")


@dataclass(frozen=True)
class HeatmapSpec:
    """Gaussian keypoint heatmap parameters (peak normalized to 1)."""

    sigma: float = 50.0
    size: int = 512

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


def make_heatmap(k: Keypoint, spec: HeatmapSpec = HeatmapSpec()) -> ProbMap:
    """h(x, y) = exp(-((x-kx)^2 + (y-ky)^2) / (2 sigma^2))."""
    if not (0 <= k.x < spec.size and 0 <= k.y < spec.size):
        raise ValueError(f"keypoint {k} outside {spec.size}px frame")
    ax = np.arange(spec.size, dtype=np.float64)
    dx2 = (ax - k.x) ** 2
    dy2 = (ax - k.y) ** 2
    h = np.exp(-(dy2[:, None] + dx2[None, :]) / (2.0 * spec.sigma**2))
    return ProbMap(h.astype(np.float32))


def extract_keypoint(h: ProbMap) -> Keypoint:
    """Location of the heatmap maximum; ties break to the lowest row-major index."""
    v = h.values[:, :, 0]
    if v.size == 0:
        raise ValueError("empty heatmap")
    idx = int(np.argmax(v))
    y, x = divmod(idx, v.shape[1])
    return Keypoint(float(x), float(y))
