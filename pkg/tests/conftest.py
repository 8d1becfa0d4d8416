import numpy as np
import pytest

from fundusvasc import synth


def rasterize(points: np.ndarray) -> np.ndarray:
    """Round dense float samples to a deduplicated pixel chain."""
    ix = np.floor(points + 0.5)
    keep = np.ones(len(ix), dtype=bool)
    keep[1:] = np.any(np.diff(ix, axis=0) != 0, axis=1)
    return ix[keep]


@pytest.fixture(scope="session")
def phantom():
    return synth.phantom_eye()
