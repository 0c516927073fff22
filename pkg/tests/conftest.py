import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def strip(cols, width=30, height=1):
    """1-row mask with the given column range(s) set."""
    m = np.zeros((height, width), dtype=bool)
    for c0, c1 in cols if isinstance(cols, list) else [cols]:
        m[:, c0:c1] = True
    return m


def random_mask(rng, height, width, max_blobs=2):
    m = np.zeros((height, width), dtype=bool)
    for _ in range(int(rng.integers(1, max_blobs + 1))):
        h = int(rng.integers(2, max(3, height // 2)))
        w = int(rng.integers(2, max(3, width // 2)))
        y = int(rng.integers(0, height - h + 1))
        x = int(rng.integers(0, width - w + 1))
        m[y:y + h, x:x + w] = True
    return m
