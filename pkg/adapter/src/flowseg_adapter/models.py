"""Predictor interfaces and the GPU-free stub implementations.

Real SAM-style segmenters or learned flow estimators plug in by implementing
the two protocols below and registering under a name; the stubs keep the
export pipeline runnable (and testable) on any machine.
"""

from __future__ import annotations

from typing import Callable, Dict, Protocol, Tuple

import numpy as np


class Segmenter(Protocol):
    name: str
    checkpoint: str

    def predict(self, image: np.ndarray, point: Tuple[int, int]) -> Tuple[np.ndarray, float, float]:
        """Return (per-pixel probability mask, fiou score, mos score) for one
        point prompt. Image is (H, W, 3) uint8, point is (x, y)."""
        ...


class FlowEstimator(Protocol):
    name: str
    checkpoint: str

    def estimate(self, frame_a: np.ndarray, frame_b: np.ndarray) -> np.ndarray:
        """Return an (H, W, 2) float32 displacement field from a to b."""
        ...


class StubSegmenter:
    """Deterministic geometric segmenter: a soft disk around each prompt.

    The radius and scores vary with the prompt position so exports exercise
    thresholding, deduplication, and score plumbing without any model weights.
    """

    name = "stub"
    checkpoint = "builtin"

    def predict(self, image, point):
        h, w = image.shape[:2]
        x, y = point
        radius = 3 + (x * 7 + y * 13) % 5
        yy, xx = np.ogrid[0:h, 0:w]
        dist = np.sqrt((yy - y) ** 2 + (xx - x) ** 2)
        prob = np.clip(1.0 - dist / (2.0 * radius), 0.0, 1.0)
        fiou = 0.3 + 0.6 * (((x + y) % 10) / 9.0)
        mos = 0.2 + 0.7 * (((x * 3 + y) % 10) / 9.0)
        return prob, float(fiou), float(mos)


class StubFlowEstimator:
    """Exhaustive small-shift matcher: the integer translation in [-3, 3]^2
    minimizing mean absolute intensity difference, applied globally.
    Identical frames therefore produce an exactly zero field.
    """

    name = "stub"
    checkpoint = "builtin"
    search = 3

    def estimate(self, frame_a, frame_b):
        a = frame_a.astype(np.float32).mean(axis=2)
        b = frame_b.astype(np.float32).mean(axis=2)
        h, w = a.shape

        def cost(dx, dy):
            ys0 = slice(max(0, -dy), min(h, h - dy))
            xs0 = slice(max(0, -dx), min(w, w - dx))
            ys1 = slice(max(0, dy), min(h, h + dy))
            xs1 = slice(max(0, dx), min(w, w + dx))
            if ys0.stop <= ys0.start or xs0.stop <= xs0.start:
                return None
            return float(np.abs(a[ys0, xs0] - b[ys1, xs1]).mean())

        best_cost = cost(0, 0)
        best_dx = best_dy = 0
        for dy in range(-self.search, self.search + 1):
            for dx in range(-self.search, self.search + 1):
                if (dx, dy) == (0, 0):
                    continue
                c = cost(dx, dy)
                if c is not None and c < best_cost:
                    best_cost, best_dx, best_dy = c, dx, dy
        flow = np.empty((h, w, 2), dtype=np.float32)
        flow[:, :, 0] = best_dx
        flow[:, :, 1] = best_dy
        return flow


SEGMENTERS: Dict[str, Callable[[], Segmenter]] = {"stub": StubSegmenter}
FLOW_ESTIMATORS: Dict[str, Callable[[], FlowEstimator]] = {"stub": StubFlowEstimator}


class ModelLoadError(RuntimeError):
    pass


def load_segmenter(name: str) -> Segmenter:
    try:
        return SEGMENTERS[name]()
    except KeyError:
        raise ModelLoadError(f"unknown segmenter {name!r}; registered: {sorted(SEGMENTERS)}")


def load_flow_estimator(name: str) -> FlowEstimator:
    try:
        return FLOW_ESTIMATORS[name]()
    except KeyError:
        raise ModelLoadError(f"unknown flow estimator {name!r}; registered: {sorted(FLOW_ESTIMATORS)}")
