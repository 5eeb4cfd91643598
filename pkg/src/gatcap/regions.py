"""Per-image region bundles and their padded batch form."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# geometry row given to padding slots; never attended to
_PAD_BOX = np.array([0.25, 0.25, 0.75, 0.75, 0.25])


class RegionError(ValueError):
    """Invalid bounding-box geometry."""


def box_area(box) -> float:
    x0, y0, x1, y1 = box[:4]
    return (x1 - x0) * (y1 - y0)


def geometry_row(box) -> np.ndarray:
    """The 5-vector (x_min, y_min, x_max, y_max, S) of a box on a unit image."""
    return np.array([box[0], box[1], box[2], box[3], box_area(box)], dtype=np.float64)


def validate_geometry(geometry: np.ndarray) -> None:
    g = np.asarray(geometry)
    if g.ndim != 2 or g.shape[1] != 5:
        raise RegionError(f"geometry must be [N, 5], got {g.shape}")
    if not (g[:, 0] < g[:, 2]).all() or not (g[:, 1] < g[:, 3]).all():
        raise RegionError("degenerate box: need x_min < x_max and y_min < y_max")
    if not ((g[:, :4] >= 0) & (g[:, :4] <= 1)).all():
        raise RegionError("box coordinates must lie in [0, 1]")
    if not ((g[:, 4] > 0) & (g[:, 4] <= 1)).all():
        raise RegionError("relative size S must be in (0, 1]")


@dataclass
class RegionSet:
    """Appearance vectors ``[N, d]`` and raw geometry rows ``[N, 5]`` for one image."""

    appearance: np.ndarray
    geometry: np.ndarray

    def __post_init__(self):
        self.appearance = np.asarray(self.appearance, dtype=np.float64)
        self.geometry = np.asarray(self.geometry, dtype=np.float64)
        if self.appearance.ndim != 2 or self.appearance.shape[0] < 1:
            raise RegionError(f"appearance must be [N, d] with N >= 1, got {self.appearance.shape}")
        if self.geometry.shape != (self.appearance.shape[0], 5):
            raise RegionError(f"geometry {self.geometry.shape} does not match appearance {self.appearance.shape}")
        validate_geometry(self.geometry)

    @property
    def N(self) -> int:
        return self.appearance.shape[0]

    def permuted(self, perm) -> "RegionSet":
        perm = np.asarray(perm)
        return RegionSet(self.appearance[perm], self.geometry[perm])


@dataclass
class RegionBatch:
    """Zero-padded stack of region sets; ``mask[b, i]`` is True for real regions."""

    appearance: np.ndarray  # [B, N, d]
    geometry: np.ndarray  # [B, N, 5]
    mask: np.ndarray  # [B, N] bool

    @classmethod
    def collate(cls, regions: Sequence[RegionSet]) -> "RegionBatch":
        if not regions:
            raise ValueError("cannot collate an empty batch")
        n = max(r.N for r in regions)
        d = regions[0].appearance.shape[1]
        B = len(regions)
        app = np.zeros((B, n, d))
        geo = np.tile(_PAD_BOX, (B, n, 1))
        mask = np.zeros((B, n), dtype=bool)
        for b, r in enumerate(regions):
            if r.appearance.shape[1] != d:
                raise RegionError("feature dimension differs within batch")
            app[b, : r.N] = r.appearance
            geo[b, : r.N] = r.geometry
            mask[b, : r.N] = True
        return cls(app, geo, mask)

    @property
    def size(self) -> int:
        return self.appearance.shape[0]

    def repeat(self, k: int) -> "RegionBatch":
        """Each item repeated ``k`` times along the batch axis (for beams)."""
        return RegionBatch(np.repeat(self.appearance, k, 0), np.repeat(self.geometry, k, 0),
                           np.repeat(self.mask, k, 0))
