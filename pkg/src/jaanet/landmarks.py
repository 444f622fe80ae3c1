"""49-point facial landmark layout: semantic roles, canonical template, flip table.

The layout is the common 49-point scheme (the 68-point markup without the 17
jawline points and without the two inner lip corners), indexed 0..48:

    0-4    left brow, outer to inner
    5-9    right brow, inner to outer
    10-13  nose bridge, top to bottom
    14-18  nose bottom row, left to right (16 = center below the nose tip)
    19-24  left eye: outer corner, top x2, inner corner, bottom x2
    25-30  right eye: inner corner, top x2, outer corner, bottom x2
    31-42  outer lip: 31 left corner, 34 upper center, 37 right corner,
           40 lower center
    43-48  inner lip: 43-45 upper (left, center, right), 46-48 lower
           (right, center, left)

Coordinates are (x, y) in pixels with y growing downward. Alternative layouts
can be plugged in by constructing a different :class:`SemanticIndexMap`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError

N_LANDMARKS = 49


@dataclass(frozen=True)
class SemanticIndexMap:
    """Named landmark roles -> point indices for a 49-point layout.

    Bilateral roles are (left, right) index pairs. Eye centers and the mouth
    center are not single landmarks; they are computed as centroids of the
    index tuples below.
    """

    inner_brow: tuple[int, int] = (4, 5)
    outer_brow: tuple[int, int] = (0, 9)
    brow_center: tuple[int, int] = (2, 7)
    inner_eye_corner: tuple[int, int] = (22, 25)
    eye_bottom: tuple[int, int] = (24, 29)
    nose_bottom: int = 16
    upper_lip_center: int = 34
    lower_lip_center: int = 40
    lip_corner: tuple[int, int] = (31, 37)
    left_eye: tuple[int, ...] = (19, 20, 21, 22, 23, 24)
    right_eye: tuple[int, ...] = (25, 26, 27, 28, 29, 30)
    inner_lip_center: tuple[int, int] = (44, 47)
    # flip_pairs[i] = index of the point that lands at position i under a
    # horizontal mirror; involution by construction.
    flip_pairs: tuple[int, ...] = field(
        default=(
            9, 8, 7, 6, 5, 4, 3, 2, 1, 0,
            10, 11, 12, 13,
            18, 17, 16, 15, 14,
            28, 27, 26, 25, 30, 29,
            22, 21, 20, 19, 24, 23,
            37, 36, 35, 34, 33, 32, 31, 42, 41, 40, 39, 38,
            45, 44, 43, 48, 47, 46,
        )
    )


DEFAULT_INDEX_MAP = SemanticIndexMap()


@dataclass
class LandmarkSet:
    """49 landmark coordinates in image space plus their semantic role map."""

    points: np.ndarray  # (49, 2) float array of (x, y)
    index_map: SemanticIndexMap = DEFAULT_INDEX_MAP

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (N_LANDMARKS, 2):
            raise ValueError(f"expected ({N_LANDMARKS}, 2) points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        self.points = pts

    def validate(self) -> "LandmarkSet":
        """Enforce the geometric invariants (positive eye distances)."""
        if self.interocular_distance() <= 0.0:
            raise DegenerateGeometryError("eye centers coincide")
        if self.scale() <= 0.0:
            raise DegenerateGeometryError("inner eye corners coincide")
        return self

    def eye_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(left, right) eye centers as centroids of the eye contours."""
        m = self.index_map
        left = self.points[list(m.left_eye)].mean(axis=0)
        right = self.points[list(m.right_eye)].mean(axis=0)
        return left, right

    def interocular_distance(self) -> float:
        left, right = self.eye_centers()
        return float(np.linalg.norm(right - left))

    def scale(self) -> float:
        """Distance between the two inner eye corners."""
        li, ri = self.index_map.inner_eye_corner
        return float(np.linalg.norm(self.points[ri] - self.points[li]))

    def mouth_center(self) -> np.ndarray:
        ui, li = self.index_map.inner_lip_center
        return (self.points[ui] + self.points[li]) / 2.0

    def flipped(self, width: int) -> "LandmarkSet":
        """Mirror about the vertical midline of a `width`-pixel frame."""
        perm = list(self.index_map.flip_pairs)
        pts = self.points[perm].copy()
        pts[:, 0] = (width - 1) - pts[:, 0]
        return LandmarkSet(pts, self.index_map)


def flip_landmark_array(points: np.ndarray, width: int,
                        index_map: SemanticIndexMap = DEFAULT_INDEX_MAP) -> np.ndarray:
    """Mirror a raw (49, 2) array; same convention as LandmarkSet.flipped."""
    pts = np.asarray(points, dtype=np.float64)[list(index_map.flip_pairs)].copy()
    pts[:, 0] = (width - 1) - pts[:, 0]
    return pts


# Canonical template in the 200x200 aligned frame: eye centroids at (70, 70)
# and (130, 70), mirror-symmetric about x = 100, inner-eye-corner scale 36.
CANONICAL_FRAME_SIZE = 200
CANONICAL_EYE_CENTERS = ((70.0, 70.0), (130.0, 70.0))

CANONICAL_TEMPLATE = np.array(
    [
        # left brow 0-4 (outer -> inner)
        (52, 56), (61, 52), (70, 50), (79, 52), (88, 56),
        # right brow 5-9 (inner -> outer)
        (112, 56), (121, 52), (130, 50), (139, 52), (148, 56),
        # nose bridge 10-13
        (100, 70), (100, 80), (100, 90), (100, 100),
        # nose bottom 14-18
        (88, 108), (94, 110), (100, 112), (106, 110), (112, 108),
        # left eye 19-24
        (58, 70), (64, 65), (76, 65), (82, 70), (76, 75), (64, 75),
        # right eye 25-30
        (118, 70), (124, 65), (136, 65), (142, 70), (136, 75), (124, 75),
        # outer lip 31-42
        (72, 134), (81, 130), (91, 127), (100, 126), (109, 127), (119, 130),
        (128, 134), (119, 140), (110, 144), (100, 145), (90, 144), (81, 140),
        # inner lip 43-48
        (90, 133), (100, 132), (110, 133), (110, 137), (100, 138), (90, 137),
    ],
    dtype=np.float64,
)
