"""Landmark-driven predefinition of per-AU attention maps.

Each AU gets two centers derived from landmark anchors (bilateral AUs use the
left/right anchor pair; midline AUs duplicate a single anchor). A square
sub-ROI window is placed around each center on the attention grid, and the
weight of a cell inside a window decays linearly with the Manhattan distance
to that window's center:

    v = max(1 - d * xi / (l_a * zeta), 0)

Cells outside every window are exactly 0; where the two windows overlap the
larger of the two values wins.

Conventions (documented here, relied on by tests):
  * image -> map coordinates multiply by l_a / l, then round half-up and
    clamp to [0, l_a - 1];
  * Manhattan distance is measured in integer map cells;
  * the window side is l_a * zeta rounded to the nearest odd integer, so each
    window has an exact center cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, UnsupportedAUError
from .landmarks import LandmarkSet

#: predefined attention maps are generated at side l/4 + 8 so that the four
#: unpadded 3x3 convolutions of the refinement branch land exactly on l/4.
PREDEFINED_MARGIN = 8


@dataclass(frozen=True)
class AUCenterRule:
    """Where an AU's two centers sit relative to a landmark anchor role.

    ``offset_sign`` is -1 for "above" (toward smaller y), +1 for "below",
    0 for "on the anchor". ``offset_multiplier`` is the fraction of the
    inner-eye-corner scale to move. Non-bilateral rules duplicate one anchor
    into both centers, which collapses the map to a single sub-ROI.
    """

    au_id: int
    anchor: str
    offset_sign: int
    offset_multiplier: float
    bilateral: bool


AU_CENTER_RULES: dict[int, AUCenterRule] = {
    1: AUCenterRule(1, "inner_brow", -1, 1 / 2, True),
    2: AUCenterRule(2, "outer_brow", -1, 1 / 3, True),
    4: AUCenterRule(4, "brow_center", +1, 1 / 3, True),
    6: AUCenterRule(6, "eye_bottom", +1, 1.0, True),
    7: AUCenterRule(7, "eye_center", 0, 0.0, True),
    9: AUCenterRule(9, "nose_bottom", -1, 1 / 2, False),
    10: AUCenterRule(10, "upper_lip_center", 0, 0.0, False),
    12: AUCenterRule(12, "lip_corner", 0, 0.0, True),
    14: AUCenterRule(14, "lip_corner", 0, 0.0, True),
    15: AUCenterRule(15, "lip_corner", 0, 0.0, True),
    17: AUCenterRule(17, "lower_lip_center", +1, 1 / 2, False),
    23: AUCenterRule(23, "mouth_center", 0, 0.0, False),
    24: AUCenterRule(24, "mouth_center", 0, 0.0, False),
    25: AUCenterRule(25, "mouth_center", 0, 0.0, False),
    26: AUCenterRule(26, "lower_lip_center", +1, 1 / 2, False),
}

SUPPORTED_AU_IDS = tuple(sorted(AU_CENTER_RULES))


def _anchor_points(landmarks: LandmarkSet, role: str) -> np.ndarray:
    """Resolve a rule anchor to a (2, 2) array of left/right points."""
    m = landmarks.index_map
    if role == "eye_center":
        left, right = landmarks.eye_centers()
        return np.stack([left, right])
    if role == "mouth_center":
        c = landmarks.mouth_center()
        return np.stack([c, c])
    idx = getattr(m, role)
    if isinstance(idx, tuple):
        return landmarks.points[list(idx[:2])].copy()
    p = landmarks.points[idx]
    return np.stack([p, p])


def compute_au_centers(landmarks: LandmarkSet, au_ids,
                       strict: bool = True) -> np.ndarray:
    """Image-scale AU centers, shape (n_au, 2, 2) of (x, y) pairs.

    Vertical offsets are offset_multiplier * scale, subtracted for "above"
    and added for "below". With ``strict=False`` a degenerate scale is
    floored at 1e-6 instead of raising, for use inside a network forward
    pass where predicted landmarks may be arbitrary.
    """
    if strict:
        landmarks.validate()
    scale = landmarks.scale()
    if scale <= 0.0:
        if strict:
            raise DegenerateGeometryError("inner eye corner distance is zero")
        scale = 1e-6
    centers = np.empty((len(au_ids), 2, 2), dtype=np.float64)
    for i, au in enumerate(au_ids):
        try:
            rule = AU_CENTER_RULES[int(au)]
        except KeyError:
            raise UnsupportedAUError(f"no center rule for AU {au}") from None
        pts = _anchor_points(landmarks, rule.anchor)
        pts[:, 1] += rule.offset_sign * rule.offset_multiplier * scale
        centers[i] = pts
    return centers


def image_to_map_coords(points, l: int, l_a: int) -> np.ndarray:
    """Scale image-frame points onto an l_a-cell grid.

    Both coordinates are multiplied by l_a / l, rounded half-up to the
    nearest cell index, and clamped to [0, l_a - 1]. Out-of-frame points are
    therefore pinned to the border rather than dropped.
    """
    if l <= 0 or l_a <= 0:
        raise ValueError("l and l_a must be positive")
    pts = np.asarray(points, dtype=np.float64) * (float(l_a) / float(l))
    idx = np.floor(pts + 0.5).astype(np.int64)
    return np.clip(idx, 0, l_a - 1)


def subroi_side(l_a: int, zeta: float) -> int:
    """Sub-ROI window side: l_a * zeta rounded to the nearest odd integer."""
    s = l_a * zeta
    side = 2 * int(np.floor((s - 1.0) / 2.0 + 0.5)) + 1
    return max(side, 1)


def predefine_attention_map(centers_map, l_a: int, zeta: float,
                            xi: float) -> np.ndarray:
    """Build one predefined map from two map-scale centers.

    ``centers_map`` holds two (x, y) integer cell indices (possibly equal).
    Returns an (l_a, l_a) float64 array indexed [y, x], zero outside the
    sub-ROI windows.
    """
    if not (0.0 < zeta < 1.0):
        raise ValueError("zeta must lie in (0, 1)")
    if xi < 0.0:
        raise ValueError("xi must be non-negative")
    amap = np.zeros((l_a, l_a), dtype=np.float64)
    half = subroi_side(l_a, zeta) // 2
    denom = l_a * zeta
    for cx, cy in np.asarray(centers_map, dtype=np.int64):
        y0, y1 = max(cy - half, 0), min(cy + half, l_a - 1)
        x0, x1 = max(cx - half, 0), min(cx + half, l_a - 1)
        dist = np.abs(np.arange(y0, y1 + 1) - cy)[:, None] + \
            np.abs(np.arange(x0, x1 + 1) - cx)[None, :]
        vals = np.maximum(1.0 - dist * xi / denom, 0.0)
        region = amap[y0:y1 + 1, x0:x1 + 1]
        np.maximum(region, vals, out=region)
    return amap


def predefine_all(landmarks: LandmarkSet, au_ids, l: int,
                  l_a: int | None = None, zeta: float = 0.14,
                  xi: float = 0.56, strict: bool = True) -> np.ndarray:
    """Predefined maps for every AU in ``au_ids``, shape (n_au, l_a, l_a)."""
    if l_a is None:
        l_a = l // 4 + PREDEFINED_MARGIN
    centers = compute_au_centers(landmarks, au_ids, strict=strict)
    maps = np.empty((len(au_ids), l_a, l_a), dtype=np.float64)
    for i in range(len(au_ids)):
        cmap = image_to_map_coords(centers[i], l, l_a)
        maps[i] = predefine_attention_map(cmap, l_a, zeta, xi)
    return maps
