"""Data pipeline: alignment, augmentation, occlusion, manifests, synthetic faces.

Images are float arrays in [0, 1], shape (H, W, 3). The canonical aligned
frame is 200x200 with eye centers at (70, 70) and (130, 70); training crops
are 176x176. Occluded regions and out-of-frame borders are filled with
mid-gray 0.5 (zero would be far out of distribution).

Manifest file format (plain text, diffable):
    line 1:      space-separated AU ids
    each record: image_path  n_au x {0,1}  98 landmark floats  subject_id
with fields separated by single spaces and image paths relative to the
manifest's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image, ImageDraw

from . import attention
from .errors import ConfigError, DegenerateGeometryError, ManifestError
from .landmarks import (CANONICAL_EYE_CENTERS, CANONICAL_FRAME_SIZE,
                        CANONICAL_TEMPLATE, DEFAULT_INDEX_MAP, N_LANDMARKS,
                        LandmarkSet, SemanticIndexMap, flip_landmark_array)

ALIGNED_SIZE = CANONICAL_FRAME_SIZE   # 200
CROP_SIZE = 176
MAX_CROP_OFFSET = ALIGNED_SIZE - CROP_SIZE   # 24
CENTER_CROP_OFFSET = MAX_CROP_OFFSET // 2    # 12
FILL_VALUE = 0.5

OCCLUSION_MODES = ("lower", "upper", "right", "left")


@dataclass
class Sample:
    """One annotated face: image in [0, 1], binary AU labels, landmarks."""

    image: np.ndarray          # (H, W, 3) float32
    au_labels: np.ndarray      # (n_au,) of {0, 1}
    landmarks: np.ndarray      # (49, 2) float64, image-frame (x, y)
    subject_id: str = ""


# ---------------------------------------------------------------------------
# alignment and augmentation
# ---------------------------------------------------------------------------

def similarity_transform_to_canonical(landmarks: np.ndarray,
                                      index_map: SemanticIndexMap = DEFAULT_INDEX_MAP
                                      ) -> np.ndarray:
    """2x3 similarity (rotation + uniform scale + translation) that brings
    the eye centers onto the canonical positions of the 200x200 frame."""
    ls = LandmarkSet(np.asarray(landmarks, dtype=np.float64), index_map)
    left, right = ls.eye_centers()
    v = right - left
    if np.linalg.norm(v) < 1e-9:
        raise DegenerateGeometryError("eye centers coincide; cannot align")
    tl = np.asarray(CANONICAL_EYE_CENTERS[0])
    tr = np.asarray(CANONICAL_EYE_CENTERS[1])
    u = tr - tl
    s = np.linalg.norm(u) / np.linalg.norm(v)
    ang = np.arctan2(u[1], u[0]) - np.arctan2(v[1], v[0])
    ca, sa = s * np.cos(ang), s * np.sin(ang)
    a = np.array([[ca, -sa], [sa, ca]])
    t = tl - a @ left
    return np.hstack([a, t[:, None]])


def apply_affine_to_points(m: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ m[:, :2].T + m[:, 2]


def similarity_align(image: np.ndarray, landmarks: np.ndarray,
                     index_map: SemanticIndexMap = DEFAULT_INDEX_MAP
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Warp a face so its eye centers land on the canonical 200x200 frame.

    The same transform is applied to the image (bilinear, gray border fill)
    and to all 49 landmarks; being a similarity it preserves expression.
    """
    m = similarity_transform_to_canonical(landmarks, index_map)
    warped = cv2.warpAffine(
        np.asarray(image, dtype=np.float32), m.astype(np.float64),
        (ALIGNED_SIZE, ALIGNED_SIZE), flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=(FILL_VALUE, FILL_VALUE, FILL_VALUE))
    return warped, apply_affine_to_points(m, landmarks)


def align_sample(sample: Sample,
                 index_map: SemanticIndexMap = DEFAULT_INDEX_MAP) -> Sample:
    image, lms = similarity_align(sample.image, sample.landmarks, index_map)
    return Sample(image, sample.au_labels.copy(), lms, sample.subject_id)


def crop(image: np.ndarray, landmarks: np.ndarray, ox: int, oy: int,
         size: int = CROP_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """Crop a size x size window at offset (ox, oy); landmarks shift along."""
    img = image[oy:oy + size, ox:ox + size].copy()
    lms = np.asarray(landmarks, dtype=np.float64) - (ox, oy)
    return img, lms


def hflip(image: np.ndarray, landmarks: np.ndarray,
          index_map: SemanticIndexMap = DEFAULT_INDEX_MAP
          ) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal mirror; landmark indices are remapped left<->right so the
    semantic roles stay valid. AU labels are unaffected (each label covers
    both bilateral centers)."""
    img = image[:, ::-1].copy()
    lms = flip_landmark_array(landmarks, image.shape[1], index_map)
    return img, lms


def random_crop_flip(sample: Sample, rng: np.random.Generator,
                     index_map: SemanticIndexMap = DEFAULT_INDEX_MAP) -> Sample:
    """176x176 crop at a uniform offset in [0, 24]^2, then a coin-flip mirror."""
    if sample.image.shape[:2] != (ALIGNED_SIZE, ALIGNED_SIZE):
        raise ValueError(f"expected a {ALIGNED_SIZE}x{ALIGNED_SIZE} aligned "
                         f"sample, got {sample.image.shape[:2]}")
    ox = int(rng.integers(0, MAX_CROP_OFFSET + 1))
    oy = int(rng.integers(0, MAX_CROP_OFFSET + 1))
    img, lms = crop(sample.image, sample.landmarks, ox, oy)
    if rng.random() < 0.5:
        img, lms = hflip(img, lms, index_map)
    return Sample(img, sample.au_labels.copy(), lms, sample.subject_id)


def center_crop(sample: Sample) -> Sample:
    img, lms = crop(sample.image, sample.landmarks,
                    CENTER_CROP_OFFSET, CENTER_CROP_OFFSET)
    return Sample(img, sample.au_labels.copy(), lms, sample.subject_id)


def binarize_intensity(intensity: int) -> int:
    """Occurrence iff the 0..5 intensity code is >= 2."""
    i = int(intensity)
    if not 0 <= i <= 5:
        raise ValueError(f"intensity must be in 0..5, got {intensity}")
    return int(i >= 2)


def occlude_image(image: np.ndarray, mode: str,
                  fill: float = FILL_VALUE) -> np.ndarray:
    """Keep only the named half visible; the complement becomes mid-gray.

    Halves split at floor(size / 2): "lower" keeps rows [88, 176) of a
    176-pixel face, "upper" rows [0, 88), "left"/"right" the analogous
    column ranges.
    """
    if mode not in OCCLUSION_MODES:
        raise ValueError(f"unknown occlusion mode {mode!r}; "
                         f"expected one of {OCCLUSION_MODES}")
    out = np.array(image, dtype=np.float32, copy=True)
    h, w = out.shape[:2]
    if mode == "lower":
        out[: h // 2] = fill
    elif mode == "upper":
        out[h // 2:] = fill
    elif mode == "right":
        out[:, : w // 2] = fill
    else:
        out[:, w // 2:] = fill
    return out


def occlude(sample: Sample, mode: str, fill: float = FILL_VALUE) -> Sample:
    """Occlusion leaves labels and landmarks untouched."""
    return Sample(occlude_image(sample.image, mode, fill),
                  sample.au_labels.copy(), sample.landmarks.copy(),
                  sample.subject_id)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestRecord:
    image_path: str
    au_labels: np.ndarray
    landmarks: np.ndarray
    subject_id: str


@dataclass
class Manifest:
    au_ids: tuple[int, ...]
    records: list[ManifestRecord]
    root: Path = field(default_factory=Path)

    @property
    def n_au(self) -> int:
        return len(self.au_ids)

    def occurrence_rates(self, smoothing: float = 0.0) -> np.ndarray:
        """Empirical per-AU occurrence rates over the records.

        ``smoothing`` adds the usual pseudo-counts ((k + s) / (n + 2s)) so
        weighting stays defined for AUs that never occur in a small corpus.
        """
        if not self.records:
            raise ManifestError("empty manifest has no occurrence rates")
        labels = np.stack([r.au_labels for r in self.records])
        return ((labels.sum(axis=0) + smoothing)
                / (len(self.records) + 2.0 * smoothing))

    def subjects(self) -> list[str]:
        return sorted({r.subject_id for r in self.records})

    def load_sample(self, index: int) -> Sample:
        rec = self.records[index]
        img = np.asarray(Image.open(self.root / rec.image_path),
                         dtype=np.float32) / 255.0
        return Sample(img, rec.au_labels.copy(), rec.landmarks.copy(),
                      rec.subject_id)

    def load_samples(self) -> list[Sample]:
        return [self.load_sample(i) for i in range(len(self.records))]


def save_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    lines = [" ".join(str(a) for a in manifest.au_ids)]
    for rec in manifest.records:
        if " " in rec.image_path or " " in rec.subject_id:
            raise ManifestError("image paths and subject ids must not "
                                "contain spaces")
        fields = ([rec.image_path]
                  + [str(int(v)) for v in rec.au_labels]
                  + [repr(float(v)) for v in rec.landmarks.reshape(-1)]
                  + [rec.subject_id])
        lines.append(" ".join(fields))
    path.write_text("\n".join(lines) + "\n")


def load_manifest(path) -> Manifest:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].strip():
        return Manifest(au_ids=(), records=[], root=path.parent)
    try:
        au_ids = tuple(int(t) for t in lines[0].split())
    except ValueError:
        raise ManifestError(f"{path}:1: malformed AU id header") from None
    n_au = len(au_ids)
    n_fields = 1 + n_au + 2 * N_LANDMARKS + 1
    records = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != n_fields:
            raise ManifestError(f"{path}:{ln}: expected {n_fields} fields "
                                f"({n_au} labels), got {len(tokens)}")
        try:
            labels = np.array([int(t) for t in tokens[1:1 + n_au]],
                              dtype=np.int64)
            coords = np.array([float(t) for t in
                               tokens[1 + n_au:1 + n_au + 2 * N_LANDMARKS]],
                              dtype=np.float64)
        except ValueError:
            raise ManifestError(f"{path}:{ln}: non-numeric field") from None
        if not np.isin(labels, (0, 1)).all():
            raise ManifestError(f"{path}:{ln}: AU labels must be 0 or 1")
        records.append(ManifestRecord(tokens[0], labels,
                                      coords.reshape(N_LANDMARKS, 2),
                                      tokens[-1]))
    return Manifest(au_ids=au_ids, records=records, root=path.parent)


def subject_folds(manifest: Manifest, n_folds: int = 3) -> list[list[int]]:
    """Subject-exclusive folds: round-robin over sorted subject ids.

    The folds partition the record indices; no subject appears in two folds.
    """
    subjects = manifest.subjects()
    fold_of = {s: i % n_folds for i, s in enumerate(subjects)}
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    for idx, rec in enumerate(manifest.records):
        folds[fold_of[rec.subject_id]].append(idx)
    return folds


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

@dataclass
class SyntheticConfig:
    """Procedural face corpus: a canonical landmark template under small
    similarity perturbations, with each occurring AU rendered as a bright
    disc at its rule-defined centers so labels are recoverable from pixels.

    ``n_distractors`` label-independent discs (kept away from every AU
    center) can be added to make purely global texture cues unreliable.
    """

    au_ids: tuple[int, ...] = (1, 2, 12, 17)
    rates: tuple[float, ...] = (0.5, 0.125, 0.5, 0.125)
    n_subjects: int = 8
    rotation_deg: float = 6.0
    scale_low: float = 0.94
    scale_high: float = 1.06
    translation: float = 5.0
    jitter: float = 0.8
    n_distractors: int = 0
    distractor_margin: float = 25.0
    noise: float = 0.01
    pattern_radius: float = 6.0
    pattern_value: float = 0.92
    oracle_threshold: float = 0.8

    def __post_init__(self) -> None:
        if len(self.rates) != len(self.au_ids):
            raise ConfigError("rates and au_ids must have the same length")
        if not all(0.0 < r <= 1.0 for r in self.rates):
            raise ConfigError("rates must lie in (0, 1]")
        for au in self.au_ids:
            if au not in attention.AU_CENTER_RULES:
                raise ConfigError(f"AU {au} has no center rule")
        # distinct pattern locations keep the pixel labels unambiguous
        centers = attention.compute_au_centers(
            LandmarkSet(CANONICAL_TEMPLATE), self.au_ids)
        for i in range(len(self.au_ids)):
            for j in range(i + 1, len(self.au_ids)):
                d = np.abs(centers[i][:, None] - centers[j][None]).sum(-1).min()
                if d < 2 * self.pattern_radius + 4:
                    raise ConfigError(
                        f"AUs {self.au_ids[i]} and {self.au_ids[j]} share "
                        "pattern locations; pick AUs with distinct centers")


def _perturbed_template(cfg: SyntheticConfig,
                        rng: np.random.Generator) -> np.ndarray:
    ang = np.deg2rad(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    s = rng.uniform(cfg.scale_low, cfg.scale_high)
    t = rng.uniform(-cfg.translation, cfg.translation, size=2)
    center = np.array([100.0, 100.0])
    rot = s * np.array([[np.cos(ang), -np.sin(ang)],
                        [np.sin(ang), np.cos(ang)]])
    pts = (CANONICAL_TEMPLATE - center) @ rot.T + center + t
    pts += rng.normal(0.0, cfg.jitter, size=pts.shape)
    return pts


def _draw_face(draw: ImageDraw.ImageDraw, lms: np.ndarray) -> None:
    def poly(idx, fill):
        draw.polygon([tuple(lms[i]) for i in idx], fill=fill)

    def lines(idx, fill, width=2):
        draw.line([tuple(lms[i]) for i in idx], fill=fill, width=width)

    # face disc sized from the landmark extent
    lo, hi = lms.min(axis=0), lms.max(axis=0)
    cx, cy = (lo + hi) / 2.0
    rx = (hi[0] - lo[0]) / 2.0 + 18
    ry = (hi[1] - lo[1]) / 2.0 + 22
    draw.ellipse([cx - rx, cy - ry, cx + rx, cy + ry], fill=158)
    lines(range(0, 5), 45, 4)          # brows
    lines(range(5, 10), 45, 4)
    lines(range(10, 14), 80, 3)        # nose bridge
    lines(range(14, 19), 80, 3)        # nose bottom
    poly(range(19, 25), 30)            # eyes
    poly(range(25, 31), 30)
    poly(range(31, 43), 70)            # outer lip
    poly((43, 44, 45, 46, 47, 48), 40)  # inner lip


def _disc(draw: ImageDraw.ImageDraw, center, radius: float, value: int) -> None:
    x, y = float(center[0]), float(center[1])
    draw.ellipse([x - radius, y - radius, x + radius, y + radius], fill=value)


def render_sample(cfg: SyntheticConfig, rng: np.random.Generator,
                  subject_id: str = "s00") -> Sample:
    """One synthetic face: perturbed template, drawn features, AU patterns."""
    lms = _perturbed_template(cfg, rng)
    labels = (rng.random(len(cfg.au_ids)) < np.asarray(cfg.rates)).astype(np.int64)

    img = Image.new("L", (ALIGNED_SIZE, ALIGNED_SIZE), color=128)
    draw = ImageDraw.Draw(img)
    _draw_face(draw, lms)

    centers = attention.compute_au_centers(LandmarkSet(lms), cfg.au_ids)
    if cfg.n_distractors:
        placed = 0
        while placed < cfg.n_distractors:
            pos = rng.uniform(30, ALIGNED_SIZE - 30, size=2)
            dist = np.abs(centers.reshape(-1, 2) - pos).sum(axis=1).min()
            if dist >= cfg.distractor_margin:
                _disc(draw, pos, cfg.pattern_radius,
                      int(round(cfg.pattern_value * 255)))
                placed += 1
    for i, lab in enumerate(labels):
        if lab:
            for c in centers[i]:
                _disc(draw, c, cfg.pattern_radius,
                      int(round(cfg.pattern_value * 255)))

    arr = np.asarray(img, dtype=np.float32) / 255.0
    if cfg.noise > 0:
        arr = arr + rng.normal(0.0, cfg.noise, size=arr.shape).astype(np.float32)
        arr = np.clip(arr, 0.0, 1.0)
    return Sample(np.repeat(arr[:, :, None], 3, axis=2), labels, lms, subject_id)


def pixel_rule_labels(sample: Sample, au_ids,
                      cfg: SyntheticConfig | None = None) -> np.ndarray:
    """Oracle classifier: an AU occurs iff the 3x3 neighborhood of one of
    its rule centers is brighter than the pattern threshold."""
    cfg = cfg or SyntheticConfig(au_ids=tuple(au_ids),
                                 rates=(1.0,) * len(tuple(au_ids)))
    centers = attention.compute_au_centers(LandmarkSet(sample.landmarks), au_ids)
    gray = sample.image.mean(axis=2)
    h, w = gray.shape
    out = np.zeros(len(tuple(au_ids)), dtype=np.int64)
    for i, pair in enumerate(centers):
        best = 0.0
        for x, y in pair:
            xi = int(np.clip(round(x), 1, w - 2))
            yi = int(np.clip(round(y), 1, h - 2))
            best = max(best, float(gray[yi - 1:yi + 2, xi - 1:xi + 2].mean()))
        out[i] = int(best > cfg.oracle_threshold)
    return out


def generate_synthetic(cfg: SyntheticConfig, seed: int, n_samples: int,
                       out_dir) -> Manifest:
    """Write a synthetic corpus (images/ + manifest.txt) and return it.

    Fully deterministic for a given seed; subject ids cycle through
    ``cfg.n_subjects`` so subject-exclusive folds are meaningful.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_samples):
        subject = f"s{i % cfg.n_subjects:03d}"
        sample = render_sample(cfg, rng, subject)
        rel = f"images/face_{i:05d}.png"
        Image.fromarray(
            np.round(sample.image * 255.0).astype(np.uint8)
        ).save(out_dir / rel)
        records.append(ManifestRecord(rel, sample.au_labels,
                                      sample.landmarks, subject))
    manifest = Manifest(au_ids=tuple(cfg.au_ids), records=records,
                        root=out_dir)
    save_manifest(manifest, out_dir / "manifest.txt")
    return manifest
