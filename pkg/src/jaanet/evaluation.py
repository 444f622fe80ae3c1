"""Detection and alignment metrics, plus the half-face occlusion sweep.

All averages over AUs are unweighted arithmetic means. Reductions use
numpy's pairwise summation, so results are bit-stable regardless of any
outer parallelism over frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
import torch

from . import data as data_mod
from .landmarks import LandmarkSet

DECISION_THRESHOLD = 0.5


@dataclass
class ConfusionCounts:
    """Per-AU confusion counts over frames; arrays of shape (n_au,)."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def n_frames(self) -> int:
        return int((self.tp + self.fp + self.fn + self.tn)[0])


def confusion_counts(labels: np.ndarray, probs: np.ndarray,
                     threshold: float = DECISION_THRESHOLD) -> ConfusionCounts:
    """Counts from (n_frames, n_au) labels and predicted probabilities.

    A probability >= threshold is an occurrence decision.
    """
    labels = np.asarray(labels).astype(bool)
    pred = np.asarray(probs) >= threshold
    return ConfusionCounts(
        tp=(pred & labels).sum(axis=0),
        fp=(pred & ~labels).sum(axis=0),
        fn=(~pred & labels).sum(axis=0),
        tn=(~pred & ~labels).sum(axis=0),
    )


def f1_frame(counts: ConfusionCounts) -> tuple[np.ndarray, float]:
    """Per-AU frame-based F1 = 2PR/(P+R) and its unweighted average.

    Precision/recall with an empty denominator count as 0, and F1 is 0
    when P + R = 0.
    """
    tp = counts.tp.astype(np.float64)
    p = np.divide(tp, tp + counts.fp, out=np.zeros_like(tp),
                  where=(tp + counts.fp) > 0)
    r = np.divide(tp, tp + counts.fn, out=np.zeros_like(tp),
                  where=(tp + counts.fn) > 0)
    f1 = np.divide(2 * p * r, p + r, out=np.zeros_like(tp), where=(p + r) > 0)
    return f1, float(f1.mean())


def accuracy(counts: ConfusionCounts) -> tuple[np.ndarray, float]:
    """Per-AU (TP+TN)/n_frames and its unweighted average."""
    total = (counts.tp + counts.fp + counts.fn + counts.tn).astype(np.float64)
    acc = (counts.tp + counts.tn) / total
    return acc, float(acc.mean())


def per_frame_mean_errors(y: np.ndarray, y_pred: np.ndarray,
                          d_o: np.ndarray) -> np.ndarray:
    """Per-frame mean landmark error normalized by inter-ocular distance, %.

    ``y`` and ``y_pred`` are (n_frames, n_landmarks, 2); ``d_o`` is per frame.
    """
    d_o = np.asarray(d_o, dtype=np.float64)
    if np.any(d_o <= 0):
        raise ValueError("inter-ocular distances must be positive")
    err = np.linalg.norm(np.asarray(y, dtype=np.float64)
                         - np.asarray(y_pred, dtype=np.float64), axis=-1)
    return err.mean(axis=-1) / d_o * 100.0


def mean_error(y: np.ndarray, y_pred: np.ndarray, d_o: np.ndarray) -> float:
    """Dataset mean of the per-frame normalized errors (percent)."""
    return float(per_frame_mean_errors(y, y_pred, d_o).mean())


def failure_rate(frame_errors: np.ndarray, threshold: float = 10.0) -> float:
    """Percent of frames whose mean error strictly exceeds the threshold."""
    frame_errors = np.asarray(frame_errors, dtype=np.float64)
    return float((frame_errors > threshold).mean() * 100.0)


# ---------------------------------------------------------------------------
# model evaluation
# ---------------------------------------------------------------------------

def prepare_input(sample: data_mod.Sample, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic eval preprocessing: center crop to 176, resize to l.

    Returns (CHW float32 image, landmarks in the l-frame).
    """
    s = data_mod.center_crop(sample)
    img, lms = s.image, s.landmarks
    if l != data_mod.CROP_SIZE:
        img = cv2.resize(img, (l, l), interpolation=cv2.INTER_LINEAR)
        lms = lms * (l / data_mod.CROP_SIZE)
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32), lms


@dataclass
class EvalResult:
    labels: np.ndarray            # (n, n_au)
    probs: np.ndarray             # (n, n_au)
    f1_per_au: np.ndarray
    f1_avg: float
    acc_per_au: np.ndarray
    acc_avg: float
    mean_error: float | None
    failure_rate: float | None

    def as_dict(self) -> dict:
        d = {
            "f1_per_au": [float(v) for v in self.f1_per_au],
            "f1_avg": self.f1_avg,
            "accuracy_per_au": [float(v) for v in self.acc_per_au],
            "accuracy_avg": self.acc_avg,
        }
        if self.mean_error is not None:
            d["mean_error"] = self.mean_error
            d["failure_rate"] = self.failure_rate
        return d


def evaluate_model(model, samples, batch_size: int = 16,
                   occlusion: str | None = None,
                   threshold: float = DECISION_THRESHOLD) -> EvalResult:
    """Run inference (eval mode, center crops) and compute both task metrics.

    ``occlusion`` optionally applies one half-face mode to every input.
    Alignment metrics are None for variants without the alignment module.
    """
    l = model.config.l
    if occlusion is not None:
        samples = [data_mod.occlude(s, occlusion) for s in samples]
    images, gt_lms, d_os, labels = [], [], [], []
    for s in samples:
        img, lms = prepare_input(s, l)
        images.append(img)
        gt_lms.append(lms)
        d_os.append(LandmarkSet(lms).interocular_distance())
        labels.append(s.au_labels)
    labels = np.stack(labels)
    probs, pred_lms = [], []
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            batch = torch.from_numpy(np.stack(images[i:i + batch_size]))
            out = model(batch.to(next(model.parameters()).dtype))
            probs.append(out.au_probs.double().numpy())
            if out.landmarks_pred is not None:
                pred_lms.append(out.landmarks_pred.double().numpy())
    if was_training:
        model.train()
    probs = np.concatenate(probs)
    counts = confusion_counts(labels, probs, threshold)
    f1s, f1_avg = f1_frame(counts)
    accs, acc_avg = accuracy(counts)
    me = fr = None
    if pred_lms:
        pred = np.concatenate(pred_lms).reshape(len(samples), -1, 2)
        frame_err = per_frame_mean_errors(np.stack(gt_lms), pred,
                                          np.asarray(d_os))
        me, fr = float(frame_err.mean()), failure_rate(frame_err)
    return EvalResult(labels, probs, f1s, f1_avg, accs, acc_avg, me, fr)


def occlusion_sweep(model, samples, batch_size: int = 16) -> dict:
    """Per-AU F1 under full visibility and the four half-face occlusions.

    Returns a machine-readable table::

        {"au_ids": [...],
         "columns": ["Full", "Lower", "Upper", "Right", "Left"],
         "f1": {column: [per-AU F1..., ]},
         "avg": {column: float}}
    """
    columns = ["Full"] + [m.capitalize() for m in data_mod.OCCLUSION_MODES]
    table: dict = {"au_ids": list(model.au_ids), "columns": columns,
                   "f1": {}, "avg": {}}
    for col in columns:
        mode = None if col == "Full" else col.lower()
        res = evaluate_model(model, samples, batch_size, occlusion=mode)
        table["f1"][col] = [float(v) for v in res.f1_per_au]
        table["avg"][col] = res.f1_avg
    return table


def render_occlusion_table(table: dict) -> str:
    """Aligned plain-text rendering of an occlusion sweep."""
    cols = table["columns"]
    header = ["AU"] + cols
    rows = [header]
    for i, au in enumerate(table["au_ids"]):
        rows.append([str(au)] + [f"{table['f1'][c][i] * 100:.1f}" for c in cols])
    rows.append(["Avg"] + [f"{table['avg'][c] * 100:.1f}" for c in cols])
    widths = [max(len(r[j]) for r in rows) for j in range(len(header))]
    return "\n".join(" ".join(v.rjust(w) for v, w in zip(r, widths))
                     for r in rows)
