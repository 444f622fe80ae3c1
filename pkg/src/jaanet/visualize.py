"""Attention overlays: blue-to-red colormap alpha-blended onto the face.

Colormap anchors are fixed at RGB (0, 0, 255) for weight 0 and (255, 0, 0)
for weight 1, linearly interpolated. Maps are upsampled to the image size
with nearest-neighbor so the predefined sub-ROI support stays exact.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
import torch
from PIL import Image

from .network import load_checkpoint

COLD = np.array([0.0, 0.0, 255.0])
HOT = np.array([255.0, 0.0, 0.0])
ALPHA = 0.5


def colormap(values: np.ndarray) -> np.ndarray:
    """(H, W) weights in [0, 1] -> (H, W, 3) float RGB in [0, 255]."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)[..., None]
    return (1.0 - v) * COLD + v * HOT


def overlay(image: np.ndarray, amap: np.ndarray,
            alpha: float = ALPHA) -> np.ndarray:
    """Blend a colormapped attention map over an image; returns uint8 RGB."""
    h, w = image.shape[:2]
    up = cv2.resize(np.asarray(amap, dtype=np.float32), (w, h),
                    interpolation=cv2.INTER_NEAREST)
    colored = colormap(up)
    base = np.asarray(image, dtype=np.float64) * 255.0
    out = (1.0 - alpha) * base + alpha * colored
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def _load_image(path: Path, l: int) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    h, w = img.shape[:2]
    if (h, w) == (l, l):
        return img
    if (h, w) == (200, 200):
        off = (200 - 176) // 2
        img = img[off:off + 176, off:off + 176]
    return cv2.resize(img, (l, l), interpolation=cv2.INTER_LINEAR)


def visualize_attention(checkpoint_path, image_paths, out_dir) -> list[Path]:
    """Write predefined/refined overlays plus a raw map dump per image.

    For every input image and AU this produces
    ``<stem>_au<ID>_predefined.png`` and, when the checkpoint's variant
    refines attention, ``<stem>_au<ID>_refined.png``; raw maps land in
    ``<stem>_maps.npz`` (arrays ``predefined`` and ``refined``).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, _ = load_checkpoint(checkpoint_path)
    model.eval()
    written: list[Path] = []
    for path in map(Path, image_paths):
        img = _load_image(path, model.config.l)
        with torch.no_grad():
            out = model(torch.from_numpy(
                np.ascontiguousarray(img.transpose(2, 0, 1))[None]))
        if out.predefined_maps is None:
            raise ValueError("checkpoint variant has no attention maps")
        pre = out.predefined_maps[0].numpy()
        ref = out.refined_maps[0].numpy() if out.refined_maps is not None else None
        arrays = {"predefined": pre}
        for i, au in enumerate(model.au_ids):
            f = out_dir / f"{path.stem}_au{au:02d}_predefined.png"
            Image.fromarray(overlay(img, pre[i])).save(f)
            written.append(f)
            if ref is not None:
                f = out_dir / f"{path.stem}_au{au:02d}_refined.png"
                Image.fromarray(overlay(img, ref[i])).save(f)
                written.append(f)
        if ref is not None:
            arrays["refined"] = ref
        dump = out_dir / f"{path.stem}_maps.npz"
        np.savez(dump, **arrays)
        written.append(dump)
    return written
