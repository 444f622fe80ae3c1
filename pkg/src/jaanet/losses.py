"""Loss terms for joint AU detection and face alignment.

All functions are pure and operate on batched tensors: predictions and
labels have shape (B, n_au), landmark vectors (B, 2 * n_align). Per-sample
values are reduced by a mean over the batch. Probabilities are clamped to
[CLAMP_EPS, 1 - CLAMP_EPS] before any logarithm; gradient checks should keep
inputs away from the clamp.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ZeroOccurrenceRateError

CLAMP_EPS = 1e-7


def au_weights(rates) -> torch.Tensor:
    """Imbalance weights w_i = (1/r_i) / sum_u (1/r_u); sums to 1."""
    r = torch.as_tensor(np.asarray(rates, dtype=np.float64))
    if torch.any(r <= 0):
        raise ZeroOccurrenceRateError(
            "occurrence rate <= 0; smooth the rate or drop the AU")
    if torch.any(r > 1):
        raise ValueError("occurrence rates must lie in (0, 1]")
    inv = 1.0 / r
    return inv / inv.sum()


def face_alignment_loss(y: torch.Tensor, y_pred: torch.Tensor,
                        d_o: torch.Tensor) -> torch.Tensor:
    """Sum of squared landmark coordinate errors over 2 * d_o^2, batch mean."""
    d_o = torch.as_tensor(d_o, dtype=y_pred.dtype, device=y_pred.device)
    if torch.any(d_o <= 0):
        raise ValueError("inter-ocular distance must be positive")
    sq = ((y - y_pred) ** 2).sum(dim=-1)
    return (sq / (2.0 * d_o ** 2)).mean()


def _clamp(p_hat: torch.Tensor) -> torch.Tensor:
    return p_hat.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)


def weighted_cross_entropy(p: torch.Tensor, p_hat: torch.Tensor,
                           w: torch.Tensor) -> torch.Tensor:
    """- sum_i w_i [p log p_hat + (1 - p) log(1 - p_hat)], batch mean."""
    q = _clamp(p_hat)
    w = w.to(q.dtype)
    per_au = p * torch.log(q) + (1.0 - p) * torch.log(1.0 - q)
    return -(w * per_au).sum(dim=-1).mean()


def weighted_dice(p: torch.Tensor, p_hat: torch.Tensor, w: torch.Tensor,
                  eps: float = 1.0) -> torch.Tensor:
    """sum_i w_i (1 - (2 p p_hat + eps) / (p^2 + p_hat^2 + eps)), batch mean."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    w = w.to(p_hat.dtype)
    term = 1.0 - (2.0 * p * p_hat + eps) / (p ** 2 + p_hat ** 2 + eps)
    return (w * term).sum(dim=-1).mean()


def au_detection_loss(p: torch.Tensor, p_hat: torch.Tensor, w: torch.Tensor,
                      eps: float = 1.0) -> torch.Tensor:
    """Cross entropy plus Dice, the overall AU detection loss."""
    return weighted_cross_entropy(p, p_hat, w) + weighted_dice(p, p_hat, w, eps)


def local_au_loss(p: torch.Tensor, p_hat_local: torch.Tensor,
                  w: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    """Same functional form as the AU detection loss, on per-branch probs."""
    return au_detection_loss(p, p_hat_local, w, eps)


def total_loss(e_all_au: torch.Tensor, e_local_au: torch.Tensor,
               e_align: torch.Tensor, lambda_align: float) -> torch.Tensor:
    """(E_all_au + E_local_au) + lambda_align * E_align."""
    if lambda_align < 0:
        raise ValueError("lambda_align must be >= 0")
    return (e_all_au + e_local_au) + lambda_align * e_align


class _ScaleGrad(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, factor):
        ctx.factor = factor
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return grad * ctx.factor, None


def bp_enhancement(refined_maps: torch.Tensor,
                   lambda_e: float) -> torch.Tensor:
    """Identity in the forward pass; scales the backward gradient by lambda_e.

    Inserted at the refined-map boundary so the supervision reaching each
    attention refinement branch is amplified. lambda_e = 1 is a no-op on the
    gradients as well.
    """
    if lambda_e < 1.0:
        raise ValueError("lambda_e must be >= 1")
    return _ScaleGrad.apply(refined_maps, float(lambda_e))


def resize_maps(maps: torch.Tensor, side: int) -> torch.Tensor:
    """Bilinear resize of (B, n_au, h, w) attention maps to side x side."""
    return F.interpolate(maps, size=(side, side), mode="bilinear",
                         align_corners=False)


def refinement_constraint(predefined: torch.Tensor,
                          refined: torch.Tensor) -> torch.Tensor:
    """Cross entropy pulling refined maps toward the predefined ones.

    ``predefined`` is resized (bilinear) to the refined resolution and used
    as soft targets; the result is a raw sum over all AUs and map points,
    batch mean. Refined values may touch 0/1 only through the clamp.
    """
    v = resize_maps(predefined.to(refined.dtype), refined.shape[-1])
    q = _clamp(refined)
    ce = v * torch.log(q) + (1.0 - v) * torch.log(1.0 - q)
    return -ce.sum(dim=(1, 2, 3)).mean()
