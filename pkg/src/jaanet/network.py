"""The joint AU-detection / face-alignment network.

Data flow for the full variant (all sizes for input side ``l``, channel base
``c``):

  * trunk: two hierarchical multi-scale region layers, each followed by a
    2x2 max pool -> shared feature of size l/4 x l/4 x 8c;
  * alignment stack: plain blocks at 3c, 4c, 5c channels with pools after
    the first two -> feature l/16 x l/16 x 5c, then fully-connected layers
    of widths d and 2*n_align predicting raw landmark coordinates in the
    l x l frame;
  * global stack: same structure as the alignment stack, independent
    weights, no head;
  * per-AU attention refinement: predicted landmarks predefine an attention
    map at side l/4 + 8 (treated as constant data; the coordinate rounding
    makes it non-differentiable anyway); four unpadded 3x3 convs shrink it
    to l/4, the last one feeding a sigmoid;
  * per-AU local branches: the refined map gates every trunk channel, then
    three [plain block + pool] stages at 8c channels -> local features at
    side l/32 (floor); their element-wise mean is the assembled local
    feature;
  * heads: per-AU two-layer heads (d_l, 2) on each local feature, and the
    main AU head on the concatenation of alignment feature, global feature,
    and assembled local feature. In the full variant the assembled feature
    enters the main head through a gradient barrier so the local losses own
    the supervision of refinement and local branches.

Every flattening uses (height, width, channel) index order. Occurrence
probabilities are the second entry of a 2-way softmax pair.

Configs with ``n_align != 49`` (miniature gradient-check models) predefine
attention with a synthetic anchor rule: AU i is centered on landmark
i mod n_align with no offset.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import attention
from .config import JAANetConfig, Variant
from .errors import ShapeError
from .landmarks import N_LANDMARKS, LandmarkSet
from .layers import HMRegionLayer, PlainBlock, RegionLayer
from .losses import bp_enhancement, resize_maps

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class ModelOutputs:
    """Everything a forward pass produces; absent pieces are None."""

    landmarks_pred: torch.Tensor | None      # (B, 2*n_align), l-frame coords
    au_probs: torch.Tensor                   # (B, n_au) in (0, 1)
    local_au_probs: torch.Tensor | None      # (B, n_au) in (0, 1)
    predefined_maps: torch.Tensor | None     # (B, n_au, l/4+8, l/4+8)
    refined_maps: torch.Tensor | None        # (B, n_au, l/4, l/4)
    assembled_local_feature: torch.Tensor | None   # (B, 8c, s, s)
    per_au_local_features: torch.Tensor | None     # (B, n_au, 8c, s, s)
    trunk_feature: torch.Tensor | None = None
    alignment_feature: torch.Tensor | None = None
    global_feature: torch.Tensor | None = None


def _flatten_hwc(x: torch.Tensor) -> torch.Tensor:
    """Flatten (B, C, H, W) in (height, width, channel) index order."""
    return x.permute(0, 2, 3, 1).reshape(x.shape[0], -1)


class FeatureStack(nn.Module):
    """Alignment / global feature extractor over the trunk output."""

    def __init__(self, c: int):
        super().__init__()
        self.block1 = PlainBlock(8 * c, 3 * c)
        self.block2 = PlainBlock(3 * c, 4 * c)
        self.block3 = PlainBlock(4 * c, 5 * c)
        self.pool = nn.MaxPool2d(2, stride=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.pool(self.block1(x))
        x = self.pool(self.block2(x))
        return self.block3(x)


class RefineBranch(nn.Module):
    """Four unpadded 3x3 convs: 1 -> 8c -> 8c -> 8c -> 1 (sigmoid)."""

    def __init__(self, c: int):
        super().__init__()

        def stage(ci, co):
            return nn.Sequential(nn.Conv2d(ci, co, 3, stride=1, padding=0),
                                 nn.BatchNorm2d(co), nn.ReLU(inplace=True))

        self.stage1 = stage(1, 8 * c)
        self.stage2 = stage(8 * c, 8 * c)
        self.stage3 = stage(8 * c, 8 * c)
        # sigmoid keeps every refined weight strictly inside (0, 1); a norm
        # before it would fight that bound
        self.final = nn.Conv2d(8 * c, 1, 3, stride=1, padding=0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.stage3(self.stage2(self.stage1(x)))
        return torch.sigmoid(self.final(x))


class LocalBranch(nn.Module):
    """Three [plain block + pool] stages at a constant 8c channels."""

    def __init__(self, c: int):
        super().__init__()
        self.blocks = nn.ModuleList([PlainBlock(8 * c, 8 * c) for _ in range(3)])
        self.pool = nn.MaxPool2d(2, stride=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = self.pool(block(x))
        return x


class JAANet(nn.Module):
    """Joint AU detection and face alignment network.

    ``variant`` selects which submodules exist (see config.Variant); only
    parameters of active submodules are created. One instance has a single
    training writer; inference with frozen weights is thread-safe.
    """

    def __init__(self, config: JAANetConfig, variant: Variant = Variant.JAA,
                 au_ids: tuple[int, ...] | None = None,
                 seed: int | None = None, lambda_e: float = 2.0):
        super().__init__()
        if isinstance(variant, str):
            variant = Variant.parse(variant)
        self.config = config
        self.variant = variant
        self.lambda_e = lambda_e
        if au_ids is None:
            au_ids = attention.SUPPORTED_AU_IDS[:config.n_au]
        if len(au_ids) != config.n_au:
            raise ValueError("au_ids length must equal n_au")
        self.au_ids = tuple(int(a) for a in au_ids)

        c, l = config.c, config.l
        layer_cls = HMRegionLayer if variant.uses_hm_layers else RegionLayer
        self.trunk = nn.Sequential(
            layer_cls(3, c), nn.MaxPool2d(2, stride=2),
            layer_cls(4 * c, 2 * c), nn.MaxPool2d(2, stride=2),
        )

        feat_dim = 5 * c * config.feature_size ** 2
        self.global_feat = FeatureStack(c)
        head_in = feat_dim

        if variant.uses_alignment:
            self.align = FeatureStack(c)
            self.align_head = nn.Sequential(
                nn.Linear(feat_dim, config.d),
                nn.Linear(config.d, 2 * config.n_align),
            )
            head_in += feat_dim

        if variant.uses_attention:
            self.local = nn.ModuleList(
                [LocalBranch(c) for _ in range(config.n_au)])
            local_dim = 8 * c * config.local_feature_size ** 2
            head_in += local_dim
            if variant.uses_refinement:
                self.refine = nn.ModuleList(
                    [RefineBranch(c) for _ in range(config.n_au)])
            if variant.uses_local_au_loss:
                self.local_heads = nn.ModuleList([
                    nn.Sequential(nn.Linear(local_dim, config.d_l),
                                  nn.Linear(config.d_l, 2))
                    for _ in range(config.n_au)
                ])

        self.au_head = nn.Sequential(
            nn.Linear(head_in, config.d),
            nn.Linear(config.d, 2 * config.n_au),
        )

        if seed is not None:
            init_parameters(self, seed)

    # ------------------------------------------------------------------
    def predefine_maps(self, landmarks_pred: torch.Tensor) -> torch.Tensor:
        """Predefined attention maps from a batch of landmark predictions.

        The predictions are detached and treated as data: rounding to grid
        cells breaks differentiability, so no gradient flows from AU losses
        into the alignment path through this boundary.
        """
        cfg = self.config
        pts = landmarks_pred.detach().double().cpu().numpy()
        pts = np.nan_to_num(pts, nan=0.0, posinf=1e6, neginf=-1e6)
        pts = pts.reshape(-1, cfg.n_align, 2)
        la = cfg.predefined_map_size
        out = np.empty((pts.shape[0], cfg.n_au, la, la), dtype=np.float64)
        for b in range(pts.shape[0]):
            if cfg.n_align == N_LANDMARKS:
                ls = LandmarkSet(pts[b])
                out[b] = attention.predefine_all(
                    ls, self.au_ids, cfg.l, la, cfg.zeta, cfg.xi, strict=False)
            else:
                centers = np.stack([
                    np.stack([pts[b, i % cfg.n_align]] * 2)
                    for i in range(cfg.n_au)
                ])
                for i in range(cfg.n_au):
                    cmap = attention.image_to_map_coords(centers[i], cfg.l, la)
                    out[b, i] = attention.predefine_attention_map(
                        cmap, la, cfg.zeta, cfg.xi)
        return torch.as_tensor(
            out, dtype=landmarks_pred.dtype, device=landmarks_pred.device)

    def forward(self, images: torch.Tensor,
                predefined_maps: torch.Tensor | None = None,
                detach_assembled: bool | None = None,
                grad_scale: float | None = None) -> ModelOutputs:
        cfg, variant = self.config, self.variant
        if images.dim() != 4 or images.shape[1:] != (3, cfg.l, cfg.l):
            raise ShapeError(
                f"expected (B, 3, {cfg.l}, {cfg.l}) input, got {tuple(images.shape)}")
        if detach_assembled is None:
            detach_assembled = variant.detaches_assembled

        trunk_feat = self.trunk(images)

        landmarks_pred = align_feat = None
        if variant.uses_alignment:
            align_feat = self.align(trunk_feat)
            landmarks_pred = self.align_head(_flatten_hwc(align_feat))

        global_feat = self.global_feat(trunk_feat)

        refined = assembled = local_feats = local_probs = None
        if variant.uses_attention:
            if predefined_maps is None:
                predefined_maps = self.predefine_maps(landmarks_pred)
            elif predefined_maps.shape[-1] != cfg.predefined_map_size:
                raise ShapeError("predefined maps have the wrong side")
            if variant.uses_refinement:
                refined = torch.cat(
                    [self.refine[i](predefined_maps[:, i:i + 1])
                     for i in range(cfg.n_au)], dim=1)
                gates = refined
                if variant.uses_grad_enhancement:
                    scale = self.lambda_e if grad_scale is None else grad_scale
                    gates = bp_enhancement(refined, scale)
            else:
                gates = resize_maps(predefined_maps, cfg.map_size)

            feats, probs = [], []
            for i in range(cfg.n_au):
                f_i = self.local[i](trunk_feat * gates[:, i:i + 1])
                feats.append(f_i)
                if variant.uses_local_au_loss:
                    logits = self.local_heads[i](_flatten_hwc(f_i))
                    probs.append(torch.softmax(logits, dim=-1)[:, 1])
            local_feats = torch.stack(feats, dim=1)
            assembled = local_feats.mean(dim=1)
            if variant.uses_local_au_loss:
                local_probs = torch.stack(probs, dim=1)

        parts = []
        if align_feat is not None:
            parts.append(_flatten_hwc(align_feat))
        parts.append(_flatten_hwc(global_feat))
        if assembled is not None:
            feed = assembled.detach() if detach_assembled else assembled
            parts.append(_flatten_hwc(feed))
        logits = self.au_head(torch.cat(parts, dim=1))
        pairs = logits.view(-1, cfg.n_au, 2)
        au_probs = torch.softmax(pairs, dim=-1)[..., 1]

        return ModelOutputs(
            landmarks_pred=landmarks_pred,
            au_probs=au_probs,
            local_au_probs=local_probs,
            predefined_maps=predefined_maps if variant.uses_attention else None,
            refined_maps=refined,
            assembled_local_feature=assembled,
            per_au_local_features=local_feats,
            trunk_feature=trunk_feat,
            alignment_feature=align_feat,
            global_feature=global_feat,
        )

    def parameter_owner(self, name: str) -> str:
        """Which component a parameter belongs to (ownership is a partition)."""
        for prefix, owner in (("trunk", "trunk"), ("align", "alignment"),
                              ("global_feat", "global"), ("refine", "refinement"),
                              ("local_heads", "heads"), ("local", "local"),
                              ("au_head", "heads")):
            if name.startswith(prefix):
                return owner
        raise KeyError(name)


def init_parameters(model: nn.Module, seed: int) -> None:
    """Deterministic init: fan-in scaled uniform conv/linear weights,
    zero biases, identity batch-norm affine."""
    gen = torch.Generator().manual_seed(seed)
    for module in model.modules():
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            fan_in = module.weight.shape[1:].numel()
            bound = float(fan_in) ** -0.5
            with torch.no_grad():
                module.weight.uniform_(-bound, bound, generator=gen)
                if module.bias is not None:
                    module.bias.zero_()
        elif isinstance(module, nn.BatchNorm2d):
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.zero_()
                module.reset_running_stats()


def save_checkpoint(model: JAANet, path, train_meta: dict | None = None) -> None:
    """Write a versioned checkpoint atomically (temp file + rename).

    Schema (stable keys): format_version, model_config, variant, au_ids,
    lambda_e, state_dict, train_meta.
    """
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": asdict(model.config),
        "variant": model.variant.value,
        "au_ids": list(model.au_ids),
        "lambda_e": model.lambda_e,
        "state_dict": model.state_dict(),
        "train_meta": train_meta or {},
    }
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".",
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> tuple[JAANet, dict]:
    """Rebuild a model from a checkpoint; returns (model, train_meta)."""
    payload = torch.load(os.fspath(path), map_location="cpu",
                         weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    model = JAANet(JAANetConfig(**payload["model_config"]),
                   Variant.parse(payload["variant"]),
                   au_ids=tuple(payload["au_ids"]),
                   lambda_e=payload.get("lambda_e", 2.0))
    model.load_state_dict(payload["state_dict"])
    return model, payload.get("train_meta", {})
