"""Training loop, run management, and checkpoint transfer.

A run directory contains::

    run_config.json      # snapshot written before anything else
    metrics.jsonl        # one record per epoch: every loss term separately,
                         # learning rate, training-pass F1 and mean error
    checkpoints/epoch_NNNN.pt
    final.pt

Optimization is SGD with Nesterov momentum; weight decay applies to
convolution and fully-connected weights only (not biases, not norm affine
parameters). Single-worker runs are fully deterministic for a given seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import cv2
import numpy as np
import torch

from . import data as data_mod
from . import evaluation, losses
from .config import JAANetConfig, TrainConfig, Variant, lr_at
from .landmarks import LandmarkSet
from .network import JAANet, load_checkpoint, save_checkpoint


def parameter_groups(model: torch.nn.Module, weight_decay: float):
    """Weight-decay only the conv/linear weights."""
    decay, no_decay = [], []
    for module in model.modules():
        for name, param in module.named_parameters(recurse=False):
            if isinstance(module, (torch.nn.Conv2d, torch.nn.Linear)) \
                    and name == "weight":
                decay.append(param)
            else:
                no_decay.append(param)
    return [{"params": decay, "weight_decay": weight_decay},
            {"params": no_decay, "weight_decay": 0.0}]


@dataclass
class Batch:
    images: torch.Tensor      # (B, 3, l, l)
    labels: torch.Tensor      # (B, n_au) float
    landmarks: torch.Tensor   # (B, 2*n_align) in the l-frame
    d_o: torch.Tensor         # (B,)


def make_batch(samples, l: int, rng: np.random.Generator | None,
               dtype=torch.float32) -> Batch:
    """Assemble a batch; with an rng the crop/flip augmentation is applied,
    otherwise the deterministic center crop."""
    imgs, lms, d_os, labels = [], [], [], []
    for s in samples:
        if rng is not None:
            aug = data_mod.random_crop_flip(s, rng)
        else:
            aug = data_mod.center_crop(s)
        img, pts = aug.image, aug.landmarks
        if l != data_mod.CROP_SIZE:
            img = cv2.resize(img, (l, l), interpolation=cv2.INTER_LINEAR)
            pts = pts * (l / data_mod.CROP_SIZE)
        imgs.append(np.ascontiguousarray(img.transpose(2, 0, 1)))
        lms.append(pts.reshape(-1))
        d_os.append(LandmarkSet(pts).interocular_distance())
        labels.append(aug.au_labels)
    return Batch(
        images=torch.as_tensor(np.stack(imgs), dtype=dtype),
        labels=torch.as_tensor(np.stack(labels), dtype=dtype),
        landmarks=torch.as_tensor(np.stack(lms), dtype=dtype),
        d_o=torch.as_tensor(np.array(d_os), dtype=dtype),
    )


def compute_losses(outputs, batch: Batch, variant: Variant,
                   weights: torch.Tensor, model_cfg: JAANetConfig,
                   lambda_er: float) -> dict[str, torch.Tensor]:
    """Every active loss term plus the variant's total."""
    terms: dict[str, torch.Tensor] = {}
    w = weights.to(batch.labels.dtype)
    terms["cross"] = losses.weighted_cross_entropy(batch.labels,
                                                   outputs.au_probs, w)
    e_all = terms["cross"]
    if variant.uses_dice:
        terms["dice"] = losses.weighted_dice(batch.labels, outputs.au_probs,
                                             w, model_cfg.eps)
        e_all = e_all + terms["dice"]
    terms["all_au"] = e_all

    zero = torch.zeros((), dtype=e_all.dtype, device=e_all.device)
    e_local = zero
    if variant.uses_local_au_loss:
        e_local = losses.local_au_loss(batch.labels, outputs.local_au_probs,
                                       w, model_cfg.eps)
        terms["local_au"] = e_local

    if variant.uses_alignment:
        e_align = losses.face_alignment_loss(batch.landmarks,
                                             outputs.landmarks_pred, batch.d_o)
        terms["align"] = e_align
        total = losses.total_loss(e_all, e_local, e_align,
                                  model_cfg.lambda_align)
    else:
        total = e_all + e_local

    if variant.uses_refinement_constraint:
        e_r = losses.refinement_constraint(outputs.predefined_maps,
                                           outputs.refined_maps)
        terms["refine_constraint"] = e_r
        total = total + lambda_er * e_r

    terms["total"] = total
    return terms


@dataclass
class TrainResult:
    out_dir: Path
    final_checkpoint: Path
    metrics: list[dict]
    epochs_run: int
    stopped_early: bool


def train(model: JAANet, manifest: data_mod.Manifest, cfg: TrainConfig,
          out_dir, samples=None) -> TrainResult:
    """Run the full recipe on a manifest; see the module docstring for the
    directory layout. ``samples`` can carry preloaded images to skip disk
    reads on repeated runs. Aborts with a diagnostic snapshot on a
    non-finite loss.
    """
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {
        "model_config": asdict(model.config),
        "variant": cfg.variant.value,
        "au_ids": list(model.au_ids),
        "train_config": {**asdict(cfg), "variant": cfg.variant.value},
    }
    (out_dir / "run_config.json").write_text(json.dumps(snapshot, indent=2))

    torch.manual_seed(cfg.seed)
    if samples is None:
        samples = manifest.load_samples()
    # add-one smoothing keeps 1/r defined when an AU never occurs
    weights = (losses.au_weights(manifest.occurrence_rates(smoothing=1.0))
               if cfg.variant.uses_au_weights
               else torch.ones(model.config.n_au, dtype=torch.float64))

    optimizer = torch.optim.SGD(
        parameter_groups(model, cfg.weight_decay),
        lr=cfg.lr0, momentum=cfg.momentum, nesterov=True)

    metrics_path = out_dir / "metrics.jsonl"
    metrics_path.write_text("")
    history: list[dict] = []
    stopped = False
    epochs_run = 0

    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(samples))

        model.train()
        sums: dict[str, float] = {}
        n_batches = 0
        ep_labels, ep_probs, ep_lms, ep_pred, ep_do = [], [], [], [], []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = make_batch([samples[i] for i in idx], model.config.l, rng)
            outputs = model(batch.images)
            terms = compute_losses(outputs, batch, cfg.variant, weights,
                                   model.config, cfg.lambda_er)
            loss = terms["total"]
            if not torch.isfinite(loss):
                snap = out_dir / "diagnostic_batch.pt"
                torch.save({"batch_images": batch.images,
                            "batch_labels": batch.labels,
                            "epoch": epoch,
                            "terms": {k: float(v) for k, v in terms.items()},
                            "state_dict": model.state_dict()}, snap)
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}; offending batch "
                    f"saved to {snap}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            n_batches += 1
            for key, val in terms.items():
                sums[key] = sums.get(key, 0.0) + float(val.detach())
            ep_labels.append(batch.labels.numpy())
            ep_probs.append(outputs.au_probs.detach().numpy())
            if outputs.landmarks_pred is not None:
                ep_lms.append(batch.landmarks.numpy())
                ep_pred.append(outputs.landmarks_pred.detach().numpy())
                ep_do.append(batch.d_o.numpy())

        record = {"epoch": epoch, "lr": lr}
        record.update({f"loss_{k}": v / n_batches for k, v in sums.items()})
        counts = evaluation.confusion_counts(np.concatenate(ep_labels),
                                             np.concatenate(ep_probs))
        record["train_f1_frame"] = evaluation.f1_frame(counts)[1]
        if ep_pred:
            pred = np.concatenate(ep_pred).reshape(-1, model.config.n_align, 2)
            gt = np.concatenate(ep_lms).reshape(-1, model.config.n_align, 2)
            record["train_mean_error"] = evaluation.mean_error(
                gt, pred, np.concatenate(ep_do))

        epochs_run = epoch + 1
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            res = evaluation.evaluate_model(model, samples, cfg.batch_size)
            record["eval_train_f1"] = res.f1_avg
            if res.mean_error is not None:
                record["eval_train_mean_error"] = res.mean_error
            ok_f1 = (cfg.stop_train_f1 is None
                     or res.f1_avg >= cfg.stop_train_f1)
            ok_err = (cfg.stop_train_mean_error is None
                      or (res.mean_error is not None
                          and res.mean_error <= cfg.stop_train_mean_error))
            if (cfg.stop_train_f1 is not None
                    or cfg.stop_train_mean_error is not None) \
                    and ok_f1 and ok_err:
                stopped = True

        history.append(record)
        with metrics_path.open("a") as fh:
            fh.write(json.dumps(record) + "\n")
        if (epoch + 1) % cfg.checkpoint_every == 0 or stopped \
                or epoch + 1 == cfg.epochs:
            save_checkpoint(model, ckpt_dir / f"epoch_{epoch:04d}.pt",
                            {"epoch": epoch, "train_config": snapshot["train_config"]})
        if stopped:
            break

    final = out_dir / "final.pt"
    save_checkpoint(model, final, {"epochs_run": epochs_run,
                                   "train_config": snapshot["train_config"]})
    summary = {"epochs_run": epochs_run, "stopped_early": stopped,
               "final_checkpoint": str(final), "last_record": history[-1]}
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    return TrainResult(out_dir, final, history, epochs_run, stopped)


# ---------------------------------------------------------------------------
# checkpoint transfer
# ---------------------------------------------------------------------------

_PER_AU_PREFIXES = ("refine.", "local.", "local_heads.", "au_head.")


@dataclass
class TransferReport:
    copied: list[str]
    fresh: list[str]


def transfer_init(model: JAANet, source_checkpoint) -> TransferReport:
    """Initialize from a checkpoint trained possibly on another AU set.

    Parameters whose name and shape match are copied; everything that
    depends on the AU count (refinement/local branches, all heads) is left
    freshly initialized when the AU sets differ. The report partitions every
    target parameter into copied or fresh. Raises if the trunk does not
    transfer (incompatible architecture).
    """
    if isinstance(source_checkpoint, (str, Path)):
        source, _ = load_checkpoint(source_checkpoint)
    else:
        source = source_checkpoint
    same_aus = source.au_ids == model.au_ids
    src_state = source.state_dict()
    new_state = model.state_dict()
    copied, fresh = [], []
    for name, tensor in new_state.items():
        per_au = name.startswith(_PER_AU_PREFIXES)
        ok = (name in src_state
              and src_state[name].shape == tensor.shape
              and (same_aus or not per_au))
        if ok:
            new_state[name] = src_state[name].clone()
            copied.append(name)
        else:
            fresh.append(name)
    trunk_params = [n for n in new_state if n.startswith("trunk")]
    if any(n in fresh for n in trunk_params):
        raise ValueError("trunk shape mismatch: source checkpoint is not "
                         "architecture-compatible")
    model.load_state_dict(new_state)
    param_names = {n for n, _ in model.named_parameters()}
    return TransferReport([n for n in copied if n in param_names],
                          [n for n in fresh if n in param_names])
