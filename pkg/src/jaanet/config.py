"""Model and training configuration."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields

from .errors import ConfigError


class Variant(enum.Enum):
    """Architecture/loss ladder, from the plain region baseline up.

    R       region-layer trunk + global feature, cross entropy only
    H       hierarchical multi-scale trunk, cross entropy only
    HD      + Dice loss
    HDW     + inverse-occurrence-rate AU weighting
    J       + face alignment module, alignment feature fed to the AU head
    JA      + local branches gated by fixed predefined attention maps
    JAA     + per-AU attention refinement, local AU losses, stop-gradient on
              the assembled local feature entering the AU head
    JAA_BE  refinement supervised by the global AU loss with the backward
            gradient at each refined map scaled by lambda_e (no local losses)
    JAA_BE_ER  JAA_BE plus the cross-entropy constraint tying refined maps to
            the predefined ones
    """

    R = "R"
    H = "H"
    HD = "HD"
    HDW = "HDW"
    J = "J"
    JA = "JA"
    JAA = "JAA"
    JAA_BE = "JAA_BE"
    JAA_BE_ER = "JAA_BE_ER"

    @classmethod
    def parse(cls, name: str) -> "Variant":
        key = str(name).strip().upper()
        try:
            return cls[key]
        except KeyError:
            raise ConfigError(f"unknown variant {name!r}; choose from "
                              f"{[v.value for v in cls]}") from None

    # ---- capability flags -------------------------------------------------
    @property
    def uses_hm_layers(self) -> bool:
        return self is not Variant.R

    @property
    def uses_dice(self) -> bool:
        return self not in (Variant.R, Variant.H)

    @property
    def uses_au_weights(self) -> bool:
        return self not in (Variant.R, Variant.H, Variant.HD)

    @property
    def uses_alignment(self) -> bool:
        return self in (Variant.J, Variant.JA, Variant.JAA, Variant.JAA_BE,
                        Variant.JAA_BE_ER)

    @property
    def uses_attention(self) -> bool:
        return self in (Variant.JA, Variant.JAA, Variant.JAA_BE,
                        Variant.JAA_BE_ER)

    @property
    def uses_refinement(self) -> bool:
        return self in (Variant.JAA, Variant.JAA_BE, Variant.JAA_BE_ER)

    @property
    def uses_local_au_loss(self) -> bool:
        return self is Variant.JAA

    @property
    def detaches_assembled(self) -> bool:
        # the stop-gradient accompanies the local AU losses: they take over
        # the supervision of refinement and local branches
        return self is Variant.JAA

    @property
    def uses_grad_enhancement(self) -> bool:
        return self in (Variant.JAA_BE, Variant.JAA_BE_ER)

    @property
    def uses_refinement_constraint(self) -> bool:
        return self is Variant.JAA_BE_ER


@dataclass
class JAANetConfig:
    """Structural hyperparameters of the network.

    ``l`` must be divisible by 16 so the trunk, alignment stack, and local
    branches all land on integer sizes; the defaults are the full-scale
    operating point.
    """

    l: int = 176
    c: int = 8
    d: int = 512
    d_l: int = 64
    n_au: int = 12
    n_align: int = 49
    zeta: float = 0.14
    xi: float = 0.56
    eps: float = 1.0
    lambda_align: float = 0.5

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and v <= 0 and f.name != "xi":
                raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.xi < 0:
            raise ConfigError("xi must be non-negative")
        if self.l % 16 != 0:
            raise ConfigError(f"l must be divisible by 16, got {self.l}")

    # derived sizes -------------------------------------------------------
    @property
    def map_size(self) -> int:
        """Side of the refined attention maps (= trunk feature side)."""
        return self.l // 4

    @property
    def predefined_map_size(self) -> int:
        return self.l // 4 + 8

    @property
    def feature_size(self) -> int:
        """Side of the alignment/global features (two 2x pools from l/4)."""
        return self.l // 16

    @property
    def local_feature_size(self) -> int:
        """Side of a local AU feature (three floor pools from l/4)."""
        return self.l // 4 // 2 // 2 // 2


@dataclass
class TrainConfig:
    """Optimization recipe and run management knobs.

    The default schedule is SGD with Nesterov momentum 0.9, weight decay
    5e-4, lr 0.01 multiplied by 0.3 every 2 epochs, for 12 epochs. For longer
    desk-scale runs keep the ratio epochs / lr_decay_every = 6.
    """

    epochs: int = 12
    lr0: float = 0.01
    lr_decay_factor: float = 0.3
    lr_decay_every: int = 2
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 16
    variant: Variant = Variant.JAA
    seed: int = 0
    lambda_e: float = 2.0
    # coefficient on the refinement constraint (a raw sum over n_au * n_am
    # map points, so it needs scaling down to sit beside the other terms)
    lambda_er: float = 1e-4
    checkpoint_every: int = 1
    # optional early stop: every eval_every epochs run an inference pass on
    # the training set and stop once both thresholds (when set) are met
    eval_every: int = 0
    stop_train_f1: float | None = None
    stop_train_mean_error: float | None = None

    def __post_init__(self) -> None:
        if isinstance(self.variant, str):
            self.variant = Variant.parse(self.variant)
        for name in ("epochs", "lr0", "lr_decay_factor", "lr_decay_every",
                     "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lambda_e < 1.0:
            raise ConfigError("lambda_e must be >= 1")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step-decayed learning rate: lr0 * factor^floor(epoch / decay_every)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)
