"""Region-learning building blocks: plain blocks and partitioned region layers.

Three layer families, all shape-preserving (3x3 convs, stride 1, padding 1):

  * ``PlainBlock``: two conv-BN-ReLU stages.
  * ``RegionLayer``: a plain conv to 4*c1 channels followed by an 8x8
    partitioned conv back to 4*c1 channels, residual-summed with the plain
    conv output.
  * ``HMRegionLayer``: the plain conv to 4*c1 channels feeds a cascade of
    partitioned convs on 8x8, 4x4, and 2x2 grids with 2*c1, c1, and c1
    output channels; the concatenation (again 4*c1 channels) is
    residual-summed with the plain conv output.

In a partitioned conv every grid patch owns an independent filter bank, so
the closed-form parameter counts of the partitioned stages are

    RegionLayer:  (3*3*4c+1) * 4c * 64                = 9216 c^2 + 256 c
    HMRegionLayer:(3*3*4c+1)*2c*64 + (3*3*2c+1)*c*16
                   + (3*3*c+1)*c*4                    = 4932 c^2 + 148 c

both excluding the shared first plain conv and all batch-norm parameters.
Batch norm sits after each conv (plain and partitioned alike), one norm over
the re-tiled map per partitioned layer; the residual sum has no activation.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ShapeError


class PartitionedConv2d(nn.Module):
    """3x3 convolution with an independent filter bank per grid patch.

    The input is split into grid_n x grid_n equal patches; each patch is
    convolved (stride 1, padding 1 inside the patch) with its own filters and
    the outputs are re-tiled. Implemented as a grouped convolution over a
    patch-to-channel folding of the input. grid_n=1 degenerates to a plain
    convolution.
    """

    def __init__(self, in_channels: int, out_channels: int, grid_n: int):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.grid_n = grid_n
        g = grid_n * grid_n
        self.conv = nn.Conv2d(g * in_channels, g * out_channels,
                              kernel_size=3, stride=1, padding=1, groups=g)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        n = self.grid_n
        if c != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} channels, got {c}")
        if h % n or w % n:
            raise ShapeError(f"spatial size {h}x{w} not divisible by grid {n}")
        ph, pw = h // n, w // n
        # (b, c, n, ph, n, pw) -> (b, n*n*c, ph, pw), patches row-major
        x = x.view(b, c, n, ph, n, pw).permute(0, 2, 4, 1, 3, 5)
        x = x.reshape(b, n * n * c, ph, pw)
        y = self.conv(x)
        co = self.out_channels
        y = y.view(b, n, n, co, ph, pw).permute(0, 3, 1, 4, 2, 5)
        return y.reshape(b, co, h, w)


def _conv_bn_relu(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=1, padding=1),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class PlainBlock(nn.Module):
    """Two conv-BN-ReLU stages, both at ``out_channels``."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.stage1 = _conv_bn_relu(in_channels, out_channels)
        self.stage2 = _conv_bn_relu(out_channels, out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.stage2(self.stage1(x))


class _PartitionedStage(nn.Module):
    """Partitioned conv followed by one batch norm over the re-tiled map."""

    def __init__(self, in_ch: int, out_ch: int, grid_n: int):
        super().__init__()
        self.pconv = PartitionedConv2d(in_ch, out_ch, grid_n)
        self.bn = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.relu(self.bn(self.pconv(x)))


class RegionLayer(nn.Module):
    """Plain conv to 4*c1 channels + single 8x8 partitioned conv, residual."""

    def __init__(self, in_channels: int, c1: int):
        super().__init__()
        self.c1 = c1
        self.plain = _conv_bn_relu(in_channels, 4 * c1)
        self.part = _PartitionedStage(4 * c1, 4 * c1, 8)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        base = self.plain(x)
        return base + self.part(base)

    def partitioned_parameter_count(self) -> int:
        return sum(p.numel() for p in self.part.pconv.parameters())


class HMRegionLayer(nn.Module):
    """Hierarchical multi-scale region layer (8x8 -> 4x4 -> 2x2 cascade)."""

    def __init__(self, in_channels: int, c1: int):
        super().__init__()
        self.c1 = c1
        self.plain = _conv_bn_relu(in_channels, 4 * c1)
        self.part8 = _PartitionedStage(4 * c1, 2 * c1, 8)
        self.part4 = _PartitionedStage(2 * c1, c1, 4)
        self.part2 = _PartitionedStage(c1, c1, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        base = self.plain(x)
        b8 = self.part8(base)
        b4 = self.part4(b8)
        b2 = self.part2(b4)
        return base + torch.cat([b8, b4, b2], dim=1)

    def partitioned_parameter_count(self) -> int:
        return sum(p.numel()
                   for stage in (self.part8, self.part4, self.part2)
                   for p in stage.pconv.parameters())


def count_partitioned_params(kind: str, c1: int) -> int:
    """Closed-form parameter count of the partitioned stages.

    Counts convolution weights and biases only, excluding the shared first
    plain conv and all batch-norm parameters.
    """
    if c1 <= 0:
        raise ValueError("c1 must be positive")
    if kind == "R":
        return (3 * 3 * 4 * c1 + 1) * 4 * c1 * 64
    if kind == "R_hm":
        return ((3 * 3 * 4 * c1 + 1) * 2 * c1 * 64
                + (3 * 3 * 2 * c1 + 1) * c1 * 16
                + (3 * 3 * c1 + 1) * c1 * 4)
    raise ValueError(f"unknown layer kind {kind!r} (expected 'R' or 'R_hm')")
