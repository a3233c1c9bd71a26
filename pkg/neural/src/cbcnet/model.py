"""U-Net generator and patch discriminator for image-to-image translation."""

from __future__ import annotations

import math

import torch
from torch import nn


def required_depth(image_size: int) -> int:
    """Down/up blocks needed to reach a 1x1 bottleneck (8 at 256 px)."""
    depth = int(math.log2(image_size))
    if 2 ** depth != image_size:
        raise ValueError(f"image size must be a power of two, got {image_size}")
    return depth


class UnetGenerator(nn.Module):
    """Encoder/decoder with skip concatenation: 4x4 convolutions, stride 2,
    batch normalisation and leaky rectification per block."""

    def __init__(self, in_channels: int, out_channels: int, image_size: int,
                 base_channels: int = 64):
        super().__init__()
        depth = required_depth(image_size)
        widths = [min(base_channels * 2 ** k, base_channels * 8)
                  for k in range(depth)]

        self.encoders = nn.ModuleList()
        prev = in_channels
        for k, width in enumerate(widths):
            layers = [nn.Conv2d(prev, width, 4, stride=2, padding=1,
                                bias=(k == 0 or k == depth - 1))]
            # the outermost block sees raw pixels and the 1x1 bottleneck has a
            # single value per channel; neither can be batch-normalised
            if 0 < k < depth - 1:
                layers.append(nn.BatchNorm2d(width))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            self.encoders.append(nn.Sequential(*layers))
            prev = width

        self.decoders = nn.ModuleList()
        for k in reversed(range(depth)):
            skip = widths[k - 1] if k > 0 else 0
            target = widths[k - 1] if k > 0 else out_channels
            in_ch = widths[k] if k == depth - 1 else widths[k] * 2
            layers = [nn.ConvTranspose2d(in_ch, target, 4, stride=2, padding=1,
                                         bias=(k == 0))]
            if k > 0:
                layers.append(nn.BatchNorm2d(target))
                layers.append(nn.LeakyReLU(0.2, inplace=True))
            self.decoders.append(nn.Sequential(*layers))
            del skip
        self.activation = nn.Tanh()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
        x = skips.pop()
        for i, decoder in enumerate(self.decoders):
            if i > 0:
                x = torch.cat([x, skips.pop()], dim=1)
            x = decoder(x)
        return self.activation(x)


class PatchDiscriminator(nn.Module):
    """Four downscaling blocks (4x4, stride 2) over the concatenated
    input/output pair, then a one-channel patch verdict map."""

    def __init__(self, in_channels: int, base_channels: int = 64):
        super().__init__()
        widths = [base_channels, base_channels * 2, base_channels * 4,
                  base_channels * 8]
        layers = []
        prev = in_channels
        for k, width in enumerate(widths):
            layers.append(nn.Conv2d(prev, width, 4, stride=2, padding=1,
                                    bias=(k == 0)))
            if k > 0:
                layers.append(nn.BatchNorm2d(width))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            prev = width
        layers.append(nn.Conv2d(prev, 1, 4, stride=1, padding=1))
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return self.body(torch.cat([x, y], dim=1))
