"""LR content encoder: RRDB trunk with a global residual, plus a sub-pixel upsampling head."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .substrate import DimensionError, pixel_shuffle


@dataclass
class RRDBConfig:
    num_blocks: int = 4
    channels: int = 64
    dense_blocks_per_rrdb: int = 3
    convs_per_dense_block: int = 5
    growth_channels: int = 32
    residual_scale: float = 0.2

    def __post_init__(self):
        for name in ("num_blocks", "channels", "dense_blocks_per_rrdb", "convs_per_dense_block", "growth_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.residual_scale <= 1.0:
            raise ValueError("residual_scale must be in (0, 1]")


class DenseBlock(nn.Module):
    def __init__(self, channels: int, growth: int, num_convs: int, scale: float):
        super().__init__()
        self.scale = scale
        self.convs = nn.ModuleList(
            nn.Conv2d(channels + i * growth, growth if i < num_convs - 1 else channels, 3, padding=1)
            for i in range(num_convs)
        )
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x):
        feats = [x]
        for i, conv in enumerate(self.convs):
            out = conv(torch.cat(feats, 1))
            if i < len(self.convs) - 1:
                feats.append(self.act(out))
        return x + self.scale * out


class RRDB(nn.Module):
    def __init__(self, cfg: RRDBConfig):
        super().__init__()
        self.scale = cfg.residual_scale
        self.blocks = nn.Sequential(*[
            DenseBlock(cfg.channels, cfg.growth_channels, cfg.convs_per_dense_block, cfg.residual_scale)
            for _ in range(cfg.dense_blocks_per_rrdb)
        ])

    def forward(self, x):
        return x + self.scale * self.blocks(x)


class LREncoder(nn.Module):
    """``u = first_conv(x) + trunk(first_conv(x))``, kept at LR resolution."""

    min_size = 8

    def __init__(self, cfg: RRDBConfig | None = None, scale_r: int = 4, in_channels: int = 3):
        super().__init__()
        cfg = cfg or RRDBConfig()
        self.cfg = cfg
        self.scale_r = scale_r
        c = cfg.channels
        self.first_conv = nn.Conv2d(in_channels, c, 3, padding=1)
        self.body = nn.Sequential(*[RRDB(cfg) for _ in range(cfg.num_blocks)])
        self.trunk_conv = nn.Conv2d(c, c, 3, padding=1)

        ups = []
        r = scale_r
        while r > 1:
            f = 2 if r % 2 == 0 else r
            ups.append(_ShuffleUp(c, f))
            r //= f
        self.up = nn.Sequential(*ups)
        self.head = nn.Sequential(
            nn.Conv2d(c, c, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(c, in_channels, 3, padding=1),
        )

    @property
    def out_channels(self) -> int:
        return self.cfg.channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.encode(x)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        if min(x.shape[-2:]) < self.min_size:
            raise DimensionError(f"LR input must be at least {self.min_size}x{self.min_size}, got {tuple(x.shape[-2:])}")
        fea = self.first_conv(x)
        u = fea + self.trunk_conv(self.body(fea))
        return u.squeeze(0) if squeeze else u

    def upsample_head(self, u: torch.Tensor) -> torch.Tensor:
        """Diagnostic SR image at ``scale_r`` times the LR size."""
        return self.head(self.up(u))


class _ShuffleUp(nn.Module):
    def __init__(self, channels: int, factor: int):
        super().__init__()
        self.factor = factor
        self.conv = nn.Conv2d(channels, channels * factor * factor, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x):
        return self.act(pixel_shuffle(self.conv(x), self.factor))


def encoder_loss(up: torch.Tensor, x_hr: torch.Tensor) -> torch.Tensor:
    """Mean absolute error between the upsampled LR encoding and the HR target."""
    if up.shape != x_hr.shape:
        raise DimensionError(f"encoder_loss shape mismatch: {tuple(up.shape)} vs {tuple(x_hr.shape)}")
    return (up - x_hr).abs().mean()
