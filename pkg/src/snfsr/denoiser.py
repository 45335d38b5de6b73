"""Conditional denoising U-Net predicting the clean image from a noisy latent.

Inputs are pixel-folded to half resolution, concatenated with the LR encoding
and processed by residual blocks conditioned on a time embedding and on the
degradation representation (through degradation-aware convolutions).
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .degrep import REP_DIM
from .substrate import DimensionError, pixel_fold, pixel_shuffle


@dataclass
class UNetConfig:
    base_channels: int = 64
    depth: int = 4
    blocks_per_group: int = 2
    channel_mults: tuple[int, ...] = (1, 1, 2, 2)
    groupnorm_groups: int = 8
    u_channels: int = 64
    rep_dim: int = REP_DIM
    daconv_hidden: int = 64
    use_degradation: bool = True
    in_channels: int = 3

    def __post_init__(self):
        self.channel_mults = tuple(int(m) for m in self.channel_mults)
        if len(self.channel_mults) != self.depth:
            raise ValueError(f"need {self.depth} channel multipliers, got {len(self.channel_mults)}")
        if self.base_channels % 2:
            raise ValueError("base_channels must be even")

    @property
    def multiple(self) -> int:
        return 2 ** (self.depth + 1)


def swish(x):
    return x * torch.sigmoid(x)


def _mlp3(d_in: int, d_hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(d_in, d_hidden), nn.SiLU(),
        nn.Linear(d_hidden, d_hidden), nn.SiLU(),
        nn.Linear(d_hidden, d_out),
    )


def sinusoidal_features(t: torch.Tensor, num_freqs: int) -> torch.Tensor:
    """Interleaved ``[sin(w1 t), cos(w1 t), sin(w2 t), ...]`` with ``w_k = 10000^(-(k-1)/K)``."""
    t = torch.as_tensor(t, dtype=torch.float64).reshape(-1, 1)
    k = torch.arange(num_freqs, dtype=torch.float64)
    omega = torch.pow(10000.0, -k / num_freqs)
    arg = t * omega
    return torch.stack([arg.sin(), arg.cos()], dim=-1).reshape(t.shape[0], 2 * num_freqs)


class TimeEmbedding(nn.Module):
    def __init__(self, base_channels: int):
        super().__init__()
        self.num_freqs = base_channels // 2
        self.mlp = _mlp3(2 * self.num_freqs, 4 * base_channels, 4 * base_channels)
        self.out_dim = 4 * base_channels

    def features(self, t) -> torch.Tensor:
        return sinusoidal_features(t, self.num_freqs).to(self.mlp[0].weight.dtype)

    def forward(self, t) -> torch.Tensor:
        return self.mlp(self.features(t))


class DAConv(nn.Module):
    """Degradation-aware conv: per-sample depthwise 3x3 kernels from ``v``, then a 1x1 mix."""

    def __init__(self, channels: int, out_channels: int | None = None,
                 rep_dim: int = REP_DIM, hidden: int = 64):
        super().__init__()
        self.channels = channels
        self.kernel_mlp = _mlp3(rep_dim, hidden, channels * 9)
        self.mix = nn.Conv2d(channels, out_channels or channels, 1)

    def predict_kernels(self, v: torch.Tensor) -> torch.Tensor:
        return self.kernel_mlp(v).view(v.shape[0], self.channels, 3, 3)

    @staticmethod
    def depthwise(x: torch.Tensor, kernels: torch.Tensor) -> torch.Tensor:
        n, c, h, w = x.shape
        out = F.conv2d(x.reshape(1, n * c, h, w), kernels.reshape(n * c, 1, 3, 3), padding=1, groups=n * c)
        return out.view(n, c, h, w)

    def forward(self, x: torch.Tensor, v: torch.Tensor, kernels: torch.Tensor | None = None) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x, v = x.unsqueeze(0), v.reshape(1, -1)
            if kernels is not None and kernels.dim() == 3:
                kernels = kernels.unsqueeze(0)
        if kernels is None:
            kernels = self.predict_kernels(v)
        out = self.mix(self.depthwise(x, kernels))
        return out.squeeze(0) if squeeze else out


def _norm(ch: int, groups: int) -> nn.GroupNorm:
    if ch % groups:
        raise ValueError(f"{ch} channels not divisible into {groups} groups")
    return nn.GroupNorm(groups, ch)


class ResBlock(nn.Module):
    """``F1 = conv(swish(gn(F_in)))``, ``F2 = F1 + proj(t_e)``, ``F_out = DAConv(swish(gn(F2)), v) + F_in``."""

    def __init__(self, in_ch: int, out_ch: int, temb_dim: int, cfg: UNetConfig):
        super().__init__()
        g = cfg.groupnorm_groups
        self.norm1 = _norm(in_ch, g)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, out_ch)
        self.norm2 = _norm(out_ch, g)
        self.use_degradation = cfg.use_degradation
        if cfg.use_degradation:
            self.conv2 = DAConv(out_ch, out_ch, cfg.rep_dim, cfg.daconv_hidden)
        else:
            self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.shortcut = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def zero_second_stage(self) -> None:
        last = self.conv2.mix if self.use_degradation else self.conv2
        nn.init.zeros_(last.weight)
        nn.init.zeros_(last.bias)

    def forward(self, x: torch.Tensor, temb: torch.Tensor, v: torch.Tensor | None) -> torch.Tensor:
        h = self.conv1(swish(self.norm1(x)))
        h = h + self.temb_proj(temb)[:, :, None, None]
        h = swish(self.norm2(h))
        h = self.conv2(h, v) if self.use_degradation else self.conv2(h)
        return h + self.shortcut(x)


class Downsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2.0, mode="nearest"))


class Denoiser(nn.Module):
    def __init__(self, cfg: UNetConfig | None = None):
        super().__init__()
        cfg = cfg or UNetConfig()
        self.cfg = cfg
        c = cfg.base_channels
        folded = cfg.in_channels * 4
        self.time_embed = TimeEmbedding(c)
        temb = self.time_embed.out_dim
        self.head = nn.Conv2d(folded, c, 3, padding=1)

        ch = c + cfg.u_channels
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        skip_ch = []
        for mult in cfg.channel_mults:
            out = c * mult
            blocks = nn.ModuleList()
            for _ in range(cfg.blocks_per_group):
                blocks.append(ResBlock(ch, out, temb, cfg))
                ch = out
            self.down_blocks.append(blocks)
            self.downsamples.append(Downsample(ch))
            skip_ch.append(ch)

        self.mid_blocks = nn.ModuleList(ResBlock(ch, ch, temb, cfg) for _ in range(2))

        self.upsamples = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        for mult, sc in zip(reversed(cfg.channel_mults), reversed(skip_ch)):
            out = c * mult
            self.upsamples.append(Upsample(ch))
            blocks = nn.ModuleList()
            ch = ch + sc
            for _ in range(cfg.blocks_per_group):
                blocks.append(ResBlock(ch, out, temb, cfg))
                ch = out
            self.up_blocks.append(blocks)

        self.out_norm = _norm(ch, cfg.groupnorm_groups)
        self.out_conv = nn.Conv2d(ch, folded, 3, padding=1)

    def resblocks(self):
        return [m for m in self.modules() if isinstance(m, ResBlock)]

    def forward(self, x_t: torch.Tensor, t, u: torch.Tensor, v: torch.Tensor | None) -> torch.Tensor:
        squeeze = x_t.dim() == 3
        if squeeze:
            x_t, u = x_t.unsqueeze(0), u.unsqueeze(0)
            v = None if v is None else v.reshape(1, -1)
        n, _, H, W = x_t.shape
        m = self.cfg.multiple
        if H % m or W % m:
            raise DimensionError(f"denoiser input {H}x{W} must be divisible by {m}")
        t = torch.as_tensor(t).reshape(-1)
        if t.numel() == 1:
            t = t.expand(n)

        temb = self.time_embed(t)
        h = self.head(pixel_fold(x_t))
        u = F.interpolate(u, size=(H // 2, W // 2), mode="nearest")
        h = torch.cat([h, u], dim=1)

        skips = []
        for blocks, down in zip(self.down_blocks, self.downsamples):
            for blk in blocks:
                h = blk(h, temb, v)
            skips.append(h)
            h = down(h)
        for blk in self.mid_blocks:
            h = blk(h, temb, v)
        for up, blocks in zip(self.upsamples, self.up_blocks):
            h = torch.cat([up(h), skips.pop()], dim=1)
            for blk in blocks:
                h = blk(h, temb, v)

        out = pixel_shuffle(self.out_conv(swish(self.out_norm(h))))
        return out.squeeze(0) if squeeze else out


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())

