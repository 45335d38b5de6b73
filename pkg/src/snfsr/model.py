"""Container tying together the denoiser, the LR encoder and the degradation model."""
from __future__ import annotations

import torch
import torch.nn as nn

from .degrep import DegradationModel
from .denoiser import Denoiser, UNetConfig
from .lrenc import LREncoder, RRDBConfig


class SNFModel(nn.Module):
    def __init__(self, unet: UNetConfig, rrdb: RRDBConfig, scale_r: int = 4, proj_dim: int = 256):
        super().__init__()
        self.scale_r = scale_r
        self.denoiser = Denoiser(unet)
        self.lr_encoder = LREncoder(rrdb, scale_r=scale_r)
        self.degradation = DegradationModel(proj_dim)

    def encode_lr(self, x_lr: torch.Tensor) -> torch.Tensor:
        return self.lr_encoder.encode(x_lr)

    def encode_degradation(self, x_lr: torch.Tensor) -> torch.Tensor:
        return self.degradation(x_lr)

    def denoise(self, x_t, t, u, v) -> torch.Tensor:
        return self.denoiser(x_t, t, u, v)

    @property
    def hr_multiple(self) -> int:
        return self.denoiser.cfg.multiple

    def submodels(self) -> dict[str, nn.Module]:
        return {"denoiser": self.denoiser, "lr_encoder": self.lr_encoder, "degradation": self.degradation}
