"""Unsupervised degradation representation (encoder, projection head, queue, loss)."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .substrate import DimensionError

REP_DIM = 256


class StateError(RuntimeError):
    pass


class DegradationEncoder(nn.Module):
    """Six 3x3 convs (64, 64, 128, 128, 256, 256), BN + LeakyReLU, global average pool.

    The third and fifth convs have stride 2.
    """

    channels = (64, 64, 128, 128, 256, 256)
    strides = (1, 1, 2, 1, 2, 1)

    def __init__(self, in_channels: int = 3, num_layers: int = 6):
        super().__init__()
        layers = []
        c_in = in_channels
        for c_out, s in list(zip(self.channels, self.strides))[:num_layers]:
            layers += [
                nn.Conv2d(c_in, c_out, 3, stride=s, padding=1),
                nn.BatchNorm2d(c_out),
                nn.LeakyReLU(0.1, inplace=True),
            ]
            c_in = c_out
        self.body = nn.Sequential(*layers)
        self.out_dim = c_in

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[-1] < 4 or x.shape[-2] < 4:
            raise DimensionError(f"degradation encoder needs at least 4x4 patches, got {tuple(x.shape[-2:])}")
        v = self.body(x).mean(dim=(2, 3))
        return v.squeeze(0) if squeeze else v


class ProjectionHead(nn.Module):
    """Three affine layers with LeakyReLU between."""

    def __init__(self, in_dim: int = REP_DIM, hidden: int = REP_DIM, out_dim: int = 256):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Linear(hidden, hidden),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Linear(hidden, out_dim),
        )
        self.out_dim = out_dim

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        return self.net(v)


class DegradationModel(nn.Module):
    """Encoder plus projection head; ``forward`` returns the representation ``v``."""

    def __init__(self, proj_dim: int = 256):
        super().__init__()
        self.encoder = DegradationEncoder()
        self.head = ProjectionHead(self.encoder.out_dim, REP_DIM, proj_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def project(self, v: torch.Tensor) -> torch.Tensor:
        return self.head(v)


class NegativeQueue:
    """FIFO store of detached projected vectors used as negatives."""

    def __init__(self, capacity: int = 2048, temperature: float = 0.07):
        if capacity < 1:
            raise ValueError(f"queue capacity must be positive, got {capacity}")
        if temperature <= 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.capacity = capacity
        self.temperature = temperature
        self.entries: torch.Tensor | None = None

    def __len__(self) -> int:
        return 0 if self.entries is None else self.entries.shape[0]

    def push(self, batch) -> "NegativeQueue":
        if isinstance(batch, (list, tuple)):
            if not batch:
                return self
            batch = torch.stack([torch.as_tensor(b) for b in batch])
        batch = batch.detach()
        if batch.dim() == 1:
            batch = batch.unsqueeze(0)
        if batch.shape[0] == 0:
            return self
        merged = batch if self.entries is None else torch.cat([self.entries, batch.to(self.entries)])
        self.entries = merged[-self.capacity:].clone()
        return self


def queue_push(queue: NegativeQueue, batch) -> NegativeQueue:
    return queue.push(batch)


def contrastive_loss(
    w: torch.Tensor,
    w_pos: torch.Tensor,
    queue: NegativeQueue,
    normalize: bool = True,
    include_positive: bool = False,
) -> torch.Tensor:
    """``-log(exp(w.w+/tau) / sum_i exp(w.q_i/tau))``, averaged over the batch.

    The denominator runs over queue entries only unless ``include_positive``.
    """
    if len(queue) == 0:
        raise StateError("contrastive loss needs a non-empty negative queue")
    squeeze = w.dim() == 1
    if squeeze:
        w, w_pos = w.unsqueeze(0), w_pos.unsqueeze(0)
    negs = queue.entries.to(w)
    if normalize:
        w, w_pos, negs = F.normalize(w, dim=1), F.normalize(w_pos, dim=1), F.normalize(negs, dim=1)
    tau = queue.temperature
    pos = (w * w_pos).sum(dim=1) / tau
    neg = w @ negs.T / tau
    if include_positive:
        neg = torch.cat([pos.unsqueeze(1), neg], dim=1)
    return (torch.logsumexp(neg, dim=1) - pos).mean()
