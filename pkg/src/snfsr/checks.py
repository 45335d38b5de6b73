"""Finite-difference gradient suite over the differentiable building blocks."""
from __future__ import annotations

from typing import Callable

import torch

from .degrep import DegradationEncoder, ProjectionHead
from .denoiser import DAConv, ResBlock, TimeEmbedding, UNetConfig
from .lrenc import LREncoder, RRDBConfig, encoder_loss
from .substrate import grad_check

TOLERANCE = {torch.float32: 1e-2, torch.float64: 1e-5}
STEP = {torch.float32: 3e-2, torch.float64: 1e-4}


def _weighted(out: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    return (out * weights).sum()


def _cases(dtype: torch.dtype) -> dict[str, Callable[[], float]]:
    g = torch.Generator().manual_seed(1234)

    def rand(*shape):
        return torch.randn(*shape, generator=g, dtype=dtype)

    step = STEP[dtype]
    cases: dict[str, Callable[[], float]] = {}

    def daconv_F():
        torch.manual_seed(0)
        m = DAConv(4, 4, rep_dim=16, hidden=8).to(dtype)
        v, wts = rand(1, 16), rand(1, 4, 6, 6)
        return grad_check(lambda x: _weighted(m(x.unsqueeze(0), v), wts), rand(4, 6, 6), step)

    def daconv_v():
        torch.manual_seed(0)
        m = DAConv(4, 4, rep_dim=16, hidden=8).to(dtype)
        x, wts = rand(1, 4, 6, 6), rand(1, 4, 6, 6)
        return grad_check(lambda v: _weighted(m(x, v.unsqueeze(0)), wts), rand(16), step)

    def resblock():
        torch.manual_seed(0)
        cfg = UNetConfig(base_channels=8, groupnorm_groups=2, rep_dim=16, daconv_hidden=8)
        m = ResBlock(4, 4, 16, cfg).to(dtype)
        temb, v, wts = rand(1, 16), rand(1, 16), rand(1, 4, 4, 4)
        return grad_check(lambda x: _weighted(m(x.unsqueeze(0), temb, v), wts), rand(4, 4, 4), step)

    def time_mlp():
        torch.manual_seed(0)
        m = TimeEmbedding(8).to(dtype)
        wts = rand(1, m.out_dim)
        feats = m.features(torch.tensor([37]))
        return grad_check(lambda p: _weighted(m.mlp(p.unsqueeze(0)), wts), feats[0], step)

    def projection():
        torch.manual_seed(0)
        m = ProjectionHead(16, 16, 8).to(dtype)
        wts = rand(8)
        return grad_check(lambda v: _weighted(m(v), wts), rand(16), step)

    def encoder_l1():
        target = rand(3, 4, 4)
        # keep every coordinate away from the |.| kink
        x0 = target + torch.sign(rand(3, 4, 4)) * (0.5 + rand(3, 4, 4).abs())
        return grad_check(lambda up: encoder_loss(up, target), x0, step)

    def degrep_truncated():
        torch.manual_seed(0)
        m = DegradationEncoder(num_layers=2).to(dtype).eval()
        wts = rand(m.out_dim)
        return grad_check(lambda x: _weighted(m(x), wts), rand(3, 8, 8), step)

    def upsample_head():
        torch.manual_seed(0)
        m = LREncoder(RRDBConfig(num_blocks=1, channels=4, growth_channels=2, convs_per_dense_block=2,
                                 dense_blocks_per_rrdb=1), scale_r=2).to(dtype)
        wts = rand(1, 3, 4, 4)
        return grad_check(lambda u: _weighted(m.upsample_head(u.unsqueeze(0)), wts), rand(4, 2, 2), step)

    cases.update({
        "daconv_wrt_features": daconv_F,
        "daconv_wrt_representation": daconv_v,
        "resblock": resblock,
        "time_embedding_mlp": time_mlp,
        "projection_head": projection,
        "encoder_loss": encoder_l1,
        "degradation_encoder_2layer": degrep_truncated,
        "upsample_head": upsample_head,
    })
    return cases


def gradcheck_suite(dtype: torch.dtype = torch.float64) -> list[tuple[str, float, bool]]:
    """Run every case; returns ``(name, max relative error, passed)`` rows."""
    tol = TOLERANCE[dtype]
    rows = []
    for name, fn in _cases(dtype).items():
        err = fn()
        rows.append((name, err, err < tol))
    return rows
