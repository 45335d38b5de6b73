"""Strided reverse diffusion: LR image in, SR sample out.

The conditioning (LR encoding ``u`` and degradation vector ``v``) is computed
once per request; the denoiser then runs exactly ``M = T / gamma`` times.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import torch

from .schedule import DiffusionSchedule, SamplingPath, make_path
from .substrate import DimensionError, Rng, write_image


class ScheduleConsistencyError(ArithmeticError):
    pass


@dataclass
class SampleRequest:
    x_lr: torch.Tensor
    path: SamplingPath
    seed: int = 0
    eta: float | None = None


def predicted_noise(x_tau: torch.Tensor, x0_hat: torch.Tensor, alpha_bar: float) -> torch.Tensor:
    return (x_tau - math.sqrt(alpha_bar) * x0_hat) / math.sqrt(1.0 - alpha_bar)


def ddim_step(x_tau_i, i, u, v, path: SamplingPath, sched: DiffusionSchedule, rng: Rng, denoise):
    """Move from ``tau_i`` to ``tau_{i-1}`` (requires ``i >= 2``)."""
    if i < 2:
        raise ValueError("ddim_step handles i >= 2; the last step is a pure prediction")
    t, t_prev = path.tau[i], path.tau[i - 1]
    ab, ab_prev = sched.alpha_bar_at(t), sched.alpha_bar_at(t_prev)
    sigma = path.sigma_tau[i]
    x0_hat = denoise(x_tau_i, t, u, v)
    eps_hat = predicted_noise(x_tau_i, x0_hat, ab)
    dir_var = 1.0 - ab_prev - sigma * sigma
    if dir_var < -1e-12:
        raise ScheduleConsistencyError(f"negative direction variance {dir_var} at tau={t}")
    out = math.sqrt(ab_prev) * x0_hat + math.sqrt(max(dir_var, 0.0)) * eps_hat
    if sigma > 0:
        out = out + sigma * rng.normal(*x_tau_i.shape, dtype=x_tau_i.dtype)
    return out


def sample(model, req: SampleRequest, sched: DiffusionSchedule, dump_dir: str | Path | None = None) -> torch.Tensor:
    """Generate an SR image for ``req.x_lr``; output is unclamped.

    ``model`` needs ``encode_lr``, ``encode_degradation``, ``denoise`` and ``scale_r``.
    """
    path = req.path
    if req.eta is not None and req.eta != path.eta:
        path = make_path(sched, path.gamma, req.eta)
    if path.tau[-1] != sched.T:
        raise ValueError(f"sampling path ends at {path.tau[-1]}, schedule has T={sched.T}")
    x_lr = req.x_lr if req.x_lr.dim() == 4 else req.x_lr.unsqueeze(0)
    r = model.scale_r
    H, W = x_lr.shape[-2] * r, x_lr.shape[-1] * r
    mult = getattr(model, "hr_multiple", 1)
    if H % mult or W % mult:
        raise DimensionError(f"SR output {H}x{W} must be divisible by {mult}")

    if hasattr(model, "eval"):
        model.eval()
    rng = Rng(req.seed)
    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        u = model.encode_lr(x_lr)
        v = model.encode_degradation(x_lr)
        x = rng.normal(x_lr.shape[0], x_lr.shape[1], H, W)
        for i in range(path.M, 1, -1):
            if dump_dir is not None:
                write_image(x[0], dump_dir / f"tau_{path.tau[i]:05d}.png")
            x = ddim_step(x, i, u, v, path, sched, rng, model.denoise)
        if dump_dir is not None:
            write_image(x[0], dump_dir / f"tau_{path.tau[1]:05d}.png")
        out = model.denoise(x, path.tau[1], u, v)
    return out if req.x_lr.dim() == 4 else out.squeeze(0)
