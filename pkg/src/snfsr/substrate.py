"""Numeric foundation shared by every other module.

Tensors are plain ``torch.Tensor`` objects; autograd provides the reverse-mode
differentiation the training loop relies on. Images live in ``[-1, 1]``
internally and in ``[0, 255]`` on disk.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from PIL import Image

PSNR_CAP = 100.0
INTERNAL_PEAK = 2.0


class DimensionError(ValueError):
    """Raised when tensor shapes violate an operation's precondition."""


class ParameterError(ValueError):
    """Raised for out-of-range scalar parameters."""


class ContractError(RuntimeError):
    """Raised when a caller-supplied function breaks its contract."""


class Rng:
    """Seeded random stream, single owner.

    Wraps a ``torch.Generator`` so every draw in the package (noise, timesteps,
    crop offsets, degradation parameters) is reproducible from one seed.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = torch.Generator()
        self.generator.manual_seed(self.seed & 0xFFFF_FFFF_FFFF_FFFF)

    def normal(self, *shape: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return torch.randn(*shape, generator=self.generator, dtype=dtype)

    def uniform(self, low: float = 0.0, high: float = 1.0, size: int | None = None):
        u = torch.rand(size or 1, generator=self.generator, dtype=torch.float64)
        u = low + (high - low) * u
        return float(u[0]) if size is None else u

    def integers(self, low: int, high: int, size: int | None = None):
        """Uniform integers in ``[low, high)``."""
        r = torch.randint(low, high, (size or 1,), generator=self.generator)
        return int(r[0]) if size is None else r

    def spawn(self) -> "Rng":
        """Independent child stream, derived deterministically from this one."""
        return Rng(int(torch.randint(0, 2**62, (1,), generator=self.generator)[0]))

    def get_state(self) -> torch.Tensor:
        return self.generator.get_state()

    def set_state(self, state: torch.Tensor) -> None:
        self.generator.set_state(state)


def pixel_fold(x: torch.Tensor, factor: int = 2) -> torch.Tensor:
    """Space-to-channel rearrangement (inverse of :func:`pixel_shuffle`).

    Block element ``(r, c)`` of input channel ``k`` lands in output channel
    ``k * factor**2 + r * factor + c``. Accepts ``(C, H, W)`` or ``(N, C, H, W)``.
    """
    *lead, c, h, w = x.shape
    if h % factor or w % factor:
        raise DimensionError(f"pixel_fold needs H, W divisible by {factor}, got {h}x{w}")
    x = x.reshape(*lead, c, h // factor, factor, w // factor, factor)
    n = len(lead)
    x = x.permute(*range(n), n, n + 2, n + 4, n + 1, n + 3)
    return x.reshape(*lead, c * factor * factor, h // factor, w // factor)


def pixel_shuffle(x: torch.Tensor, factor: int = 2) -> torch.Tensor:
    """Channel-to-space rearrangement, exact inverse of :func:`pixel_fold`."""
    *lead, c, h, w = x.shape
    if c % (factor * factor):
        raise DimensionError(f"pixel_shuffle needs channels divisible by {factor * factor}, got {c}")
    oc = c // (factor * factor)
    x = x.reshape(*lead, oc, factor, factor, h, w)
    n = len(lead)
    x = x.permute(*range(n), n, n + 3, n + 1, n + 4, n + 2)
    return x.reshape(*lead, oc, h * factor, w * factor)


def psnr(a: torch.Tensor, b: torch.Tensor, peak: float = INTERNAL_PEAK) -> float:
    if a.shape != b.shape:
        raise DimensionError(f"psnr shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = torch.mean((a.double() - b.double()) ** 2).item()
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def grad_check(
    f: Callable[[torch.Tensor], torch.Tensor],
    x: torch.Tensor,
    step: float = 1e-3,
) -> float:
    """Max relative error between autograd and central differences.

    Error per coordinate is ``|analytic - numeric| / (|numeric| + 1e-8)``.
    Runs in the dtype of ``x``; pass float64 inputs (and parameters) for tight checks.
    """
    x = x.detach().clone().requires_grad_(True)
    out = f(x)
    if out.numel() != 1:
        raise ContractError(f"grad_check needs a scalar function, got shape {tuple(out.shape)}")
    (analytic,) = torch.autograd.grad(out.reshape(()), x)
    analytic = analytic.detach().reshape(-1)

    flat = x.detach().clone().reshape(-1)
    numeric = torch.empty_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            fp = f(flat.reshape(x.shape)).item()
            flat[i] = orig - step
            fm = f(flat.reshape(x.shape)).item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * step)
    err = (analytic - numeric).abs() / (numeric.abs() + 1e-8)
    return float(err.max())


def to_internal(arr: np.ndarray) -> torch.Tensor:
    """uint8 ``(H, W, 3)`` array to a float32 ``(3, H, W)`` tensor in [-1, 1]."""
    t = torch.from_numpy(np.array(arr, dtype=np.uint8, copy=True)).permute(2, 0, 1).float()
    return t / 127.5 - 1.0


def to_uint8(x: torch.Tensor) -> np.ndarray:
    """``(3, H, W)`` tensor in [-1, 1] to a uint8 ``(H, W, 3)`` array (clamped)."""
    x = ((x.detach().float().clamp(-1.0, 1.0) + 1.0) * 127.5).round()
    return x.to(torch.uint8).permute(1, 2, 0).cpu().numpy()


def read_image(path: str | Path) -> torch.Tensor:
    img = Image.open(path)
    if img.mode != "RGB":
        img = img.convert("L").convert("RGB") if img.mode in ("L", "LA", "I", "I;16") else img.convert("RGB")
    return to_internal(np.asarray(img))


def write_image(x: torch.Tensor, path: str | Path) -> None:
    """Write a PNG atomically (temp file then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(to_uint8(x)).save(tmp, format="PNG")
    tmp.replace(path)
