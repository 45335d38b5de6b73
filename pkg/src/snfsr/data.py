"""HR image sources: a PNG directory with an optional split manifest, or procedural images."""
from __future__ import annotations

import math
from pathlib import Path

import torch
import torch.nn.functional as F

from .substrate import Rng, read_image


def read_manifest(path: str | Path) -> list[str]:
    """One relative path per line; blank lines and ``#`` comments ignored."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.split("#", 1)[0].strip() for ln in lines if ln.split("#", 1)[0].strip()]


def list_images(root: str | Path, manifest: str | Path | None = None) -> list[Path]:
    root = Path(root)
    if manifest is not None:
        return [root / rel for rel in read_manifest(manifest)]
    return sorted(p for p in root.iterdir() if p.suffix.lower() == ".png")


def load_images(root: str | Path, manifest: str | Path | None = None) -> list[torch.Tensor]:
    paths = list_images(root, manifest)
    if not paths:
        raise FileNotFoundError(f"no PNG images found under {root}")
    return [read_image(p) for p in paths]


def synthetic_image(rng: Rng, size: int = 64) -> torch.Tensor:
    """Procedural texture in [-1, 1]: oriented gratings plus a few hard-edged shapes.

    Stands in for aerial imagery in tests and demos; has both fine periodic
    detail and sharp edges, which blur and decimation destroy.
    """
    ax = torch.arange(size, dtype=torch.float32)
    yy, xx = torch.meshgrid(ax, ax, indexing="ij")
    img = torch.zeros(3, size, size)
    for _ in range(3):
        theta = rng.uniform(0.0, math.pi)
        freq = rng.uniform(0.08, 0.45)
        phase = rng.uniform(0.0, 2 * math.pi)
        color = rng.uniform(-1.0, 1.0, size=3).float()
        wave = torch.sin(freq * (math.cos(theta) * xx + math.sin(theta) * yy) + phase)
        img += 0.25 * color.view(3, 1, 1) * wave
    for _ in range(4):
        color = rng.uniform(-0.8, 0.8, size=3).float().view(3, 1, 1)
        cy, cx = rng.uniform(0, size), rng.uniform(0, size)
        rad = rng.uniform(size / 12, size / 4)
        if rng.integers(0, 2):
            mask = ((yy - cy) ** 2 + (xx - cx) ** 2) < rad**2
        else:
            mask = ((yy - cy).abs() < rad) & ((xx - cx).abs() < rad * 0.6)
        img = torch.where(mask, 0.5 * img + color, img)
    return img.clamp(-1.0, 1.0)


def resize(x: torch.Tensor, size: tuple[int, int], mode: str = "bicubic") -> torch.Tensor:
    batched = x if x.dim() == 4 else x.unsqueeze(0)
    kw = {} if mode == "nearest" else {"align_corners": False}
    out = F.interpolate(batched, size=size, mode=mode, **kw)
    return out if x.dim() == 4 else out.squeeze(0)


def bicubic_upscale(x_lr: torch.Tensor, r: int) -> torch.Tensor:
    """Plain bicubic interpolation baseline."""
    h, w = x_lr.shape[-2:]
    return resize(x_lr, (h * r, w * r), "bicubic")
