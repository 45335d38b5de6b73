"""Blur-downsample-noise degradation and training-triple construction.

``X_LR = (X_HR * k) decimated by r, plus n``. Kernels are evaluated on an
integer grid centred on the middle cell; ``x`` runs along columns and ``y``
along rows.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from .substrate import DimensionError, ParameterError, Rng

KERNEL_SIZE = 21
SIGMA_RANGE = (0.2, 4.0)
NOISE_MAX = 25.0
MODES = ("isotropic_noisefree", "anisotropic_noisy")


@dataclass(frozen=True)
class BlurKernel:
    grid: torch.Tensor  # (1, size, size), float64

    @property
    def size(self) -> int:
        return self.grid.shape[-1]


@dataclass(frozen=True)
class DegradationSpec:
    kind: str = "isotropic"
    sigma: float = 0.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    theta_rot: float = 0.0
    noise_level: float = 0.0
    scale_r: int = 4

    def __post_init__(self):
        if self.kind not in ("isotropic", "anisotropic"):
            raise ParameterError(f"unknown degradation kind {self.kind!r}")
        if self.kind == "isotropic" and not 0.0 <= self.sigma <= SIGMA_RANGE[1]:
            raise ParameterError(f"sigma {self.sigma} outside [0, {SIGMA_RANGE[1]}]")
        if self.kind == "anisotropic":
            for lam in (self.lambda1, self.lambda2):
                if not 0.0 < lam <= SIGMA_RANGE[1]:
                    raise ParameterError(f"eigen-width {lam} outside (0, {SIGMA_RANGE[1]}]")
            if not 0.0 <= self.theta_rot < math.pi:
                raise ParameterError(f"theta_rot {self.theta_rot} outside [0, pi)")
        if not 0.0 <= self.noise_level <= NOISE_MAX:
            raise ParameterError(f"noise_level {self.noise_level} outside [0, {NOISE_MAX}]")
        if self.scale_r < 1:
            raise ParameterError(f"scale_r must be positive, got {self.scale_r}")

    def kernel(self, size: int = KERNEL_SIZE) -> BlurKernel:
        if self.kind == "isotropic":
            return make_iso_kernel(self.sigma, size)
        return make_aniso_kernel(self.lambda1, self.lambda2, self.theta_rot, size)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "DegradationSpec":
        types = {"kind": str, "scale_r": int}
        values = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key in cls.__dataclass_fields__:
                values[key] = types.get(key, float)(val)
        return cls(**values)


@dataclass
class TrainingTriple:
    x_lr: torch.Tensor
    x_lr_pos: torch.Tensor
    x_hr: torch.Tensor


def _grid(size: int) -> tuple[torch.Tensor, torch.Tensor]:
    if size < 1 or size % 2 == 0:
        raise ParameterError(f"kernel size must be odd and positive, got {size}")
    ax = torch.arange(size, dtype=torch.float64) - size // 2
    yy, xx = torch.meshgrid(ax, ax, indexing="ij")
    return xx, yy


def make_iso_kernel(sigma: float, size: int = KERNEL_SIZE) -> BlurKernel:
    xx, yy = _grid(size)
    if sigma < 0:
        raise ParameterError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        k = ((xx == 0) & (yy == 0)).double()
    else:
        k = torch.exp(-(xx**2 + yy**2) / (2.0 * sigma * sigma))
    return BlurKernel((k / k.sum()).unsqueeze(0))


def make_aniso_kernel(lambda1: float, lambda2: float, theta_rot: float, size: int = KERNEL_SIZE) -> BlurKernel:
    """Gaussian with covariance ``R(theta) diag(l1^2, l2^2) R(theta)^T``."""
    if lambda1 <= 0 or lambda2 <= 0:
        raise ParameterError(f"eigen-widths must be positive, got {lambda1}, {lambda2}")
    xx, yy = _grid(size)
    c, s = math.cos(theta_rot), math.sin(theta_rot)
    rot = torch.tensor([[c, -s], [s, c]], dtype=torch.float64)
    cov = rot @ torch.diag(torch.tensor([lambda1**2, lambda2**2], dtype=torch.float64)) @ rot.T
    inv = torch.linalg.inv(cov)
    quad = inv[0, 0] * xx**2 + 2.0 * inv[0, 1] * xx * yy + inv[1, 1] * yy**2
    k = torch.exp(-0.5 * quad)
    return BlurKernel((k / k.sum()).unsqueeze(0))


def _reflect_index(n: int, pad: int) -> torch.Tensor:
    idx = torch.arange(-pad, n + pad)
    if n == 1:
        return torch.zeros_like(idx)
    period = 2 * (n - 1)
    m = idx.remainder(period)
    return torch.where(m >= n, period - m, m)


def blur(x: torch.Tensor, kernel: BlurKernel) -> torch.Tensor:
    """Same-size convolution, one kernel shared by all channels, reflective border."""
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    c = x.shape[1]
    pad = kernel.size // 2
    x = x[:, :, _reflect_index(x.shape[2], pad)][:, :, :, _reflect_index(x.shape[3], pad)]
    # centred Gaussians are point-symmetric, so correlation equals convolution
    w = kernel.grid.to(x.dtype).expand(c, 1, kernel.size, kernel.size)
    out = F.conv2d(x, w, groups=c)
    return out.squeeze(0) if squeeze else out


def degrade(
    x_hr: torch.Tensor,
    spec: DegradationSpec,
    rng: Rng | None = None,
    downsample: str = "decimate",
) -> torch.Tensor:
    """Blur, downsample by ``spec.scale_r`` and add Gaussian noise.

    Noise level is on the 0-255 scale, so its internal standard deviation is
    ``noise_level * 2 / 255``.
    """
    r = spec.scale_r
    h, w = x_hr.shape[-2:]
    if h % r or w % r:
        raise DimensionError(f"HR size {h}x{w} not divisible by scale {r}")
    y = blur(x_hr, spec.kernel())
    if downsample == "decimate":
        y = y[..., ::r, ::r]
    elif downsample == "bicubic":
        batched = y if y.dim() == 4 else y.unsqueeze(0)
        y = F.interpolate(batched, size=(h // r, w // r), mode="bicubic", align_corners=False, antialias=True)
        y = y if x_hr.dim() == 4 else y.squeeze(0)
    else:
        raise ParameterError(f"unknown downsample mode {downsample!r}")
    if spec.noise_level > 0:
        if rng is None:
            raise ParameterError("noisy degradation needs an Rng")
        y = y + rng.normal(*y.shape, dtype=y.dtype) * (spec.noise_level * 2.0 / 255.0)
    return y.contiguous()


def sample_spec(rng: Rng, mode: str, scale_r: int = 4) -> DegradationSpec:
    lo, hi = SIGMA_RANGE
    if mode == "isotropic_noisefree":
        return DegradationSpec("isotropic", sigma=rng.uniform(lo, hi), scale_r=scale_r)
    if mode == "anisotropic_noisy":
        l1, l2 = rng.uniform(lo, hi), rng.uniform(lo, hi)
        theta = rng.uniform(0.0, math.pi)
        if theta >= math.pi:  # guard against fp rounding at the open end
            theta = 0.0
        noise = rng.uniform(0.0, NOISE_MAX)
        return DegradationSpec("anisotropic", lambda1=l1, lambda2=l2, theta_rot=theta,
                               noise_level=noise, scale_r=scale_r)
    raise ParameterError(f"unknown degradation mode {mode!r}; expected one of {MODES}")


def make_triple(
    x_hr_full: torch.Tensor,
    spec: DegradationSpec,
    lr_patch: int = 64,
    rng: Rng | None = None,
    downsample: str = "decimate",
) -> TrainingTriple:
    """Degrade once, then crop query and positive LR patches plus the aligned HR patch."""
    if rng is None:
        raise ParameterError("make_triple needs an Rng")
    r = spec.scale_r
    h, w = x_hr_full.shape[-2:]
    h, w = h - h % r, w - w % r
    x_hr_full = x_hr_full[..., :h, :w]
    lh, lw = h // r, w // r
    if lh < lr_patch or lw < lr_patch:
        raise DimensionError(f"degraded image {lh}x{lw} smaller than patch {lr_patch}")
    lr = degrade(x_hr_full, spec, rng, downsample)
    y, x = rng.integers(0, lh - lr_patch + 1), rng.integers(0, lw - lr_patch + 1)
    yp, xp = rng.integers(0, lh - lr_patch + 1), rng.integers(0, lw - lr_patch + 1)
    return TrainingTriple(
        x_lr=lr[..., y:y + lr_patch, x:x + lr_patch].clone(),
        x_lr_pos=lr[..., yp:yp + lr_patch, xp:xp + lr_patch].clone(),
        x_hr=x_hr_full[..., r * y:r * (y + lr_patch), r * x:r * (x + lr_patch)].clone(),
    )


def augment(triple: TrainingTriple, rng: Rng) -> TrainingTriple:
    """Random flips and 90-degree rotation applied identically to all three patches."""
    hflip, vflip, rot = (rng.integers(0, 2) for _ in range(3))

    def f(t):
        if hflip:
            t = t.flip(-1)
        if vflip:
            t = t.flip(-2)
        if rot:
            t = t.transpose(-1, -2)
        return t.contiguous()

    return TrainingTriple(f(triple.x_lr), f(triple.x_lr_pos), f(triple.x_hr))
