"""Noise-schedule arithmetic for the forward process and the strided reverse path.

Arrays are 1-indexed in spirit: ``beta[t - 1]`` is the variance of step ``t``.
``alpha_bar_at(0)`` is 1 by convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .substrate import DimensionError, ParameterError


@dataclass(frozen=True)
class DiffusionSchedule:
    beta: torch.Tensor  # float64, length T
    alpha: torch.Tensor
    alpha_bar: torch.Tensor

    @property
    def T(self) -> int:
        return self.beta.numel()

    def alpha_bar_at(self, t: int) -> float:
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def beta_at(self, t: int) -> float:
        return float(self.beta[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ParameterError(f"timestep {t} outside [1, {self.T}]")


@dataclass(frozen=True)
class SamplingPath:
    gamma: int
    tau: tuple[int, ...]
    eta: float
    sigma_tau: tuple[float, ...]  # sigma_tau[i] pairs with tau[i]; index 0 unused

    @property
    def M(self) -> int:
        return len(self.tau) - 1


def schedule_from_betas(beta) -> DiffusionSchedule:
    beta = torch.as_tensor(beta, dtype=torch.float64).reshape(-1)
    if beta.numel() < 1 or not bool(((beta > 0) & (beta < 1)).all()):
        raise ParameterError("every beta must lie in (0, 1)")
    alpha = 1.0 - beta
    return DiffusionSchedule(beta, alpha, torch.cumprod(alpha, 0))


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> DiffusionSchedule:
    """Linear beta ramp from ``beta_start`` (t=1) to ``beta_end`` (t=T)."""
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    for b in (beta_start, beta_end):
        if not 0.0 < b < 1.0:
            raise ParameterError(f"beta endpoint {b} outside (0, 1)")
    if T == 1:
        return schedule_from_betas([beta_start])
    return schedule_from_betas(torch.linspace(beta_start, beta_end, T, dtype=torch.float64))


def forward_step(x_prev: torch.Tensor, t: int, eps: torch.Tensor, sched: DiffusionSchedule) -> torch.Tensor:
    sched._check_t(t)
    if eps.shape != x_prev.shape:
        raise DimensionError("eps must match x_prev in shape")
    b = sched.beta_at(t)
    return math.sqrt(1.0 - b) * x_prev + math.sqrt(b) * eps


def forward_marginal(x0: torch.Tensor, t, eps: torch.Tensor, sched: DiffusionSchedule) -> torch.Tensor:
    """Closed-form ``X_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``.

    ``t`` may be an int or a per-sample integer tensor for batched ``x0``.
    """
    if isinstance(t, torch.Tensor) and t.numel() > 1:
        if int(t.min()) < 1 or int(t.max()) > sched.T:
            raise ParameterError(f"timesteps outside [1, {sched.T}]")
        ab = sched.alpha_bar[t.long() - 1].to(x0.dtype).view(-1, *([1] * (x0.dim() - 1)))
        return ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps
    t = int(t)
    sched._check_t(t)
    ab = sched.alpha_bar_at(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def make_path(sched: DiffusionSchedule, gamma: int, eta: float = 1.0) -> SamplingPath:
    if gamma < 1 or sched.T % gamma:
        raise ParameterError(f"gamma {gamma} must divide T={sched.T}")
    if eta < 0:
        raise ParameterError(f"eta must be non-negative, got {eta}")
    tau = tuple(range(0, sched.T + 1, gamma))
    sigma = [0.0]
    for i in range(1, len(tau)):
        ab_prev, ab = sched.alpha_bar_at(tau[i - 1]), sched.alpha_bar_at(tau[i])
        sigma.append(eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab) * sched.beta_at(tau[i])))
    return SamplingPath(gamma, tau, float(eta), tuple(sigma))


def posterior_variance(sched: DiffusionSchedule, t: int) -> float:
    """One-step DDPM posterior variance ``(1 - abar_{t-1}) / (1 - abar_t) * beta_t``."""
    sched._check_t(t)
    return (1.0 - sched.alpha_bar_at(t - 1)) / (1.0 - sched.alpha_bar_at(t)) * sched.beta_at(t)
