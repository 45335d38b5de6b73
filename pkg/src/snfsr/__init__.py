"""Blind super-resolution with a conditional denoising diffusion model.

Degradation simulation, a contrastive degradation representation, an LR
content encoder, a conditional denoising U-Net, joint training and strided
reverse-diffusion sampling.
"""
from .degradation import DegradationSpec, degrade, make_aniso_kernel, make_iso_kernel, make_triple, sample_spec
from .model import SNFModel
from .sampler import SampleRequest, sample
from .schedule import forward_marginal, forward_step, make_path, make_schedule
from .substrate import Rng, grad_check, pixel_fold, pixel_shuffle, psnr

__version__ = "0.1.0"
