"""Timestep-aware structural pruning for small diffusion models, on a NumPy autodiff core."""

from .diffusion import (
    LossProfile, NoiseSchedule, amplification_factor, ddim_sample, ddpm_sample, estimate_loss_profile,
    make_linear_schedule, q_sample, timestep_loss,
)
from .importance import ImportanceScore, PruneConfig, PruningError, compute_scores, select_groups, threshold_timesteps
from .kernels import BACKEND
from .metrics import SsimConfig, consistency_eval, mmd_2d, ssim
from .models import MlpDenoiser, TinyUnet, build_model, mlp_arch, unet_arch
from .structure import apply_mask, groups_for, slice_model
from .tensor import Tape, Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ImportanceScore", "LossProfile", "MlpDenoiser", "NoiseSchedule", "PruneConfig", "PruningError",
    "SsimConfig", "Tape", "Tensor", "TinyUnet", "amplification_factor", "apply_mask", "build_model",
    "compute_scores", "consistency_eval", "ddim_sample", "ddpm_sample", "estimate_loss_profile", "groups_for",
    "make_linear_schedule", "mlp_arch", "mmd_2d", "no_grad", "q_sample", "select_groups", "slice_model", "ssim",
    "threshold_timesteps", "timestep_loss", "unet_arch",
]
