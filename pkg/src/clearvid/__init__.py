"""clearvid: all-in-one video adverse-weather removal.

Conditional video diffusion trained under a temporally correlated noise
model, restored by deterministic DDIM sampling with optional online
test-time adaptation of the denoiser inside the reverse loop.
"""

__version__ = "0.1.0"

from .noise import ARMAParams, NoiseClip, sample_iid, sample_temporal
from .schedule import DiffusionSchedule, make_linear_schedule, make_ddim_timesteps
from .denoiser import DenoiserConfig, ModelWeights, init_weights
from .data import DegradationSpec, FrameSequence, VideoClip
from .train import TrainConfig, run_training, save_checkpoint, load_checkpoint
from .tta import TTAConfig, restore_stream
from .metrics import psnr, ssim, evaluate_corpus

__all__ = [
    "ARMAParams",
    "NoiseClip",
    "sample_iid",
    "sample_temporal",
    "DiffusionSchedule",
    "make_linear_schedule",
    "make_ddim_timesteps",
    "DenoiserConfig",
    "ModelWeights",
    "init_weights",
    "DegradationSpec",
    "FrameSequence",
    "VideoClip",
    "TrainConfig",
    "run_training",
    "save_checkpoint",
    "load_checkpoint",
    "TTAConfig",
    "restore_stream",
    "psnr",
    "ssim",
    "evaluate_corpus",
]
