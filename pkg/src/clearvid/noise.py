"""Temporally correlated noise for video diffusion.

Instead of drawing an independent Gaussian map per frame, a clip's noise is
built by an ARMA(1,1)-style recurrence over frames: a forward sweep mixes each
frame's fresh draw with the previous frame's value and error terms, a backward
sweep does the same with the next frame's, and each frame is then standardized.
Adjacent frames of the result are strongly positively correlated while the
per-frame marginals stay (0, 1).
"""

from dataclasses import dataclass, replace
from typing import Optional

import torch

from .errors import (
    DegenerateDataError,
    InsufficientFramesError,
    ParameterError,
    ShapeError,
)
from .seeding import torch_generator

_STD_EPS = 1e-12


@dataclass(frozen=True)
class ARMAParams:
    """Coefficients of the frame recurrence.

    phi weighs the neighbouring frame's value term, tau the neighbouring
    frame's error term; the current frame's fresh draw gets weight
    1 - phi - tau, which must stay positive for a convex combination.
    Order is fixed at (1, 1) and the constant term at zero.
    """

    phi: float = 0.6
    tau: float = 0.3

    def __post_init__(self):
        if self.phi < 0 or self.tau < 0:
            raise ParameterError(f"phi and tau must be >= 0, got ({self.phi}, {self.tau})")
        if self.phi + self.tau >= 1.0:
            raise ParameterError(
                f"phi + tau must be < 1 for a convex combination, got {self.phi + self.tau}"
            )


@dataclass
class NoiseClip:
    """Per-clip noise, one map per frame, shape [n_frames, C, H, W]."""

    frames: torch.Tensor
    arma: Optional[ARMAParams] = None
    seed: Optional[int] = None

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def _check_shape(shape) -> tuple:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise ShapeError(f"noise shape must be [n_frames, C, H, W], got {shape}")
    if any(s <= 0 for s in shape):
        raise ShapeError(f"all dimensions must be positive, got {shape}")
    return shape


def sample_iid(shape, seed: int) -> NoiseClip:
    """Independent standard-normal noise; frames drawn in order from one generator."""
    shape = _check_shape(shape)
    gen = torch_generator(seed)
    frames = torch.empty(shape, dtype=torch.float32)
    for i in range(shape[0]):
        frames[i] = torch.randn(shape[1:], generator=gen)
    return NoiseClip(frames=frames, arma=None, seed=seed)


def sample_temporal(shape, arma: ARMAParams, seed: int) -> NoiseClip:
    """Frame-correlated noise clip.

    Draws per-frame value and error maps from N(0, I), runs the forward and
    backward recurrences sequentially (each pass reads the already-updated
    neighbour), then standardizes every frame.
    """
    shape = _check_shape(shape)
    if not isinstance(arma, ARMAParams):
        arma = ARMAParams(*arma)
    n_f = shape[0]
    gen = torch_generator(seed)

    eps_bar = torch.empty(shape, dtype=torch.float32)
    eps = torch.empty(shape, dtype=torch.float32)
    for i in range(n_f):
        eps_bar[i] = torch.randn(shape[1:], generator=gen)
        eps[i] = torch.randn(shape[1:], generator=gen)

    w = 1.0 - arma.phi - arma.tau
    for i in range(1, n_f):
        eps_bar[i] = w * eps[i] + arma.phi * eps_bar[i - 1] + arma.tau * eps[i - 1]
    for i in range(n_f - 2, -1, -1):
        eps_bar[i] = w * eps[i] + arma.phi * eps_bar[i + 1] + arma.tau * eps[i + 1]

    clip = NoiseClip(frames=eps_bar, arma=arma, seed=seed)
    return normalize_clip(clip)


def normalize_clip(clip: NoiseClip) -> NoiseClip:
    """Standardize each frame to sample mean 0 and sample std 1 over its elements.

    The map is affine per frame, so cross-frame correlation structure is
    preserved. A constant frame has no well-defined scale and is rejected.
    """
    frames = clip.frames
    if frames.numel() == 0:
        raise ShapeError("cannot normalize an empty clip")
    flat = frames.reshape(frames.shape[0], -1)
    mean = flat.mean(dim=1)
    std = flat.std(dim=1, unbiased=False)
    if bool((std < _STD_EPS).any()):
        bad = int((std < _STD_EPS).nonzero()[0, 0])
        raise DegenerateDataError(f"frame {bad} is constant (zero variance)")
    shape = (-1,) + (1,) * (frames.dim() - 1)
    out = (frames - mean.reshape(shape)) / std.reshape(shape)
    return replace(clip, frames=out)


@dataclass
class CorrelationStats:
    rho_adjacent: float
    per_frame_mean: list
    per_frame_std: list


def correlation_stats(clip: NoiseClip) -> CorrelationStats:
    """Mean adjacent-frame Pearson correlation plus per-frame moments."""
    frames = clip.frames
    if frames.shape[0] < 2:
        raise InsufficientFramesError(
            f"need at least 2 frames for adjacent correlation, got {frames.shape[0]}"
        )
    flat = frames.reshape(frames.shape[0], -1).double()
    mean = flat.mean(dim=1, keepdim=True)
    std = flat.std(dim=1, unbiased=False, keepdim=True)
    centered = flat - mean
    rhos = []
    for i in range(frames.shape[0] - 1):
        denom = std[i, 0] * std[i + 1, 0] * flat.shape[1]
        rhos.append(float((centered[i] * centered[i + 1]).sum() / denom))
    return CorrelationStats(
        rho_adjacent=float(sum(rhos) / len(rhos)),
        per_frame_mean=[float(m) for m in mean[:, 0]],
        per_frame_std=[float(s) for s in std[:, 0]],
    )
