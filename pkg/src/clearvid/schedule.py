"""Diffusion schedule and the forward/reverse-step algebra.

Schedule arrays are precomputed in float64 (cumulative products at T=1000
drift visibly in float32) and indexed by timestep t in [1, T]; alpha_bar(0)
is defined as 1 so the terminal reverse step returns the clean estimate.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import torch

from .errors import ParameterError, ShapeError
from .noise import NoiseClip
from .seeding import torch_generator


@dataclass
class LatentClip:
    """Frames of x_t at some timestep t; t = 0 means a fully denoised estimate."""

    frames: torch.Tensor
    t: int = 0


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    beta_start: float
    beta_end: float
    betas: np.ndarray        # [T], betas[t-1] = beta_t
    alphas: np.ndarray       # 1 - beta
    alpha_bars: np.ndarray   # cumulative product of alphas
    sigmas: np.ndarray       # posterior std, sigmas[t-1] = sigma_t
    ddim_steps: tuple        # strictly increasing, last element T

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def sigma(self, t: int) -> float:
        self._check_t(t)
        return float(self.sigmas[t - 1])

    def _check_t(self, t: int):
        if not 1 <= t <= self.T:
            raise ParameterError(f"timestep {t} outside [1, {self.T}]")

    def ddim_pairs(self):
        """(t, t_prev) pairs for the reverse loop, descending, ending at t_prev=0."""
        steps = list(self.ddim_steps)
        prevs = [0] + steps[:-1]
        return list(zip(reversed(steps), reversed(prevs)))


def make_ddim_timesteps(T: int, n_steps: int) -> list:
    """Uniform-stride subsequence of [1..T] with n_steps elements ending at T."""
    if not 1 <= n_steps <= T:
        raise ParameterError(f"n_steps must be in [1, {T}], got {n_steps}")
    stride = T // n_steps
    return [T - (n_steps - 1 - i) * stride for i in range(n_steps)]


def make_linear_schedule(
    T: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    n_ddim_steps: Optional[int] = None,
) -> DiffusionSchedule:
    """Linearly increasing betas from beta_start to beta_end over T steps."""
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    if not (0 < beta_start <= beta_end < 1):
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    alpha_bars_prev = np.concatenate(([1.0], alpha_bars[:-1]))
    sigmas = np.sqrt((1.0 - alpha_bars_prev) / (1.0 - alpha_bars) * betas)
    ddim = make_ddim_timesteps(T, n_ddim_steps) if n_ddim_steps else list(range(1, T + 1))
    sched = DiffusionSchedule(
        T=T,
        beta_start=float(beta_start),
        beta_end=float(beta_end),
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        sigmas=sigmas,
        ddim_steps=tuple(ddim),
    )
    _validate(sched)
    return sched


def _validate(s: DiffusionSchedule):
    if not (np.all(s.betas > 0) and np.all(s.betas < 1) and np.all(np.diff(s.betas) >= 0)):
        raise ParameterError("betas must be nondecreasing within (0, 1)")
    if not (np.all(np.diff(s.alpha_bars) < 0) if s.T > 1 else True):
        raise ParameterError("alpha_bar must be strictly decreasing")
    if not (np.all(s.alpha_bars > 0) and np.all(s.alpha_bars < 1)):
        raise ParameterError("alpha_bar must lie in (0, 1)")
    steps = s.ddim_steps
    if steps[-1] != s.T or steps[0] < 1 or any(b <= a for a, b in zip(steps, steps[1:])):
        raise ParameterError("ddim_steps must be strictly increasing in [1, T] ending at T")


def with_ddim_steps(sched: DiffusionSchedule, n_steps: int) -> DiffusionSchedule:
    return replace(sched, ddim_steps=tuple(make_ddim_timesteps(sched.T, n_steps)))


# tensor-level cores, shared by the typed ops and the batched training path

def q_sample_frames(x0: torch.Tensor, t: int, eps: torch.Tensor, sched: DiffusionSchedule) -> torch.Tensor:
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}")
    sched._check_t(t)
    ab = sched.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def ddim_step_frames(
    x_t: torch.Tensor, eps_pred: torch.Tensor, t: int, t_prev: int, sched: DiffusionSchedule
) -> torch.Tensor:
    if x_t.shape != eps_pred.shape:
        raise ShapeError(f"x_t shape {tuple(x_t.shape)} != eps shape {tuple(eps_pred.shape)}")
    if t_prev >= t:
        raise ParameterError(f"t_prev ({t_prev}) must be < t ({t})")
    sched._check_t(t)
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t_prev)
    x0_hat = (x_t - math.sqrt(1.0 - ab_t) * eps_pred) / math.sqrt(ab_t)
    if t_prev == 0:
        return x0_hat
    return math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * eps_pred


def q_sample(x0: LatentClip, t: int, eps: NoiseClip, sched: DiffusionSchedule) -> LatentClip:
    """Closed-form forward noising: sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    return LatentClip(frames=q_sample_frames(x0.frames, t, eps.frames, sched), t=t)


def ddim_step(
    x_t: LatentClip, eps_pred: NoiseClip, t: int, t_prev: int, sched: DiffusionSchedule
) -> LatentClip:
    """Deterministic (eta = 0) reverse jump from t to t_prev.

    Inverts q_sample to the clean estimate, then re-noises at t_prev; with
    t_prev = 0 the clean estimate itself is returned.
    """
    return LatentClip(
        frames=ddim_step_frames(x_t.frames, eps_pred.frames, t, t_prev, sched), t=t_prev
    )


def ddpm_step(
    x_t: LatentClip, eps_pred: NoiseClip, t: int, sched: DiffusionSchedule, seed: int
) -> LatentClip:
    """Stochastic ancestral reverse step: posterior mean plus sigma_t z (z = 0 at t = 1)."""
    sched._check_t(t)
    if x_t.frames.shape != eps_pred.frames.shape:
        raise ShapeError("x_t and eps_pred shapes differ")
    beta = sched.beta(t)
    ab = sched.alpha_bar(t)
    mu = (x_t.frames - beta / math.sqrt(1.0 - ab) * eps_pred.frames) / math.sqrt(sched.alpha(t))
    if t == 1:
        return LatentClip(frames=mu, t=0)
    z = torch.randn(
        x_t.frames.shape, generator=torch_generator(seed), dtype=x_t.frames.dtype
    )
    return LatentClip(frames=mu + sched.sigma(t) * z, t=t - 1)
