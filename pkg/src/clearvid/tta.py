"""Online test-time adaptation inside the reverse diffusion loop.

A video stream is processed as overlapped clips. For each clip after the
first, spatio-temporal tubelets are cropped from the previous (degraded,
restored) pair; at every reverse timestep one gradient step on the
noise-estimation proxy loss recalibrates a per-clip copy of the weights
(the designated last layer stays frozen) before the DDIM update runs with
the adapted copy. Overlapped frames of consecutive clips are averaged.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import torch

from .data import FrameSequence, VideoClip, slice_clips
from .denoiser import ModelWeights
from .errors import AdaptationFaultError, InsufficientFramesError, ParameterError
from .noise import ARMAParams, sample_temporal
from .schedule import DiffusionSchedule, ddim_step_frames
from .seeding import derive_seed, numpy_generator
from .train import TrainConfig, lion_step, loss_ls_batch, OptimizerState


@dataclass
class TTAConfig:
    n_tubelets: int = 5
    tubelet_size: int = 32
    adapt_lr: float = 1e-4
    clip_stride: int = 3
    freeze_last_layer: bool = True
    accumulate_weights: bool = False
    use_lion: bool = False     # optimizer variant: sign-momentum instead of plain GD
    seed: int = 0

    def __post_init__(self):
        if self.n_tubelets < 1:
            raise ParameterError(f"n_tubelets must be >= 1, got {self.n_tubelets}")
        if self.clip_stride < 1:
            raise ParameterError(f"clip_stride must be >= 1, got {self.clip_stride}")


@dataclass
class TubeletPair:
    degraded: torch.Tensor    # [n, F, C, s, s]
    restored: torch.Tensor    # same shape, same crop origins
    positions: List[Tuple[int, int]]


def tubelet_crop(
    degraded_clip: VideoClip,
    restored_clip: VideoClip,
    n: int,
    size: int,
    seed: int,
) -> TubeletPair:
    """n random spatial windows, each spanning all frames of both clips."""
    if degraded_clip.frames.shape != restored_clip.frames.shape:
        raise ParameterError("degraded and restored clips must share one shape")
    h, w = degraded_clip.frames.shape[-2:]
    if size > min(h, w):
        raise ParameterError(f"tubelet size {size} exceeds frame size {h}x{w}")
    rng = numpy_generator(seed)
    positions = [
        (int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1)))
        for _ in range(n)
    ]
    deg = torch.stack(
        [degraded_clip.frames[:, :, y : y + size, x : x + size] for y, x in positions]
    )
    res = torch.stack(
        [restored_clip.frames[:, :, y : y + size, x : x + size] for y, x in positions]
    )
    return TubeletPair(degraded=deg, restored=res, positions=positions)


def tsc_adapt_step(
    weights_bar: ModelWeights,
    pair: TubeletPair,
    t: int,
    sched: DiffusionSchedule,
    arma: ARMAParams,
    lr: float,
    cfg: TTAConfig,
    seed: int,
    lion_state: Optional[OptimizerState] = None,
) -> Tuple[ModelWeights, float]:
    """One self-calibration step at reverse timestep t.

    Fresh temporal noise is drawn per tubelet; the proxy loss treats the
    restored tubelets as clean targets conditioned on the degraded ones. The
    update is plain gradient descent (optionally Lion) on everything except
    the frozen last layer.
    """
    n = pair.degraded.shape[0]
    eps = torch.stack(
        [
            sample_temporal(pair.degraded.shape[1:], arma, derive_seed(seed, "tubelet", i)).frames
            for i in range(n)
        ]
    )
    weights_bar.network.zero_grad(set_to_none=True)
    t_vec = torch.full((n,), t, dtype=torch.long)
    loss = loss_ls_batch(weights_bar, pair.restored, pair.degraded, t_vec, eps, sched)
    if not torch.isfinite(loss):
        raise AdaptationFaultError(f"non-finite adaptation loss at t={t}")
    loss.backward()

    frozen = set(weights_bar.last_layer_names) if cfg.freeze_last_layer else set()
    if cfg.use_lion:
        grads = {
            name: p.grad
            for name, p in weights_bar.named_parameters()
            if p.grad is not None and name not in frozen
        }
        train_cfg = TrainConfig(weight_decay=0.0)
        lion_step(weights_bar, grads, lion_state, lr, train_cfg)
    else:
        with torch.no_grad():
            for name, p in weights_bar.named_parameters():
                if p.grad is None or name in frozen:
                    continue
                if not torch.isfinite(p.grad).all():
                    raise AdaptationFaultError(f"non-finite gradient for {name} at t={t}")
                if lr != 0.0:   # keep lr=0 bit-exact, not just numerically inert
                    p.add_(p.grad, alpha=-lr)
    weights_bar.network.zero_grad(set_to_none=True)
    return weights_bar, float(loss.detach())


def _ddim_restore(
    latent: torch.Tensor,
    condition: torch.Tensor,
    weights: ModelWeights,
    sched: DiffusionSchedule,
) -> torch.Tensor:
    x = latent
    for t, t_prev in sched.ddim_pairs():
        with torch.no_grad():
            eps = weights.network(x, condition, torch.tensor(t))
        x = ddim_step_frames(x, eps, t, t_prev, sched)
    return x


def adapt_and_restore(
    clip_k: VideoClip,
    prev: Optional[Tuple[VideoClip, VideoClip]],
    theta: ModelWeights,
    sched: DiffusionSchedule,
    arma: ARMAParams,
    cfg: TTAConfig,
    seed: int,
    step_records: Optional[list] = None,
) -> Tuple[VideoClip, ModelWeights]:
    """Restore one clip, adapting a private weight copy when a previous
    (degraded, restored) pair exists.

    The reverse latent starts from fresh temporal noise. On a non-finite
    adaptation fault the weight copy reverts to its pre-clip state and the
    remaining reverse steps run without adaptation.
    """
    weights_bar = theta.clone()
    condition = clip_k.frames
    latent = sample_temporal(
        tuple(condition.shape), arma, derive_seed(seed, "latent", clip_k.clip_index)
    ).frames

    if prev is None:
        restored = _ddim_restore(latent, condition, weights_bar, sched)
    else:
        prev_degraded, prev_restored = prev
        pair = tubelet_crop(
            prev_degraded,
            prev_restored,
            cfg.n_tubelets,
            cfg.tubelet_size,
            derive_seed(seed, "crop", clip_k.clip_index),
        )
        lion_state = OptimizerState.initial(weights_bar) if cfg.use_lion else None
        x = latent
        adapting = True
        for t, t_prev in sched.ddim_pairs():
            if adapting:
                try:
                    weights_bar, loss = tsc_adapt_step(
                        weights_bar,
                        pair,
                        t,
                        sched,
                        arma,
                        cfg.adapt_lr,
                        cfg,
                        derive_seed(seed, "adapt", clip_k.clip_index, t),
                        lion_state=lion_state,
                    )
                    if step_records is not None:
                        step_records.append(
                            {"clip": clip_k.clip_index, "timestep": t, "loss": loss}
                        )
                except AdaptationFaultError:
                    weights_bar = theta.clone()
                    adapting = False
            with torch.no_grad():
                eps = weights_bar.network(x, condition, torch.tensor(t))
            x = ddim_step_frames(x, eps, t, t_prev, sched)
        restored = x

    restored_clip = VideoClip(
        frames=restored.clamp(0.0, 1.0),
        clip_index=clip_k.clip_index,
        video_id=clip_k.video_id,
        start=clip_k.start,
    )
    return restored_clip, weights_bar


def integrate_overlap(
    current: VideoClip, previous_restored: VideoClip, stride: int
) -> VideoClip:
    """Average the overlapped leading frames of the current clip with the
    trailing frames of the previous restored clip."""
    n_f = current.n_frames
    if previous_restored.n_frames != n_f:
        raise ParameterError("clips must have equal length")
    if not 1 <= stride <= n_f:
        raise ParameterError(f"stride must be in [1, {n_f}], got {stride}")
    overlap = n_f - stride
    if overlap == 0:
        return current
    frames = current.frames.clone()
    frames[:overlap] = 0.5 * (frames[:overlap] + previous_restored.frames[stride:])
    return VideoClip(frames, current.clip_index, current.video_id, current.start)


def restore_stream(
    frames: FrameSequence,
    theta: ModelWeights,
    sched: DiffusionSchedule,
    arma: ARMAParams,
    cfg: TTAConfig,
    seed: int,
    adapt: bool = True,
    step_records: Optional[list] = None,
) -> FrameSequence:
    """Restore a whole stream clip by clip; later clips overwrite overlapped
    frames after integration, so output length equals input length."""
    n_f = theta.config.n_frames
    if len(frames) < n_f:
        raise InsufficientFramesError(f"stream has {len(frames)} frames, need >= {n_f}")
    clips = slice_clips(frames, n_f, cfg.clip_stride)
    out = torch.zeros_like(frames.frames)

    source = theta
    prev_pair: Optional[Tuple[VideoClip, VideoClip]] = None
    prev_restored: Optional[VideoClip] = None
    for clip in clips:
        restored, adapted = adapt_and_restore(
            clip,
            prev_pair if adapt else None,
            source,
            sched,
            arma,
            cfg,
            seed,
            step_records=step_records,
        )
        if prev_restored is not None:
            pair_stride = clip.start - prev_restored.start
            restored = integrate_overlap(restored, prev_restored, pair_stride)
        out[clip.start : clip.start + n_f] = restored.frames
        prev_pair = (clip, restored)
        prev_restored = restored
        if cfg.accumulate_weights:
            source = adapted
    return FrameSequence(frames=out, fps=frames.fps, video_id=frames.video_id)
