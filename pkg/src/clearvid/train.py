"""Source-domain training.

Each step draws a batch of (clean, degraded) clip crops, a uniform timestep
and a fresh temporally correlated noise clip per batch element, noises the
clean clip, and optimizes the denoiser's mean-L1 noise-estimation error with
the Lion optimizer under a cosine learning-rate schedule. Checkpoints are a
versioned zip container with raw little-endian tensor payloads so round-trips
are bit-exact.
"""

import io
import json
import math
import time
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
import torch

from .data import VideoClip
from .denoiser import DenoiserConfig, DenoisingNetwork, ModelWeights, WEIGHTS_VERSION
from .errors import (
    CheckpointCorruptError,
    CheckpointKeyError,
    CheckpointVersionError,
    ParameterError,
    ShapeError,
    TrainingFaultError,
)
from .noise import ARMAParams, NoiseClip, sample_temporal, sample_iid
from .schedule import DiffusionSchedule, make_linear_schedule
from .seeding import derive_seed, numpy_generator

CHECKPOINT_VERSION = "clearvid-ckpt-1"
# fixed zip timestamp so identical state serializes to identical bytes
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass
class TrainConfig:
    total_iters: int = 2000
    batch_clips: int = 4
    frames_per_clip: int = 5
    crop_size: int = 32
    lr_start: float = 2e-5
    lr_end: float = 2e-7
    lion_beta1: float = 0.9
    lion_beta2: float = 0.99
    weight_decay: float = 0.0
    seed: int = 0
    plain_sign_sgd: bool = False   # debugging fallback: sign(g) without momentum
    iid_noise: bool = False        # ablation: frame-independent training noise

    def __post_init__(self):
        if not (self.lr_start >= self.lr_end > 0):
            raise ParameterError(
                f"need lr_start >= lr_end > 0, got ({self.lr_start}, {self.lr_end})"
            )
        if self.batch_clips < 1:
            raise ParameterError(f"batch_clips must be >= 1, got {self.batch_clips}")


@dataclass
class OptimizerState:
    momentum: dict = field(default_factory=dict)   # parameter name -> tensor
    step: int = 0

    @classmethod
    def initial(cls, weights: ModelWeights) -> "OptimizerState":
        return cls(
            momentum={n: torch.zeros_like(p) for n, p in weights.named_parameters()},
            step=0,
        )


def cosine_lr(iteration: int, cfg: TrainConfig) -> float:
    """lr_end + 0.5 (lr_start - lr_end) (1 + cos(pi * iter / total))."""
    if not 0 <= iteration <= cfg.total_iters:
        raise ParameterError(f"iteration {iteration} outside [0, {cfg.total_iters}]")
    return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (
        1.0 + math.cos(math.pi * iteration / cfg.total_iters)
    )


def loss_ls(
    weights: ModelWeights,
    clean: VideoClip,
    degraded: VideoClip,
    t: int,
    eps_bar: NoiseClip,
    sched: DiffusionSchedule,
) -> torch.Tensor:
    """Mean-L1 noise-estimation loss on one clip (differentiable scalar)."""
    return loss_ls_batch(
        weights,
        clean.frames[None],
        degraded.frames[None],
        torch.tensor([t]),
        eps_bar.frames[None],
        sched,
    )


def loss_ls_batch(
    weights: ModelWeights,
    clean: torch.Tensor,
    degraded: torch.Tensor,
    t: torch.Tensor,
    eps_bar: torch.Tensor,
    sched: DiffusionSchedule,
) -> torch.Tensor:
    """Batched loss; clean/degraded/eps_bar are [B, F, C, H, W], t is [B]."""
    if clean.shape != degraded.shape or clean.shape != eps_bar.shape:
        raise ShapeError("clean, degraded and eps_bar must share one shape")
    for ti in t.tolist():
        sched._check_t(int(ti))
    ab = torch.tensor(
        [sched.alpha_bar(int(ti)) for ti in t.tolist()], dtype=clean.dtype
    ).reshape(-1, 1, 1, 1, 1)
    noisy = torch.sqrt(ab) * clean + torch.sqrt(1.0 - ab) * eps_bar
    pred = weights.network(noisy, degraded, t)
    return (pred - eps_bar).abs().mean()


def lion_step(
    weights: ModelWeights,
    grads: dict,
    state: OptimizerState,
    lr: float,
    cfg: TrainConfig,
) -> Tuple[ModelWeights, OptimizerState]:
    """Sign-momentum update:
    u = sign(b1 m + (1 - b1) g); w -= lr (u + wd w); m = b2 m + (1 - b2) g.
    """
    b1, b2 = cfg.lion_beta1, cfg.lion_beta2
    with torch.no_grad():
        for name, p in weights.named_parameters():
            g = grads.get(name)
            if g is None:
                continue
            if not torch.isfinite(g).all():
                raise TrainingFaultError(f"non-finite gradient for {name}")
            if cfg.plain_sign_sgd:
                update = torch.sign(g)
            else:
                m = state.momentum[name]
                update = torch.sign(b1 * m + (1.0 - b1) * g)
                m.mul_(b2).add_(g, alpha=1.0 - b2)
            p.add_(update + cfg.weight_decay * p, alpha=-lr)
    state.step += 1
    return weights, state


def train_step(
    weights: ModelWeights,
    opt_state: OptimizerState,
    batch: List[Tuple[VideoClip, VideoClip]],
    sched: DiffusionSchedule,
    cfg: TrainConfig,
    arma: ARMAParams,
) -> Tuple[ModelWeights, OptimizerState, float]:
    """One optimization step over a batch of (clean, degraded) clip pairs.

    Per clip: a uniform timestep in [1, T] and a fresh noise clip, both keyed
    by (run seed, step index, clip index) so results are order-independent.
    """
    if not batch:
        raise ParameterError("batch must be non-empty")
    step = opt_state.step
    clean = torch.stack([c.frames for c, _ in batch])
    degraded = torch.stack([d.frames for _, d in batch])
    ts, eps = [], []
    for i in range(len(batch)):
        key = derive_seed(cfg.seed, "step", step, i)
        ts.append(int(numpy_generator(key).integers(1, sched.T + 1)))
        noise_seed = derive_seed(key, "noise")
        if cfg.iid_noise:
            eps.append(sample_iid(clean.shape[1:], noise_seed).frames)
        else:
            eps.append(sample_temporal(clean.shape[1:], arma, noise_seed).frames)

    weights.network.zero_grad(set_to_none=True)
    loss = loss_ls_batch(
        weights, clean, degraded, torch.tensor(ts), torch.stack(eps), sched
    )
    if not torch.isfinite(loss):
        raise TrainingFaultError(f"non-finite loss at step {step}")
    loss.backward()
    grads = {n: p.grad for n, p in weights.named_parameters() if p.grad is not None}
    lr = cosine_lr(step, cfg)
    weights, opt_state = lion_step(weights, grads, opt_state, lr, cfg)
    return weights, opt_state, float(loss.detach())


def sample_batch(
    corpus: List[dict], cfg: TrainConfig, step: int
) -> List[Tuple[VideoClip, VideoClip]]:
    """Deterministic batch assembly: video, start frame and crop per clip index."""
    batch = []
    for i in range(cfg.batch_clips):
        rng = numpy_generator(derive_seed(cfg.seed, "batch", step, i))
        entry = corpus[int(rng.integers(0, len(corpus)))]
        frames = entry["clean"].frames
        n, _, h, w = frames.shape
        f = cfg.frames_per_clip
        s = int(rng.integers(0, n - f + 1))
        y = int(rng.integers(0, h - cfg.crop_size + 1))
        x = int(rng.integers(0, w - cfg.crop_size + 1))
        sl = (slice(s, s + f), slice(None), slice(y, y + cfg.crop_size), slice(x, x + cfg.crop_size))
        batch.append(
            (
                VideoClip(frames[sl].clone(), video_id=entry["video_id"]),
                VideoClip(entry["degraded"].frames[sl].clone(), video_id=entry["video_id"]),
            )
        )
    return batch


def run_training(
    corpus: List[dict],
    weights: ModelWeights,
    sched: DiffusionSchedule,
    cfg: TrainConfig,
    arma: ARMAParams,
    opt_state: Optional[OptimizerState] = None,
    start_iter: int = 0,
    log_fn: Optional[Callable[[dict], None]] = None,
) -> Tuple[ModelWeights, OptimizerState, List[float]]:
    """Train from start_iter to cfg.total_iters; returns the loss history."""
    if opt_state is None:
        opt_state = OptimizerState.initial(weights)
    losses = []
    for step in range(start_iter, cfg.total_iters):
        t0 = time.monotonic()
        batch = sample_batch(corpus, cfg, step)
        weights, opt_state, loss = train_step(weights, opt_state, batch, sched, cfg, arma)
        losses.append(loss)
        if log_fn is not None:
            log_fn(
                {
                    "iter": step,
                    "loss": loss,
                    "lr": cosine_lr(step, cfg),
                    "wall_ms": round((time.monotonic() - t0) * 1000.0, 3),
                }
            )
    return weights, opt_state, losses


# --- checkpoint container -------------------------------------------------

def _tensor_bytes(t: torch.Tensor) -> tuple:
    arr = t.detach().cpu().numpy()
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return le.tobytes(), str(arr.dtype), list(arr.shape)


def save_checkpoint(
    weights: ModelWeights,
    opt_state: OptimizerState,
    sched: DiffusionSchedule,
    cfg: TrainConfig,
    path,
    arma: ARMAParams = ARMAParams(),
    iteration: Optional[int] = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params, entries = {}, []
    for name, p in weights.named_parameters():
        data, dtype, shape = _tensor_bytes(p)
        params[f"params/{name}"] = data
        entries.append({"name": name, "dtype": dtype, "shape": shape})
    momenta = []
    for name, m in opt_state.momentum.items():
        data, dtype, shape = _tensor_bytes(m)
        params[f"momentum/{name}"] = data
        momenta.append({"name": name, "dtype": dtype, "shape": shape})
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "weights_version": weights.version,
        "iteration": opt_state.step if iteration is None else iteration,
        "opt_step": opt_state.step,
        "model_config": asdict(weights.config),
        "train_config": asdict(cfg),
        "schedule": {
            "T": sched.T,
            "beta_start": sched.beta_start,
            "beta_end": sched.beta_end,
            "n_ddim_steps": len(sched.ddim_steps),
        },
        "arma": {"phi": arma.phi, "tau": arma.tau},
        "tensors": entries,
        "momenta": momenta,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        def write(name: str, payload: bytes):
            info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
            zf.writestr(info, payload)

        write("meta.json", json.dumps(meta, indent=2, sort_keys=True).encode())
        for name in sorted(params):
            write(name, params[name])


@dataclass
class Checkpoint:
    weights: ModelWeights
    opt_state: OptimizerState
    schedule: DiffusionSchedule
    train_config: TrainConfig
    arma: ARMAParams
    iteration: int


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path, "r")
    except (zipfile.BadZipFile, FileNotFoundError, OSError) as exc:
        raise CheckpointCorruptError(f"cannot open checkpoint {path}: {exc}") from None
    with zf:
        names = set(zf.namelist())
        if "meta.json" not in names:
            raise CheckpointKeyError(f"checkpoint {path} has no meta.json")
        try:
            meta = json.loads(zf.read("meta.json"))
        except json.JSONDecodeError as exc:
            raise CheckpointCorruptError(f"unreadable meta.json in {path}: {exc}") from None
        version = meta.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint {path} has version {version!r}, expected {CHECKPOINT_VERSION!r}"
            )
        for key in ("model_config", "train_config", "schedule", "arma", "tensors", "momenta"):
            if key not in meta:
                raise CheckpointKeyError(f"checkpoint {path} misses key {key!r}")

        def read_tensor(prefix: str, entry: dict) -> torch.Tensor:
            entry_name = f"{prefix}/{entry['name']}"
            if entry_name not in names:
                raise CheckpointKeyError(f"checkpoint {path} misses entry {entry_name!r}")
            raw = zf.read(entry_name)
            arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]).newbyteorder("<"))
            arr = arr.reshape(entry["shape"]).astype(entry["dtype"])
            return torch.from_numpy(arr.copy())

        model_config = DenoiserConfig(**meta["model_config"])
        net = DenoisingNetwork(model_config)
        state = {e["name"]: read_tensor("params", e) for e in meta["tensors"]}
        missing = set(dict(net.named_parameters())) - set(state)
        if missing:
            raise CheckpointKeyError(f"checkpoint {path} misses parameters {sorted(missing)}")
        net.load_state_dict(state)
        weights = ModelWeights(
            config=model_config, network=net, version=meta.get("weights_version", WEIGHTS_VERSION)
        )
        momentum = {e["name"]: read_tensor("momentum", e) for e in meta["momenta"]}
        opt_state = OptimizerState(momentum=momentum, step=int(meta.get("opt_step", 0)))
        s = meta["schedule"]
        sched = make_linear_schedule(
            s["T"], s["beta_start"], s["beta_end"], n_ddim_steps=s.get("n_ddim_steps")
        )
        return Checkpoint(
            weights=weights,
            opt_state=opt_state,
            schedule=sched,
            train_config=TrainConfig(**meta["train_config"]),
            arma=ARMAParams(**meta["arma"]),
            iteration=int(meta["iteration"]),
        )
