"""Conditional noise-estimation network for video clips.

A scaled-down NAFNet encoder-decoder: the first and last layers are 3D
convolutions over (frame, height, width) so information crosses frame
boundaries, while the interior activation-free blocks run per frame. The
noisy clip and its degraded counterpart are concatenated channel-wise at the
input, and a sinusoidal timestep embedding is injected into every block
through a small gated MLP.
"""

import copy
import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ParameterError, ShapeError
from .noise import NoiseClip
from .seeding import torch_generator

WEIGHTS_VERSION = "clearvid-weights-1"

# encoder/decoder macro-layout: two downsampling and two upsampling stages
_STAGES = ("enc1", "enc2", "mid", "dec2", "dec1")
# blocks go to the cheap low-resolution stages first
_FILL_ORDER = ("mid", "enc2", "dec2", "enc1", "dec1")


@dataclass(frozen=True)
class DenoiserConfig:
    width: int = 16
    n_blocks: int = 8
    n_frames: int = 5
    in_channels: int = 3
    time_embed_dim: int = 64

    def __post_init__(self):
        for name in ("width", "n_blocks", "n_frames", "in_channels", "time_embed_dim"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        if self.n_blocks < 2:
            raise ParameterError(f"n_blocks must be >= 2, got {self.n_blocks}")
        if self.time_embed_dim % 2 != 0:
            raise ParameterError("time_embed_dim must be even (sin/cos pairs)")

    @property
    def downsample_factor(self) -> int:
        return 4

    def stage_blocks(self) -> dict:
        counts = {name: 0 for name in _STAGES}
        for i in range(self.n_blocks):
            counts[_FILL_ORDER[i % len(_FILL_ORDER)]] += 1
        return counts


def sinusoidal_time_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Positional encoding of timesteps: [sin(t w_k) || cos(t w_k)], k < dim/2."""
    if dim % 2 != 0:
        raise ParameterError(f"embedding dim must be even, got {dim}")
    if t.dim() == 0:
        t = t.reshape(1)
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    ).to(t.device)
    args = t.double()[:, None] * freqs[None, :]
    return torch.cat([args.sin(), args.cos()], dim=-1).float()


def time_embed(t: int, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of a single timestep, size [dim]."""
    if t < 0:
        raise ParameterError(f"timestep must be >= 0, got {t}")
    return sinusoidal_time_embedding(torch.tensor([float(t)]), dim)[0]


def simple_gate(x: torch.Tensor) -> torch.Tensor:
    """Split channels in half, elementwise product."""
    a, b = x.chunk(2, dim=1)
    return a * b


class LayerNorm2d(nn.Module):
    """Per-pixel layer norm across channels with learned affine."""

    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        x = x.permute(0, 2, 3, 1)
        x = F.layer_norm(x, x.shape[-1:], self.weight, self.bias)
        return x.permute(0, 3, 1, 2)


class TimeMLP(nn.Module):
    """Per-block timestep pathway: linear -> SimpleGate -> linear."""

    def __init__(self, embed_dim: int, channels: int):
        super().__init__()
        self.fc1 = nn.Linear(embed_dim, 2 * embed_dim)
        self.fc2 = nn.Linear(embed_dim, channels)

    def forward(self, emb):
        h = self.fc1(emb)
        a, b = h.chunk(2, dim=-1)
        return self.fc2(a * b)


class NAFBlock(nn.Module):
    """Activation-free restoration block, per frame.

    layer norm -> (+ time embedding) -> 1x1 expansion -> depthwise 3x3 ->
    SimpleGate -> simplified channel attention -> 1x1 projection -> residual.
    """

    def __init__(self, channels: int, time_embed_dim: int, expansion: int = 2):
        super().__init__()
        hidden = channels * expansion
        self.norm = LayerNorm2d(channels)
        self.time_mlp = TimeMLP(time_embed_dim, channels)
        self.pw1 = nn.Conv2d(channels, 2 * hidden, 1)
        self.dw = nn.Conv2d(2 * hidden, 2 * hidden, 3, padding=1, groups=2 * hidden)
        self.sca_pool = nn.AdaptiveAvgPool2d(1)
        self.sca_conv = nn.Conv2d(hidden, hidden, 1)
        self.pw2 = nn.Conv2d(hidden, channels, 1)

    def forward(self, x, t_emb):
        y = self.norm(x)
        y = y + self.time_mlp(t_emb)[:, :, None, None]
        y = self.pw1(y)
        y = self.dw(y)
        y = simple_gate(y)
        y = y * self.sca_conv(self.sca_pool(y))
        y = self.pw2(y)
        return x + y


class _Stage(nn.ModuleList):
    def run(self, x, t_emb):
        for block in self:
            x = block(x, t_emb)
        return x


class DenoisingNetwork(nn.Module):
    """Noise predictor over clips, batched as [B, n_frames, C, H, W]."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        w, c, d = config.width, config.in_channels, config.time_embed_dim
        counts = config.stage_blocks()

        self.entry = nn.Conv3d(2 * c, w, kernel_size=3, padding=1)
        self.enc1 = _Stage(NAFBlock(w, d) for _ in range(counts["enc1"]))
        self.down1 = nn.Conv2d(w, 2 * w, 2, stride=2)
        self.enc2 = _Stage(NAFBlock(2 * w, d) for _ in range(counts["enc2"]))
        self.down2 = nn.Conv2d(2 * w, 4 * w, 2, stride=2)
        self.mid = _Stage(NAFBlock(4 * w, d) for _ in range(counts["mid"]))
        self.up2 = nn.Sequential(nn.Conv2d(4 * w, 8 * w, 1), nn.PixelShuffle(2))
        self.dec2 = _Stage(NAFBlock(2 * w, d) for _ in range(counts["dec2"]))
        self.up1 = nn.Sequential(nn.Conv2d(2 * w, 4 * w, 1), nn.PixelShuffle(2))
        self.dec1 = _Stage(NAFBlock(w, d) for _ in range(counts["dec1"]))
        self.exit = nn.Conv3d(w, c, kernel_size=3, padding=1)

    def forward(self, noisy: torch.Tensor, condition: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        if noisy.shape != condition.shape:
            raise ShapeError(
                f"noisy shape {tuple(noisy.shape)} != condition shape {tuple(condition.shape)}"
            )
        squeeze = noisy.dim() == 4
        if squeeze:
            noisy, condition = noisy[None], condition[None]
        if noisy.dim() != 5:
            raise ShapeError(f"expected [B, F, C, H, W] input, got {tuple(noisy.shape)}")
        b, f, c, h, w = noisy.shape
        factor = self.config.downsample_factor
        if h % factor or w % factor:
            raise ShapeError(f"H and W must be divisible by {factor}, got {h}x{w}")
        if t.dim() == 0:
            t = t.expand(b)

        x = torch.cat([noisy, condition], dim=2)   # [B, F, 2C, H, W]
        x = self.entry(x.permute(0, 2, 1, 3, 4))   # [B, w, F, H, W]
        x = x.permute(0, 2, 1, 3, 4).reshape(b * f, -1, h, w)

        emb = sinusoidal_time_embedding(t.to(noisy.device), self.config.time_embed_dim)
        emb = emb.to(noisy.dtype).repeat_interleave(f, dim=0)

        e1 = self.enc1.run(x, emb)
        e2 = self.enc2.run(self.down1(e1), emb)
        m = self.mid.run(self.down2(e2), emb)
        d2 = self.dec2.run(self.up2(m) + e2, emb)
        d1 = self.dec1.run(self.up1(d2) + e1, emb)

        out = d1.reshape(b, f, -1, h, w).permute(0, 2, 1, 3, 4)
        out = self.exit(out).permute(0, 2, 1, 3, 4)
        return out[0] if squeeze else out


@dataclass
class ModelWeights:
    """The denoiser parameter set plus its config and a format version tag."""

    config: DenoiserConfig
    network: DenoisingNetwork
    version: str = WEIGHTS_VERSION
    last_layer_names: tuple = field(default=("exit.weight", "exit.bias"))

    def parameter_names(self) -> list:
        return [name for name, _ in self.network.named_parameters()]

    def named_parameters(self):
        return self.network.named_parameters()

    def state_dict(self) -> dict:
        return self.network.state_dict()

    def clone(self) -> "ModelWeights":
        return ModelWeights(
            config=self.config,
            network=copy.deepcopy(self.network),
            version=self.version,
            last_layer_names=self.last_layer_names,
        )

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.network.parameters())


def init_weights(config: DenoiserConfig, seed: int) -> ModelWeights:
    """Build the network and initialize every parameter from one seeded generator.

    Conv/linear weights and biases get fan-in-scaled uniform values; norm
    affines start at identity. Parameters are visited in module order, so the
    same (config, seed) always yields identical tensors.
    """
    net = DenoisingNetwork(config)
    gen = torch_generator(seed)
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name.endswith("norm.weight"):
                p.fill_(1.0)
            elif name.endswith("norm.bias"):
                p.fill_(0.0)
            elif p.dim() > 1:
                fan_in = p[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                p.uniform_(-bound, bound, generator=gen)
            else:
                p.uniform_(-1e-3, 1e-3, generator=gen)
    return ModelWeights(config=config, network=net)


def predict_noise(weights: ModelWeights, noisy, condition, t: int) -> NoiseClip:
    """Single-clip noise prediction; accepts LatentClip/VideoClip or raw tensors."""
    noisy_frames = getattr(noisy, "frames", noisy)
    cond_frames = getattr(condition, "frames", condition)
    with torch.no_grad():
        pred = weights.network(noisy_frames, cond_frames, torch.tensor(t))
    return NoiseClip(frames=pred)
