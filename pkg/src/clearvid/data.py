"""Synthetic desk-scale video corpus.

Clean videos are procedurally textured scenes (layered gradients plus
drifting soft shapes) so they are cheap to generate and fully reproducible.
Degradations are simple parametric weather models: additive moving rain
streaks, atmospheric-scattering haze, drifting snow particles, and the two
held-out combinations rain+raindrop and snow+fog. They exist to create a
measurable seen/unseen distribution shift, not to imitate any real dataset.
"""

import json
import math
import re
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import (
    InsufficientFramesError,
    ManifestError,
    MissingFrameError,
    ParameterError,
    ResolutionMismatchError,
)
from .seeding import derive_seed, numpy_generator

SEEN_KINDS = ("rain", "haze", "snow")
UNSEEN_KINDS = ("rain_raindrop", "snow_fog")
ALL_KINDS = SEEN_KINDS + UNSEEN_KINDS

MANIFEST_NAME = "manifest.json"
_FRAME_RE = re.compile(r"frame_(\d{5})\.png$")


@dataclass
class VideoClip:
    """n_frames consecutive frames in [0, 1], shape [n_frames, C, H, W]."""

    frames: torch.Tensor
    clip_index: int = 0
    video_id: str = ""
    start: int = 0

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class FrameSequence:
    """All frames of one video, shape [n, C, H, W], values in [0, 1]."""

    frames: torch.Tensor
    fps: float = 10.0
    video_id: str = ""

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def resolution(self) -> int:
        return self.frames.shape[-1]


@dataclass
class DegradationSpec:
    kind: str
    intensity: float = 0.5
    motion: dict = dc_field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ParameterError(f"unknown degradation kind {self.kind!r}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ParameterError(f"intensity must be in [0, 1], got {self.intensity}")


def _to_tensor(frames: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float32))


def _smooth_field(rng: np.random.Generator, res: int, sigma: float) -> np.ndarray:
    """Low-frequency random field in [0, 1]."""
    f = gaussian_filter(rng.standard_normal((res, res)), sigma=sigma)
    lo, hi = f.min(), f.max()
    return (f - lo) / (hi - lo + 1e-12)


def gen_clean_video(n_frames: int, resolution: int, seed: int) -> FrameSequence:
    """Procedural scene: smooth color gradients plus drifting soft blobs."""
    if n_frames < 1:
        raise ParameterError(f"n_frames must be >= 1, got {n_frames}")
    rng = numpy_generator(seed)
    res = resolution
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64) / res

    # per-channel slow sinusoidal background, phase drifts with the frame index
    freqs = rng.uniform(0.5, 1.5, size=(3, 2))
    phases = rng.uniform(0, 2 * np.pi, size=3)
    drift = rng.uniform(0.05, 0.15, size=3) * rng.choice([-1, 1], size=3)

    # drifting blobs: position, velocity, radius, per-channel color
    n_blobs = int(rng.integers(3, 6))
    pos = rng.uniform(0.1, 0.9, size=(n_blobs, 2))
    vel = rng.uniform(-0.02, 0.02, size=(n_blobs, 2))
    radius = rng.uniform(0.08, 0.2, size=n_blobs)
    color = rng.uniform(-0.4, 0.4, size=(n_blobs, 3))

    frames = np.empty((n_frames, 3, res, res), dtype=np.float64)
    for k in range(n_frames):
        for c in range(3):
            base = 0.5 + 0.25 * np.sin(
                2 * np.pi * (freqs[c, 0] * xx + freqs[c, 1] * yy) + phases[c] + drift[c] * k
            )
            frames[k, c] = base
        for b in range(n_blobs):
            cy, cx = pos[b] + vel[b] * k
            d2 = (yy - cy) ** 2 + (xx - cx) ** 2
            mask = np.exp(-d2 / (2 * radius[b] ** 2))
            for c in range(3):
                frames[k, c] += color[b, c] * mask
    frames = np.clip(frames, 0.02, 0.98)
    return FrameSequence(frames=_to_tensor(frames), video_id=f"clean_{seed}")


def _oriented_kernel(length: int, angle_deg: float) -> np.ndarray:
    """Line segment rasterized into a square kernel, unit sum."""
    size = length | 1
    kern = np.zeros((size, size))
    c = size // 2
    rad = math.radians(angle_deg)
    dy, dx = math.cos(rad), math.sin(rad)
    for s in np.linspace(-length / 2, length / 2, 4 * length):
        y, x = c + dy * s, c + dx * s
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        if 0 <= y0 < size - 1 and 0 <= x0 < size - 1:
            fy, fx = y - y0, x - x0
            kern[y0, x0] += (1 - fy) * (1 - fx)
            kern[y0 + 1, x0] += fy * (1 - fx)
            kern[y0, x0 + 1] += (1 - fy) * fx
            kern[y0 + 1, x0 + 1] += fy * fx
    return kern / kern.sum()


def _check_kind(spec: DegradationSpec, *kinds: str):
    if spec.kind not in kinds:
        raise ParameterError(f"expected kind in {kinds}, got {spec.kind!r}")


def apply_rain(seq: FrameSequence, spec: DegradationSpec) -> FrameSequence:
    """Additive oriented bright streaks falling coherently across frames."""
    _check_kind(spec, "rain")
    if spec.intensity == 0:
        return FrameSequence(seq.frames.clone(), seq.fps, seq.video_id)
    rng = numpy_generator(spec.seed)
    frames = seq.frames.numpy().astype(np.float64)
    n, _, h, w = frames.shape

    angle = float(spec.motion.get("angle", rng.uniform(-15, 15)))
    speed = int(spec.motion.get("speed", rng.integers(3, 7)))
    length = max(3, int(6 + 10 * spec.intensity))
    density = 0.01 + 0.05 * spec.intensity

    base = (rng.random((h, w)) < density).astype(np.float64) * rng.uniform(0.5, 1.0, (h, w))
    kern = _oriented_kernel(length, angle)
    from scipy.signal import fftconvolve

    dx_per_frame = int(round(math.tan(math.radians(angle)) * speed))
    out = np.empty_like(frames)
    gain = 2.0 + 3.0 * spec.intensity
    for k in range(n):
        shifted = np.roll(base, shift=(speed * k, dx_per_frame * k), axis=(0, 1))
        streaks = fftconvolve(shifted, kern, mode="same")
        streaks = np.clip(streaks, 0, None)
        out[k] = np.clip(frames[k] + gain * streaks[None, :, :], 0.0, 1.0)
    return FrameSequence(_to_tensor(out), seq.fps, seq.video_id)


def apply_haze(seq: FrameSequence, spec: DegradationSpec) -> FrameSequence:
    """Atmospheric scattering I = J*tr + A*(1 - tr); tr fixed over time."""
    _check_kind(spec, "haze", "snow_fog")
    if spec.intensity == 0:
        return FrameSequence(seq.frames.clone(), seq.fps, seq.video_id)
    rng = numpy_generator(spec.seed)
    frames = seq.frames.numpy().astype(np.float64)
    h, w = frames.shape[-2:]

    ramp = np.linspace(0, 1, h)[:, None] * np.ones((1, w))
    depth = 0.6 * ramp + 0.4 * _smooth_field(rng, h, sigma=h / 6)
    beta = 0.8 + 3.2 * spec.intensity
    tr = np.exp(-beta * depth)[None, :, :]
    airlight = float(rng.uniform(0.7, 1.0))

    out = frames * tr[None, :, :, :] + airlight * (1.0 - tr[None, :, :, :])
    return FrameSequence(_to_tensor(np.clip(out, 0.0, 1.0)), seq.fps, seq.video_id)


def apply_snow(seq: FrameSequence, spec: DegradationSpec) -> FrameSequence:
    """Additive soft particles with downward drift and limited lifetimes."""
    _check_kind(spec, "snow")
    if spec.intensity == 0:
        return FrameSequence(seq.frames.clone(), seq.fps, seq.video_id)
    rng = numpy_generator(spec.seed)
    frames = seq.frames.numpy().astype(np.float64)
    n, _, h, w = frames.shape

    n_particles = int((20 + 180 * spec.intensity) * (h * w) / 4096)
    birth = rng.integers(-10, n, size=n_particles)
    life = rng.integers(8, 20, size=n_particles)
    y0 = rng.uniform(-h * 0.3, h, size=n_particles)
    x0 = rng.uniform(0, w, size=n_particles)
    vy = rng.uniform(1.0, 3.0, size=n_particles) * float(spec.motion.get("speed", 1.0))
    vx = rng.uniform(-0.6, 0.6, size=n_particles)
    rad = rng.uniform(0.8, 2.2, size=n_particles)
    bright = rng.uniform(0.5, 1.0, size=n_particles) * (0.4 + 0.6 * spec.intensity)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.empty_like(frames)
    for k in range(n):
        layer = np.zeros((h, w))
        age = k - birth
        alive = (age >= 0) & (age < life)
        for i in np.nonzero(alive)[0]:
            cy = y0[i] + vy[i] * age[i]
            cx = (x0[i] + vx[i] * age[i]) % w
            if cy < -3 or cy > h + 3:
                continue
            fade = math.sin(math.pi * age[i] / life[i])
            r = rad[i]
            ylo, yhi = max(0, int(cy - 3 * r)), min(h, int(cy + 3 * r) + 1)
            xlo, xhi = max(0, int(cx - 3 * r)), min(w, int(cx + 3 * r) + 1)
            if ylo >= yhi or xlo >= xhi:
                continue
            d2 = (yy[ylo:yhi, xlo:xhi] - cy) ** 2 + (xx[ylo:yhi, xlo:xhi] - cx) ** 2
            layer[ylo:yhi, xlo:xhi] += bright[i] * fade * np.exp(-d2 / (2 * r * r))
        out[k] = np.clip(frames[k] + layer[None, :, :], 0.0, 1.0)
    return FrameSequence(_to_tensor(out), seq.fps, seq.video_id)


def apply_combo(seq: FrameSequence, spec: DegradationSpec) -> FrameSequence:
    """Held-out combinations: rain + static raindrops, or snow + shallow fog."""
    _check_kind(spec, "rain_raindrop", "snow_fog")
    if spec.intensity == 0:
        return FrameSequence(seq.frames.clone(), seq.fps, seq.video_id)
    if spec.kind == "rain_raindrop":
        rained = apply_rain(
            seq, DegradationSpec("rain", spec.intensity, dict(spec.motion), spec.seed)
        )
        return _add_raindrops(rained, spec)
    snowed = apply_snow(
        seq, DegradationSpec("snow", spec.intensity, dict(spec.motion), spec.seed)
    )
    fog = DegradationSpec("snow_fog", min(1.0, 0.6 * spec.intensity + 0.1), {}, spec.seed + 1)
    return apply_haze(snowed, fog)


def _add_raindrops(seq: FrameSequence, spec: DegradationSpec) -> FrameSequence:
    """Static refractive blobs: local blur plus a brightness lens."""
    rng = numpy_generator(derive_seed(spec.seed, "raindrop"))
    frames = seq.frames.numpy().astype(np.float64)
    n, _, h, w = frames.shape

    n_drops = 3 + int(7 * spec.intensity)
    cy = rng.uniform(0.1 * h, 0.9 * h, n_drops)
    cx = rng.uniform(0.1 * w, 0.9 * w, n_drops)
    r = rng.uniform(0.04 * h, 0.1 * h, n_drops)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = np.zeros((h, w))
    for i in range(n_drops):
        d2 = (yy - cy[i]) ** 2 + (xx - cx[i]) ** 2
        mask = np.maximum(mask, np.clip(1.0 - d2 / (r[i] ** 2), 0.0, 1.0))

    out = np.empty_like(frames)
    for k in range(n):
        for c in range(3):
            blurred = gaussian_filter(frames[k, c], sigma=2.5)
            lensed = np.clip(1.12 * blurred + 0.05, 0.0, 1.0)
            out[k, c] = frames[k, c] * (1 - mask) + lensed * mask
    return FrameSequence(_to_tensor(np.clip(out, 0.0, 1.0)), seq.fps, seq.video_id)


_APPLY = {
    "rain": apply_rain,
    "haze": apply_haze,
    "snow": apply_snow,
    "rain_raindrop": apply_combo,
    "snow_fog": apply_combo,
}


def degrade(seq: FrameSequence, spec: DegradationSpec) -> FrameSequence:
    return _APPLY[spec.kind](seq, spec)


def slice_clips(seq: FrameSequence, n_f: int, stride: int) -> List[VideoClip]:
    """Overlapped clips at 0, stride, 2*stride, ...; the last clip is anchored
    to end at the final frame so every frame is covered."""
    total = len(seq)
    if total < n_f:
        raise InsufficientFramesError(f"stream has {total} frames, need >= {n_f}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    starts = list(range(0, total - n_f + 1, stride))
    if starts[-1] != total - n_f:
        starts.append(total - n_f)
    return [
        VideoClip(
            frames=seq.frames[s : s + n_f].clone(),
            clip_index=k + 1,
            video_id=seq.video_id,
            start=s,
        )
        for k, s in enumerate(starts)
    ]


def save_frames(seq: FrameSequence, directory) -> None:
    """Write 8-bit RGB PNGs named frame_00000.png, frame_00001.png, ..."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arr = (seq.frames.clamp(0, 1).numpy() * 255.0).round().astype(np.uint8)
    for i in range(arr.shape[0]):
        img = Image.fromarray(arr[i].transpose(1, 2, 0), mode="RGB")
        img.save(directory / f"frame_{i:05d}.png")


def load_frames(directory) -> FrameSequence:
    directory = Path(directory)
    files = sorted(p for p in directory.glob("frame_*.png") if _FRAME_RE.search(p.name))
    if not files:
        raise MissingFrameError(f"no frame files in {directory}")
    indices = [int(_FRAME_RE.search(p.name).group(1)) for p in files]
    for expect in range(len(files)):
        if expect not in indices:
            raise MissingFrameError(
                f"missing frame file {directory / f'frame_{expect:05d}.png'}"
            )
    frames = []
    shape = None
    for p in files:
        arr = np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / 255.0
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise ResolutionMismatchError(
                f"{p} has shape {arr.shape[:2]}, expected {shape[:2]}"
            )
        frames.append(arr.transpose(2, 0, 1))
    return FrameSequence(
        frames=torch.from_numpy(np.stack(frames)), video_id=directory.name
    )


@dataclass
class ManifestRecord:
    video_id: str
    role: str                 # "clean" | "degraded"
    kind: str
    intensity: float
    seed: int
    n_frames: int
    resolution: int


def write_manifest(records: List[ManifestRecord], directory) -> None:
    payload = {"videos": [vars(r) for r in records]}
    (Path(directory) / MANIFEST_NAME).write_text(json.dumps(payload, indent=2) + "\n")


def read_manifest(directory) -> List[ManifestRecord]:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"manifest not found at {path}")
    try:
        payload = json.loads(path.read_text())
        return [ManifestRecord(**rec) for rec in payload["videos"]]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ManifestError(f"malformed manifest at {path}: {exc}") from None


@dataclass
class CorpusConfig:
    n_train_per_kind: int = 16
    n_test_seen_per_kind: int = 4
    n_test_unseen_per_combo: int = 8
    n_frames: int = 20
    resolution: int = 64
    intensity: float = 0.6
    seed: int = 0
    kinds: tuple = SEEN_KINDS
    unseen_kinds: tuple = UNSEEN_KINDS

    def __post_init__(self):
        self.kinds = tuple(self.kinds)
        self.unseen_kinds = tuple(self.unseen_kinds)
        for k in self.kinds:
            if k not in SEEN_KINDS:
                raise ParameterError(f"data.kinds contains unknown kind {k!r}")
        for k in self.unseen_kinds:
            if k not in UNSEEN_KINDS:
                raise ParameterError(f"data.unseen_kinds contains unknown kind {k!r}")


def _gen_pair(kind: str, video_id: str, cfg: CorpusConfig, seed: int):
    clean = gen_clean_video(cfg.n_frames, cfg.resolution, seed)
    clean.video_id = video_id
    spec = DegradationSpec(kind, cfg.intensity, seed=derive_seed(seed, "degrade"))
    degraded = degrade(clean, spec)
    degraded.video_id = video_id
    return clean, degraded, spec


def generate_split(directory, kinds, n_videos: int, cfg: CorpusConfig, split: str) -> List[ManifestRecord]:
    """Write one corpus split (clean/ and degraded/ per-video dirs plus manifest)."""
    directory = Path(directory)
    records = []
    for kind in kinds:
        for i in range(n_videos):
            video_id = f"{kind}_{i:03d}"
            seed = derive_seed(cfg.seed, split, kind, i)
            clean, degraded_seq, spec = _gen_pair(kind, video_id, cfg, seed)
            save_frames(clean, directory / "clean" / video_id)
            save_frames(degraded_seq, directory / "degraded" / video_id)
            common = dict(
                video_id=video_id,
                kind=kind,
                intensity=spec.intensity,
                n_frames=cfg.n_frames,
                resolution=cfg.resolution,
            )
            records.append(ManifestRecord(role="clean", seed=seed, **common))
            records.append(ManifestRecord(role="degraded", seed=spec.seed, **common))
    write_manifest(records, directory)
    return records


def generate_corpus(root, cfg: CorpusConfig) -> None:
    """Full toy corpus: train + held-out seen test + unseen-combo test."""
    root = Path(root)
    generate_split(root / "train", cfg.kinds, cfg.n_train_per_kind, cfg, "train")
    generate_split(root / "test_seen", cfg.kinds, cfg.n_test_seen_per_kind, cfg, "test_seen")
    generate_split(
        root / "test_unseen", cfg.unseen_kinds, cfg.n_test_unseen_per_combo, cfg, "test_unseen"
    )


def load_split(directory) -> List[dict]:
    """Load a split into memory as [{video_id, kind, clean, degraded}, ...]."""
    directory = Path(directory)
    records = read_manifest(directory)
    by_id = {}
    for rec in records:
        by_id.setdefault(rec.video_id, rec)
    out = []
    for video_id, rec in sorted(by_id.items()):
        out.append(
            {
                "video_id": video_id,
                "kind": rec.kind,
                "clean": load_frames(directory / "clean" / video_id),
                "degraded": load_frames(directory / "degraded" / video_id),
            }
        )
    return out
