"""PSNR and SSIM for [0, 1]-range frame sequences, plus corpus aggregation."""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import torch
import torch.nn.functional as F

from .data import FrameSequence, load_frames, read_manifest
from .errors import ShapeError

PSNR_CAP_DB = 100.0


def _frames_of(x) -> torch.Tensor:
    return getattr(x, "frames", x)


def psnr(a, b) -> float:
    """Mean over frames of 10*log10(1/MSE); zero-MSE frames are capped at 100 dB."""
    fa, fb = _frames_of(a), _frames_of(b)
    if fa.shape != fb.shape:
        raise ShapeError(f"shape mismatch: {tuple(fa.shape)} vs {tuple(fb.shape)}")
    mse = ((fa.double() - fb.double()) ** 2).reshape(fa.shape[0], -1).mean(dim=1)
    vals = [
        PSNR_CAP_DB if m == 0 else min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / float(m)))
        for m in mse
    ]
    return float(sum(vals) / len(vals))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2 * sigma * sigma))
    g = g / g.sum()
    return (g[:, None] * g[None, :])[None, None]


def ssim(a, b, window_size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Sliding-window SSIM with a Gaussian window, averaged over windows,
    channels, and frames; dynamic range 1."""
    fa, fb = _frames_of(a).double(), _frames_of(b).double()
    if fa.shape != fb.shape:
        raise ShapeError(f"shape mismatch: {tuple(fa.shape)} vs {tuple(fb.shape)}")
    if fa.shape[-1] < window_size or fa.shape[-2] < window_size:
        raise ShapeError(
            f"frame {fa.shape[-2]}x{fa.shape[-1]} smaller than {window_size}x{window_size} window"
        )
    n, c = fa.shape[0], fa.shape[1]
    x = fa.reshape(n * c, 1, *fa.shape[-2:])
    y = fb.reshape(n * c, 1, *fb.shape[-2:])
    win = _gaussian_window(window_size, sigma)

    mu_x = F.conv2d(x, win)
    mu_y = F.conv2d(y, win)
    xx = F.conv2d(x * x, win) - mu_x * mu_x
    yy = F.conv2d(y * y, win) - mu_y * mu_y
    xy = F.conv2d(x * y, win) - mu_x * mu_y

    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float((num / den).mean())


@dataclass
class EvalReport:
    per_video: Dict[str, dict] = field(default_factory=dict)
    per_kind: Dict[str, dict] = field(default_factory=dict)
    overall: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "per_video": self.per_video,
                "per_kind": self.per_kind,
                "overall": self.overall,
                "config": self.config,
            },
            indent=2,
        )

    def format_table(self) -> str:
        lines = [f"{'video':<24}{'kind':<16}{'PSNR':>8}{'SSIM':>9}"]
        for vid, row in sorted(self.per_video.items()):
            lines.append(
                f"{vid:<24}{row['kind']:<16}{row['psnr']:>8.2f}{row['ssim']:>9.4f}"
            )
        lines.append("-" * 57)
        for kind, row in sorted(self.per_kind.items()):
            lines.append(
                f"{'mean':<24}{kind:<16}{row['psnr']:>8.2f}{row['ssim']:>9.4f}"
            )
        lines.append(
            f"{'mean':<24}{'overall':<16}{self.overall['psnr']:>8.2f}{self.overall['ssim']:>9.4f}"
        )
        return "\n".join(lines)


def _aggregate(rows: Dict[str, dict]) -> EvalReport:
    report = EvalReport(per_video=rows)
    kinds: Dict[str, list] = {}
    for row in rows.values():
        kinds.setdefault(row["kind"], []).append(row)
    for kind, members in kinds.items():
        report.per_kind[kind] = {
            "psnr": sum(m["psnr"] for m in members) / len(members),
            "ssim": sum(m["ssim"] for m in members) / len(members),
            "n": len(members),
        }
    all_rows = list(rows.values())
    report.overall = {
        "psnr": sum(m["psnr"] for m in all_rows) / len(all_rows),
        "ssim": sum(m["ssim"] for m in all_rows) / len(all_rows),
        "n": len(all_rows),
    }
    return report


def evaluate_sequences(pairs: Dict[str, tuple]) -> EvalReport:
    """pairs: video_id -> (restored FrameSequence, clean FrameSequence, kind)."""
    rows = {}
    for vid, (restored, clean, kind) in pairs.items():
        rows[vid] = {"kind": kind, "psnr": psnr(restored, clean), "ssim": ssim(restored, clean)}
    return _aggregate(rows)


def evaluate_corpus(restored_dir, clean_dir, manifest_dir=None) -> EvalReport:
    """Score every restored video against its clean counterpart, grouped by kind."""
    restored_dir, clean_dir = Path(restored_dir), Path(clean_dir)
    manifest = read_manifest(manifest_dir if manifest_dir else restored_dir.parent)
    kind_of = {rec.video_id: rec.kind for rec in manifest}
    pairs = {}
    for sub in sorted(p for p in restored_dir.iterdir() if p.is_dir()):
        vid = sub.name
        if vid not in kind_of:
            raise ShapeError(f"video id {vid!r} not present in manifest")
        pairs[vid] = (load_frames(sub), load_frames(clean_dir / vid), kind_of[vid])
    return _aggregate(
        {
            vid: {"kind": kind, "psnr": psnr(r, c), "ssim": ssim(r, c)}
            for vid, (r, c, kind) in pairs.items()
        }
    )
