"""Command-line surface: corpus generation, training, restoration, evaluation,
and noise-model diagnostics, all driven by one YAML config plus a seed.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical fault.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from . import data as data_mod
from .config import load_config, write_config_echo
from .errors import (
    AdaptationFaultError,
    ClearvidError,
    ConfigError,
    DegenerateDataError,
    InsufficientFramesError,
    ManifestError,
    MissingFrameError,
    ParameterError,
    ResolutionMismatchError,
    TrainingFaultError,
)
from .denoiser import init_weights
from .metrics import evaluate_corpus
from .noise import ARMAParams, correlation_stats, sample_temporal
from .schedule import make_linear_schedule
from .seeding import derive_seed
from .train import load_checkpoint, run_training, save_checkpoint
from .tta import restore_stream

_USAGE_ERRORS = (ConfigError, ParameterError)
_DATA_ERRORS = (
    ManifestError,
    MissingFrameError,
    ResolutionMismatchError,
    InsufficientFramesError,
    FileNotFoundError,
)
_NUMERIC_ERRORS = (TrainingFaultError, AdaptationFaultError, DegenerateDataError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):   # argparse default exits with 2; usage errors are 1 here
        raise ConfigError(message)


def _jsonl_writer(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = open(path, "w")

    def write(record: dict):
        handle.write(json.dumps(record) + "\n")
        handle.flush()

    return write, handle


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    out = Path(args.out)
    data_mod.generate_corpus(out, cfg.data)
    write_config_echo(cfg, out)
    n_train = len(cfg.data.kinds) * cfg.data.n_train_per_kind
    n_unseen = len(cfg.data.unseen_kinds) * cfg.data.n_test_unseen_per_combo
    print(f"wrote corpus to {out}: {n_train} train videos, "
          f"{len(cfg.data.kinds) * cfg.data.n_test_seen_per_kind} seen-test, {n_unseen} unseen-test")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = data_mod.load_split(Path(args.corpus))
    sched = make_linear_schedule(
        cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end,
        n_ddim_steps=cfg.schedule.n_ddim_steps,
    )
    arma = cfg.noise.arma()

    if args.resume:
        ckpt = load_checkpoint(args.resume)
        weights, opt_state, start = ckpt.weights, ckpt.opt_state, ckpt.iteration
    else:
        weights = init_weights(cfg.model, derive_seed(cfg.seed, "init"))
        opt_state, start = None, 0

    log_write, handle = _jsonl_writer(out / "train_log.jsonl")
    try:
        weights, opt_state, losses = run_training(
            corpus, weights, sched, cfg.train, arma,
            opt_state=opt_state, start_iter=start, log_fn=log_write,
        )
    finally:
        handle.close()
    ckpt_path = out / "checkpoint.ckpt"
    save_checkpoint(weights, opt_state, sched, cfg.train, ckpt_path, arma=arma)
    write_config_echo(cfg, out)
    print(f"trained {cfg.train.total_iters - start} iters; "
          f"final loss {losses[-1]:.4f}" if losses else "nothing to train")
    print(f"checkpoint: {ckpt_path}")
    return 0


def _restore_one(video_dir: Path, out_dir: Path, weights, sched, arma, cfg, adapt: bool) -> int:
    seq = data_mod.load_frames(video_dir)
    records = []
    t0 = time.monotonic()
    restored = restore_stream(
        seq, weights, sched, arma, cfg.tta,
        derive_seed(cfg.tta.seed, "video", video_dir.name),
        adapt=adapt, step_records=records,
    )
    wall = round((time.monotonic() - t0) * 1000.0, 3)
    data_mod.save_frames(restored, out_dir)
    log_write, handle = _jsonl_writer(out_dir / "restore_log.jsonl")
    try:
        for rec in records:
            log_write(rec)
        log_write({"video": video_dir.name, "event": "restored", "wall_ms": wall})
    finally:
        handle.close()
    return len(records)


def cmd_restore(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    ckpt = load_checkpoint(args.checkpoint)
    sched = make_linear_schedule(
        cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end,
        n_ddim_steps=cfg.schedule.n_ddim_steps,
    )
    arma = ckpt.arma
    adapt = args.tta == "on"
    in_dir, out = Path(args.input), Path(args.out)

    if list(in_dir.glob("frame_*.png")):
        videos = [in_dir]
        targets = [out]
    else:
        videos = sorted(p for p in in_dir.iterdir() if p.is_dir())
        if not videos:
            raise MissingFrameError(f"no frames or video directories under {in_dir}")
        targets = [out / p.name for p in videos]

    for video_dir, target in zip(videos, targets):
        n_adapt = _restore_one(video_dir, target, ckpt.weights, sched, arma, cfg, adapt)
        print(f"restored {video_dir.name} -> {target} ({n_adapt} adaptation steps)")
    write_config_echo(cfg, out)
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    manifest_dir = Path(args.manifest) if args.manifest else None
    report = evaluate_corpus(Path(args.restored), Path(args.clean), manifest_dir)
    report.config = {"seed": cfg.seed}
    print(report.format_table())
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.to_json() + "\n")
        print(f"report: {out}")
    return 0


def cmd_noise_stats(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    n_frames = cfg.model.n_frames
    res = cfg.data.resolution
    grid = [(0.0, 0.0), (0.2, 0.3), (0.4, 0.3), (0.6, 0.3)]
    if (cfg.noise.phi, cfg.noise.tau) not in grid:
        grid.append((cfg.noise.phi, cfg.noise.tau))
    rows = []
    print(f"{'phi':>5} {'tau':>5} {'rho_adj':>9} {'mean':>9} {'std':>8}   ({args.clips} clips)")
    for phi, tau in grid:
        arma = ARMAParams(phi=phi, tau=tau)
        rhos, means, stds = [], [], []
        for i in range(args.clips):
            clip = sample_temporal(
                (n_frames, 3, res, res), arma, derive_seed(cfg.seed, "stats", phi, tau, i)
            )
            stats = correlation_stats(clip)
            rhos.append(stats.rho_adjacent)
            means.extend(stats.per_frame_mean)
            stds.extend(stats.per_frame_std)
        row = {
            "phi": phi,
            "tau": tau,
            "rho_adjacent": sum(rhos) / len(rhos),
            "mean": sum(means) / len(means),
            "std": sum(stds) / len(stds),
        }
        rows.append(row)
        print(f"{phi:>5.2f} {tau:>5.2f} {row['rho_adjacent']:>9.4f} "
              f"{row['mean']:>9.2e} {row['std']:>8.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2) + "\n")
    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fixed_tau = [r for r in rows if r["tau"] == 0.3]
        plt.figure(figsize=(5, 3.5))
        plt.plot([r["phi"] for r in fixed_tau], [r["rho_adjacent"] for r in fixed_tau], "o-")
        plt.xlabel("phi")
        plt.ylabel("adjacent-frame correlation")
        plt.title("tau = 0.3")
        plt.tight_layout()
        plt.savefig(args.plot, dpi=120)
        print(f"plot: {args.plot}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="clearvid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="YAML run config (defaults if omitted)")
        p.add_argument("--seed", type=int, default=None, help="override the global seed")

    p = sub.add_parser("gen-data", help="generate the synthetic weather corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the denoiser on the seen-weather corpus")
    common(p)
    p.add_argument("--corpus", required=True, help="corpus train split directory")
    p.add_argument("--out", required=True, help="run directory for checkpoint and logs")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("restore", help="restore degraded video(s) with optional adaptation")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="video frame dir, or dir of video dirs")
    p.add_argument("--out", required=True)
    p.add_argument("--tta", choices=("on", "off"), default="on")
    p.set_defaults(fn=cmd_restore)

    p = sub.add_parser("eval", help="PSNR/SSIM report for restored videos")
    common(p)
    p.add_argument("--restored", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--manifest", default=None, help="split dir holding manifest.json")
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("noise-stats", help="correlation diagnostics of the noise model")
    common(p)
    p.add_argument("--clips", type=int, default=200)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None)
    p.set_defaults(fn=cmd_noise_stats)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _NUMERIC_ERRORS as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return 3
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ClearvidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
