import json
from pathlib import Path

import pytest
import yaml

from clearvid.cli import main

# settings small enough that the whole CLI pipeline runs in seconds
TINY_RUN_CONFIG = {
    "seed": 123,
    "data": {
        "n_train_per_kind": 2,
        "n_test_seen_per_kind": 1,
        "n_test_unseen_per_combo": 1,
        "n_frames": 8,
        "resolution": 32,
        "intensity": 0.6,
    },
    "model": {"width": 4, "n_blocks": 2, "n_frames": 5, "time_embed_dim": 8},
    "schedule": {"T": 50, "beta_start": 1e-4, "beta_end": 0.02, "n_ddim_steps": 5},
    "train": {
        "total_iters": 3,
        "batch_clips": 2,
        "frames_per_clip": 5,
        "crop_size": 16,
    },
    "tta": {"n_tubelets": 2, "tubelet_size": 8, "adapt_lr": 1e-4, "clip_stride": 3},
}


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """Config file, generated corpus, and a 3-iteration checkpoint."""
    root = tmp_path_factory.mktemp("tiny_run")
    config = root / "config.yaml"
    config.write_text(yaml.safe_dump(TINY_RUN_CONFIG))

    corpus = root / "corpus"
    assert main(["gen-data", "--config", str(config), "--out", str(corpus)]) == 0

    run_dir = root / "run"
    assert main([
        "train", "--config", str(config),
        "--corpus", str(corpus / "train"), "--out", str(run_dir),
    ]) == 0

    return {
        "root": root,
        "config": config,
        "corpus": corpus,
        "run_dir": run_dir,
        "checkpoint": run_dir / "checkpoint.ckpt",
    }


def read_jsonl(path: Path):
    return [json.loads(line) for line in path.read_text().splitlines() if line]
