import numpy as np
import pytest
import torch
from skimage.metrics import structural_similarity as skimage_ssim

from clearvid.data import FrameSequence, save_frames, write_manifest, ManifestRecord
from clearvid.errors import ShapeError
from clearvid.metrics import evaluate_corpus, evaluate_sequences, psnr, ssim


def seq(frames):
    return FrameSequence(frames=frames)


def test_psnr_identical_capped():
    a = torch.rand(3, 3, 16, 16)
    assert psnr(seq(a), seq(a.clone())) == 100.0


def test_psnr_unit_error():
    a = torch.zeros(2, 3, 8, 8)
    b = torch.ones(2, 3, 8, 8)
    assert psnr(seq(a), seq(b)) == pytest.approx(0.0, abs=1e-9)


def test_psnr_uniform_error():
    a = torch.full((2, 3, 8, 8), 0.5, dtype=torch.float64)
    b = a + 0.1
    assert psnr(seq(a), seq(b)) == pytest.approx(20.0, abs=1e-9)


def test_psnr_symmetric_and_monotone():
    gen = torch.Generator().manual_seed(0)
    a = torch.rand(2, 3, 16, 16, generator=gen)
    b = torch.rand(2, 3, 16, 16, generator=gen)
    assert psnr(seq(a), seq(b)) == pytest.approx(psnr(seq(b), seq(a)))
    closer = a + 0.25 * (b - a)
    assert psnr(seq(a), seq(closer)) > psnr(seq(a), seq(b))


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(seq(torch.rand(2, 3, 8, 8)), seq(torch.rand(2, 3, 8, 9)))


def test_ssim_identical():
    a = torch.rand(2, 3, 32, 32)
    assert ssim(seq(a), seq(a.clone())) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_offset_closed_form():
    # constant patches: variance terms vanish, windows are all identical
    c = 0.25
    a = torch.full((1, 1, 32, 32), c)
    b = a + 0.5
    c1 = 0.01**2
    expected = (2 * c * (c + 0.5) + c1) / (c * c + (c + 0.5) ** 2 + c1)
    assert ssim(seq(a), seq(b)) == pytest.approx(expected, abs=1e-9)


def _reference_ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Frame/channel-averaged scikit-image SSIM with the same conventions."""
    vals = []
    for k in range(x.shape[0]):
        for c in range(x.shape[1]):
            vals.append(
                skimage_ssim(
                    x[k, c], y[k, c],
                    gaussian_weights=True, sigma=1.5, win_size=11,
                    use_sample_covariance=False, data_range=1.0,
                )
            )
    return float(np.mean(vals))


def test_ssim_matches_reference_implementation():
    gen = torch.Generator().manual_seed(7)
    for trial in range(20):
        a = torch.rand(1, 3, 48, 48, generator=gen)
        noise = 0.15 * torch.randn(1, 3, 48, 48, generator=gen)
        b = (a + noise).clamp(0, 1)
        mine = ssim(seq(a), seq(b))
        ref = _reference_ssim(a.numpy().astype(np.float64), b.numpy().astype(np.float64))
        assert mine == pytest.approx(ref, abs=0.005), f"trial {trial}"


def test_ssim_inverted_binary_contrast():
    a = torch.zeros(1, 1, 32, 32)
    a[..., ::2, :] = 1.0
    b = 1.0 - a
    mine = ssim(seq(a), seq(b))
    ref = _reference_ssim(a.numpy().astype(np.float64), b.numpy().astype(np.float64))
    assert mine == pytest.approx(ref, abs=0.005)


def test_ssim_symmetric():
    gen = torch.Generator().manual_seed(1)
    a = torch.rand(1, 3, 32, 32, generator=gen)
    b = torch.rand(1, 3, 32, 32, generator=gen)
    assert ssim(seq(a), seq(b)) == pytest.approx(ssim(seq(b), seq(a)), abs=1e-12)


def test_ssim_window_too_large():
    with pytest.raises(ShapeError):
        ssim(seq(torch.rand(1, 1, 8, 8)), seq(torch.rand(1, 1, 8, 8)))


def test_evaluate_sequences_aggregation():
    gen = torch.Generator().manual_seed(2)
    clean = torch.rand(2, 3, 32, 32, generator=gen)
    pairs = {
        "rain_000": (seq(clean.clone()), seq(clean), "rain"),
        "haze_000": (seq((clean + 0.1).clamp(0, 1)), seq(clean), "haze"),
    }
    report = evaluate_sequences(pairs)
    assert report.per_video["rain_000"]["psnr"] == 100.0
    assert report.per_video["rain_000"]["ssim"] == pytest.approx(1.0)
    m1 = report.per_kind["rain"]["psnr"]
    m2 = report.per_kind["haze"]["psnr"]
    assert report.overall["psnr"] == pytest.approx((m1 + m2) / 2)
    assert "overall" in report.format_table()


def test_evaluate_corpus_on_disk(tmp_path):
    gen = torch.Generator().manual_seed(3)
    records = []
    for vid, kind in (("rain_000", "rain"), ("snow_000", "snow")):
        clean = torch.rand(3, 3, 32, 32, generator=gen)
        save_frames(seq(clean), tmp_path / "clean" / vid)
        save_frames(seq(clean), tmp_path / "restored" / vid)
        records.append(
            ManifestRecord(video_id=vid, role="clean", kind=kind, intensity=0.5,
                           seed=0, n_frames=3, resolution=32)
        )
    write_manifest(records, tmp_path)
    report = evaluate_corpus(tmp_path / "restored", tmp_path / "clean", tmp_path)
    assert report.overall["psnr"] == 100.0
    assert report.overall["ssim"] == pytest.approx(1.0)
    assert set(report.per_kind) == {"rain", "snow"}


def test_single_video_overall(tmp_path):
    gen = torch.Generator().manual_seed(4)
    clean = torch.rand(2, 3, 32, 32, generator=gen)
    noisy = (clean + 0.05 * torch.randn(2, 3, 32, 32, generator=gen)).clamp(0, 1)
    save_frames(seq(clean), tmp_path / "clean" / "haze_000")
    save_frames(seq(noisy), tmp_path / "restored" / "haze_000")
    write_manifest(
        [ManifestRecord("haze_000", "clean", "haze", 0.5, 0, 2, 32)], tmp_path
    )
    report = evaluate_corpus(tmp_path / "restored", tmp_path / "clean", tmp_path)
    assert report.overall["psnr"] == pytest.approx(report.per_video["haze_000"]["psnr"])
