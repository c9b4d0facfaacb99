import pytest
import torch

import clearvid.tta as tta_mod
from clearvid.data import FrameSequence, VideoClip
from clearvid.denoiser import DenoiserConfig, init_weights
from clearvid.errors import AdaptationFaultError, InsufficientFramesError, ParameterError
from clearvid.noise import ARMAParams
from clearvid.schedule import make_linear_schedule
from clearvid.tta import (
    TTAConfig,
    adapt_and_restore,
    integrate_overlap,
    restore_stream,
    tsc_adapt_step,
    tubelet_crop,
)

TINY = DenoiserConfig(width=4, n_blocks=2, n_frames=5, in_channels=3, time_embed_dim=8)
ARMA = ARMAParams(0.6, 0.3)


@pytest.fixture(scope="module")
def sched():
    return make_linear_schedule(50, 1e-4, 0.02, n_ddim_steps=5)


@pytest.fixture(scope="module")
def theta():
    return init_weights(TINY, seed=10)


def make_clip(seed, n=5, res=16, index=1, start=0):
    gen = torch.Generator().manual_seed(seed)
    return VideoClip(torch.rand(n, 3, res, res, generator=gen), clip_index=index, start=start)


def cfg(**kw):
    base = dict(n_tubelets=3, tubelet_size=8, adapt_lr=1e-4, clip_stride=3, seed=0)
    base.update(kw)
    return TTAConfig(**base)


def test_tubelet_crop_positions_and_determinism():
    deg, res = make_clip(1), make_clip(2)
    a = tubelet_crop(deg, res, n=5, size=8, seed=3)
    b = tubelet_crop(deg, res, n=5, size=8, seed=3)
    assert a.positions == b.positions
    assert torch.equal(a.degraded, b.degraded)
    assert a.degraded.shape == (5, 5, 3, 8, 8)
    for y, x in a.positions:
        assert 0 <= y <= 8 and 0 <= x <= 8
    # same windows cut from both clips
    y, x = a.positions[0]
    assert torch.equal(a.degraded[0], deg.frames[:, :, y : y + 8, x : x + 8])
    assert torch.equal(a.restored[0], res.frames[:, :, y : y + 8, x : x + 8])


def test_tubelet_crop_full_frame():
    deg, res = make_clip(1), make_clip(2)
    pair = tubelet_crop(deg, res, n=4, size=16, seed=0)
    assert pair.positions == [(0, 0)] * 4
    assert torch.equal(pair.degraded[0], deg.frames)


def test_tubelet_crop_size_error():
    deg, res = make_clip(1), make_clip(2)
    with pytest.raises(ParameterError):
        tubelet_crop(deg, res, n=2, size=32, seed=0)


def test_adapt_step_zero_lr_keeps_weights(theta, sched):
    w = theta.clone()
    before = {n: p.clone() for n, p in w.named_parameters()}
    pair = tubelet_crop(make_clip(1), make_clip(2), n=3, size=8, seed=4)
    w, loss = tsc_adapt_step(w, pair, 50, sched, ARMA, 0.0, cfg(adapt_lr=0.0), seed=5)
    assert loss > 0
    for n, p in w.named_parameters():
        assert torch.equal(before[n], p), n


def test_adapt_step_freezes_last_layer(theta, sched):
    w = theta.clone()
    before = {n: p.clone() for n, p in w.named_parameters()}
    pair = tubelet_crop(make_clip(1), make_clip(2), n=3, size=8, seed=4)
    w, _ = tsc_adapt_step(w, pair, 50, sched, ARMA, 1e-3, cfg(adapt_lr=1e-3), seed=5)
    for name in w.last_layer_names:
        assert torch.equal(before[name], dict(w.named_parameters())[name]), name
    moved = [
        n for n, p in w.named_parameters()
        if n not in w.last_layer_names and not torch.equal(before[n], p)
    ]
    assert moved


def test_adapt_step_descends_on_same_batch(theta, sched):
    w = theta.clone()
    pair = tubelet_crop(make_clip(1), make_clip(2), n=3, size=8, seed=4)
    _, loss_before = tsc_adapt_step(w, pair, 25, sched, ARMA, 1e-4, cfg(), seed=7)
    # re-evaluate the identical batch (same derived noise) at the new weights
    _, loss_after = tsc_adapt_step(w, pair, 25, sched, ARMA, 0.0, cfg(adapt_lr=0.0), seed=7)
    assert loss_after < loss_before


def test_adapt_and_restore_first_clip_is_plain_ddim(theta, sched):
    clip = make_clip(20, index=1)
    restored, adapted = adapt_and_restore(clip, None, theta, sched, ARMA, cfg(), seed=1)
    assert restored.frames.shape == clip.frames.shape
    assert restored.frames.min() >= 0 and restored.frames.max() <= 1
    # no adaptation happened: weights equal source bitwise
    for (n, a), (_, b) in zip(adapted.named_parameters(), theta.named_parameters()):
        assert torch.equal(a, b), n


def test_adapt_and_restore_zero_lr_matches_plain(theta, sched):
    clip = make_clip(21, index=2)
    prev = (make_clip(22, index=1), make_clip(23, index=1))
    plain, _ = adapt_and_restore(clip, None, theta, sched, ARMA, cfg(), seed=9)
    zero, _ = adapt_and_restore(clip, prev, theta, sched, ARMA, cfg(adapt_lr=0.0), seed=9)
    assert torch.equal(plain.frames, zero.frames)


def test_adapt_and_restore_records_steps(theta, sched):
    clip = make_clip(24, index=2)
    prev = (make_clip(25, index=1), make_clip(26, index=1))
    records = []
    adapt_and_restore(clip, prev, theta, sched, ARMA, cfg(), seed=3, step_records=records)
    assert len(records) == len(sched.ddim_steps)
    assert [r["timestep"] for r in records] == sorted(sched.ddim_steps, reverse=True)
    assert all(r["clip"] == 2 and r["loss"] > 0 for r in records)


def test_adaptation_changes_output(theta, sched):
    clip = make_clip(27, index=2)
    prev = (make_clip(28, index=1), make_clip(29, index=1))
    plain, _ = adapt_and_restore(clip, None, theta, sched, ARMA, cfg(), seed=11)
    adapted, w = adapt_and_restore(clip, prev, theta, sched, ARMA, cfg(adapt_lr=1e-3), seed=11)
    assert not torch.equal(plain.frames, adapted.frames)
    # source weights untouched by the adaptation
    fresh = init_weights(TINY, seed=10)
    for (n, a), (_, b) in zip(theta.named_parameters(), fresh.named_parameters()):
        assert torch.equal(a, b), n


def test_fault_reverts_to_plain_restoration(theta, sched, monkeypatch):
    clip = make_clip(30, index=2)
    prev = (make_clip(31, index=1), make_clip(32, index=1))
    plain, _ = adapt_and_restore(clip, None, theta, sched, ARMA, cfg(), seed=13)

    def explode(*args, **kwargs):
        raise AdaptationFaultError("synthetic fault")

    monkeypatch.setattr(tta_mod, "tsc_adapt_step", explode)
    faulted, w = adapt_and_restore(clip, prev, theta, sched, ARMA, cfg(), seed=13)
    assert torch.equal(plain.frames, faulted.frames)
    for (n, a), (_, b) in zip(w.named_parameters(), theta.named_parameters()):
        assert torch.equal(a, b), n


def test_integrate_overlap_mean():
    a = VideoClip(torch.zeros(5, 3, 4, 4), clip_index=2, start=3)
    b = VideoClip(torch.ones(5, 3, 4, 4), clip_index=1, start=0)
    out = integrate_overlap(a, b, stride=3)
    assert torch.equal(out.frames[:2], torch.full((2, 3, 4, 4), 0.5))
    assert torch.equal(out.frames[2:], torch.zeros(3, 3, 4, 4))


def test_integrate_overlap_edge_cases():
    a, b = make_clip(1), make_clip(2)
    unchanged = integrate_overlap(a, b, stride=5)
    assert torch.equal(unchanged.frames, a.frames)
    # overlapped content identical in both clips: averaging is a no-op
    cur_frames = make_clip(3).frames
    cur_frames[:3] = b.frames[2:]
    cur = VideoClip(cur_frames, clip_index=2, start=2)
    same = integrate_overlap(cur, b, stride=2)
    assert torch.equal(same.frames, cur.frames)
    with pytest.raises(ParameterError):
        integrate_overlap(a, b, stride=0)
    with pytest.raises(ParameterError):
        integrate_overlap(a, b, stride=6)


def test_restore_stream_single_clip(theta, sched):
    seq = FrameSequence(frames=torch.rand(5, 3, 16, 16))
    out = restore_stream(seq, theta, sched, ARMA, cfg(), seed=2)
    assert out.frames.shape == seq.frames.shape


def test_restore_stream_length_and_determinism(theta, sched):
    gen = torch.Generator().manual_seed(40)
    seq = FrameSequence(frames=torch.rand(13, 3, 16, 16, generator=gen))
    a = restore_stream(seq, theta, sched, ARMA, cfg(), seed=6)
    b = restore_stream(seq, theta, sched, ARMA, cfg(), seed=6)
    assert a.frames.shape == seq.frames.shape
    assert torch.equal(a.frames, b.frames)
    assert a.frames.min() >= 0 and a.frames.max() <= 1


def test_restore_stream_zero_lr_equals_disabled(theta, sched):
    gen = torch.Generator().manual_seed(41)
    seq = FrameSequence(frames=torch.rand(11, 3, 16, 16, generator=gen))
    off = restore_stream(seq, theta, sched, ARMA, cfg(), seed=6, adapt=False)
    zero = restore_stream(seq, theta, sched, ARMA, cfg(adapt_lr=0.0), seed=6, adapt=True)
    assert torch.equal(off.frames, zero.frames)


def test_restore_stream_adaptation_cost(theta, sched):
    gen = torch.Generator().manual_seed(42)
    seq = FrameSequence(frames=torch.rand(11, 3, 16, 16, generator=gen))
    records = []
    restore_stream(seq, theta, sched, ARMA, cfg(), seed=6, step_records=records)
    # clips at 0, 3, 6: clips 2 and 3 adapt, one step per reverse timestep
    assert len(records) == 2 * len(sched.ddim_steps)
    per_clip = {}
    for r in records:
        per_clip.setdefault(r["clip"], 0)
        per_clip[r["clip"]] += 1
    assert per_clip == {2: len(sched.ddim_steps), 3: len(sched.ddim_steps)}


def test_restore_stream_too_short(theta, sched):
    with pytest.raises(InsufficientFramesError):
        restore_stream(FrameSequence(frames=torch.rand(4, 3, 16, 16)), theta, sched, ARMA, cfg(), seed=0)


def test_restore_stream_accumulate_weights(theta, sched):
    gen = torch.Generator().manual_seed(43)
    seq = FrameSequence(frames=torch.rand(11, 3, 16, 16, generator=gen))
    reset = restore_stream(seq, theta, sched, ARMA, cfg(adapt_lr=1e-3), seed=6)
    accum = restore_stream(
        seq, theta, sched, ARMA, cfg(adapt_lr=1e-3, accumulate_weights=True), seed=6
    )
    # carrying weights across clips changes later clips' restorations
    assert not torch.equal(reset.frames[6:], accum.frames[6:])
    assert torch.equal(reset.frames[:3], accum.frames[:3])


def test_tta_config_validation():
    with pytest.raises(ParameterError):
        TTAConfig(n_tubelets=0)
    with pytest.raises(ParameterError):
        TTAConfig(clip_stride=0)
