import numpy as np
import pytest
from scipy import ndimage

from ocdl import evaluation, training
from ocdl.exceptions import AllMasked, EmptySource, PatchTooLarge
from ocdl.training import StreamSample, TrainConfig
from ocdl.types import SolverParams


def fast_config(**kw):
    base = dict(
        K=3,
        p1=5,
        p2=5,
        solver=SolverParams(
            lam=0.05, tau=0.05, max_outer_iters=25, rel_tol=1e-4, tv_inner_iters=8
        ),
        batch_size=2,
        patch_h=16,
        patch_w=16,
        rounds=3,
        rng_seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


def make_frames(count, n=28, seed=0, factor=2, noise_db=30.0):
    spec = evaluation.ExperimentSpec(subsample_factor=factor, noise_psnr_db=noise_db)
    rng = np.random.default_rng(seed)
    mrng = np.random.default_rng(seed + 1)
    frames = []
    for truth in evaluation.synthetic_video(n, n, count, rng):
        y, ops = evaluation.synthesize_measurements(truth, spec, mrng)
        frames.append(StreamSample(y, ops, truth))
    return frames


def test_lowpass_full_mask_is_plain_blur():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((15, 17))
    sigma = 1.25
    out = training.lowpass_mask_aware(y, np.ones_like(y), sigma)
    radius = int(np.ceil(3 * sigma))
    ref = ndimage.gaussian_filter(y, sigma, mode="nearest", radius=radius)
    assert np.allclose(out, ref, atol=1e-12)


def test_lowpass_normalized_quotient_oracle():
    rng = np.random.default_rng(1)
    y = rng.standard_normal((20, 20))
    mask = (rng.random((20, 20)) < 0.4).astype(float)
    sigma = 2.0
    out = training.lowpass_mask_aware(y, mask, sigma)
    radius = int(np.ceil(3 * sigma))
    blur = lambda a: ndimage.gaussian_filter(a, sigma, mode="nearest", radius=radius)
    num, den = blur(mask * y), blur(mask)
    valid = den > 1e-12
    assert np.allclose(out[valid], num[valid] / den[valid], atol=1e-12)


def test_lowpass_fills_fully_blurred_out_regions():
    # Observations confined to one corner: far pixels get the value of the
    # nearest computed pixel instead of a 0/0 artifact.
    y = np.zeros((40, 40))
    mask = np.zeros((40, 40))
    y[:3, :3] = 5.0
    mask[:3, :3] = 1.0
    out = training.lowpass_mask_aware(y, mask, sigma=1.0)
    assert np.all(np.isfinite(out))
    assert out[39, 39] == pytest.approx(out[20, 20])
    assert abs(out[0, 0] - 5.0) < 1e-6


def test_lowpass_rejects_empty_mask():
    with pytest.raises(AllMasked):
        training.lowpass_mask_aware(np.ones((5, 5)), np.zeros((5, 5)), 1.0)


def test_lowpass_is_smooth():
    rng = np.random.default_rng(2)
    y = rng.standard_normal((32, 32))
    mask = (rng.random((32, 32)) < 0.5).astype(float)
    out = training.lowpass_mask_aware(y, mask, sigma=3.0)
    # heavy blur: local variation far below that of the input noise
    assert np.std(np.diff(out, axis=0)) < 0.25 * np.std(np.diff(y, axis=0))


def test_sample_patches_shapes_and_determinism():
    frame = make_frames(1)[0]
    rng1 = np.random.default_rng(42)
    rng2 = np.random.default_rng(42)
    p1 = training.sample_patches(frame, 4, 12, 10, rng1)
    p2 = training.sample_patches(frame, 4, 12, 10, rng2)
    assert len(p1) == 4
    for a, b in zip(p1, p2):
        assert np.array_equal(a.y.data, b.y.data)
        assert a.y.data.shape == (2, 12, 10)
        assert a.ops[0].kind == "identity"
        assert a.ops[1].mask.shape == (12, 10)
        assert a.truth.data.shape == (2, 12, 10)


def test_sample_patches_crops_consistently():
    frame = make_frames(1)[0]
    rng = np.random.default_rng(3)
    (patch,) = training.sample_patches(frame, 1, 16, 16, rng)
    # the patch mask zeroes exactly the same entries as in the full frame
    assert np.all((patch.y.data[1] == 0) | (patch.ops[1].mask == 1))


def test_sample_patches_too_large():
    frame = make_frames(1, n=20)[0]
    with pytest.raises(PatchTooLarge):
        training.sample_patches(frame, 1, 30, 10, np.random.default_rng(0))


def test_init_dictionary_deltas_and_random():
    cfg = fast_config(K=4, init=training.INIT_DELTAS)
    d = training.init_dictionary(cfg, np.random.default_rng(0))
    assert d.kernels.shape == (2, 4, 5, 5)
    for k in range(4):
        flat = d.kernels[0, k].ravel()
        assert np.sum(flat == 1.0) == 1 and np.sum(flat != 0.0) == 1
    # distinct shifts per kernel
    positions = {int(np.argmax(d.kernels[0, k])) for k in range(4)}
    assert len(positions) == 4

    cfg_r = fast_config(init=training.INIT_RANDOM)
    dr = training.init_dictionary(cfg_r, np.random.default_rng(0))
    norms = np.sqrt((dr.kernels**2).sum(axis=(2, 3)))
    assert np.allclose(norms, 1.0, atol=1e-12)


def test_train_round_descends_surrogate():
    frame = make_frames(1)[0]
    cfg = fast_config()
    rng = np.random.default_rng(cfg.rng_seed)
    d = training.init_dictionary(cfg, rng)
    mem = training.MemoryState.zeros(2, cfg.K, (cfg.p1, cfg.p2))
    batch = training.sample_patches(frame, cfg.batch_size, cfg.patch_h, cfg.patch_w, rng)
    d2, mem2, rows = training.train_round(d, mem, batch, cfg)
    assert mem2.t == 1
    assert len(rows) == cfg.batch_size
    for row in rows:
        assert row["surrogate_after"] <= row["surrogate_before"] + 1e-12
        assert 0.0 <= row["sparsity"] <= 1.0
        assert np.isfinite(row["cost"])


def test_train_stream_consumes_one_frame_per_round():
    frames = make_frames(5)
    cfg = fast_config(rounds=3)
    it = iter(frames)
    training.train_stream(it, cfg)
    assert len(list(it)) == 2  # two frames left untouched


def test_train_stream_empty_source_raises():
    cfg = fast_config()
    with pytest.raises(EmptySource):
        training.train_stream(iter([]), cfg)


def test_train_stream_zero_rounds_returns_init():
    frames = make_frames(1)
    cfg = fast_config(rounds=0)
    d, log = training.train_stream(iter(frames), cfg)
    expect = training.init_dictionary(cfg, np.random.default_rng(cfg.rng_seed))
    assert np.array_equal(d.kernels, expect.kernels)
    assert log == []


def test_train_stream_deterministic():
    frames = make_frames(3)
    cfg = fast_config(rounds=3)
    d1, log1 = training.train_stream(iter(frames), cfg)
    d2, log2 = training.train_stream(iter(frames), cfg)
    assert d1.kernels.tobytes() == d2.kernels.tobytes()
    assert [r["cost"] for r in log1] == [r["cost"] for r in log2]


def test_checkpoint_resume_is_bit_identical(tmp_path):
    frames = make_frames(4)
    cfg = fast_config(rounds=4, checkpoint_every=2)
    d_full, _ = training.train_stream(iter(frames), cfg, checkpoint_dir=str(tmp_path))
    ck = str(tmp_path / "checkpoint-0002")
    d_res, log_res = training.train_stream(iter(frames), cfg, resume=ck)
    assert d_full.kernels.tobytes() == d_res.kernels.tobytes()
    assert {r["round"] for r in log_res} == {2, 3}


def test_checkpoint_roundtrip_state(tmp_path):
    frames = make_frames(2)
    cfg = fast_config(rounds=2, checkpoint_every=1)
    training.train_stream(iter(frames), cfg, checkpoint_dir=str(tmp_path))
    round_no, d, mem, rng = training.load_checkpoint(str(tmp_path / "checkpoint-0002"))
    assert round_no == 2
    assert mem.t == 2
    assert d.kernels.shape == (2, cfg.K, cfg.p1, cfg.p2)
    # restored generator continues the stream deterministically
    assert isinstance(rng.integers(0, 10), (int, np.integer))


def test_log_csv_column_order():
    frames = make_frames(1)
    cfg = fast_config(rounds=1)
    _, log = training.train_stream(iter(frames), cfg)
    text = training.log_to_csv(log)
    lines = text.strip().splitlines()
    assert lines[0] == ",".join(training.TRAIN_LOG_FIELDS)
    assert len(lines) == 1 + len(log)
    assert lines[1].startswith("0,0,")


def test_threaded_batch_coding_matches_serial(monkeypatch):
    frame = make_frames(1)[0]
    cfg = fast_config()
    rng = np.random.default_rng(0)
    d = training.init_dictionary(cfg, rng)
    batch = training.sample_patches(frame, 3, 16, 16, rng)
    monkeypatch.delenv("OCDL_THREADS", raising=False)
    serial = training.code_batch(d, batch, cfg)
    monkeypatch.setenv("OCDL_THREADS", "3")
    threaded = training.code_batch(d, batch, cfg)
    for (xs, rs), (xt, rt) in zip(serial, threaded):
        assert np.array_equal(xs, xt)
        assert np.array_equal(rs.alpha_hat.data, rt.alpha_hat.data)


def test_config_from_mapping_roundtrip():
    cfg = TrainConfig.from_mapping(
        {"K": 6, "p1": 7, "p2": 7, "lambda": 0.2, "rho": 2.0, "rounds": 9,
         "patch_h": 20, "patch_w": 20}
    )
    assert cfg.K == 6
    assert cfg.solver.lam == 0.2
    assert cfg.solver.rho == 2.0
    assert cfg.rounds == 9
    assert cfg.lowpass_sigma == pytest.approx(7 / 4.0)
