"""Synthetic scenes, measurement synthesis, metrics and experiment harness.

The harness mirrors the intensity-depth setup: modality 0 is a fully
observed intensity image, modality 1 a randomly subsampled depth map, with
white Gaussian noise at a prescribed PSNR on both.  Quality is the
prediction PSNR over the missing depth pixels.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import coder, learning, training
from .exceptions import AllMasked, NoMissingPixels
from .training import StreamSample, TrainConfig
from .types import ImageStack, Measurements, SensingOp

PSNR_SENTINEL = 99.0
PEAK_CONVENTION = "dynamic_range(x_ref)"

SCENE_SYNTHETIC = "synthetic_shapes"
SCENE_FROM_FILES = "from_files"
PREDICT_DICT = "dict_plus_lowpass"
PREDICT_X = "x_hat"

METRICS_HEADER = "method,factor,seed,psnr_db,wall_ms"
STREAM_HEADER = "frame,psnr_delta_db"


@dataclass(frozen=True)
class ExperimentSpec:
    scene: str = SCENE_SYNTHETIC
    subsample_factor: int = 2
    noise_psnr_db: float = 30.0
    train: TrainConfig = field(default_factory=TrainConfig)
    prediction: str = PREDICT_DICT

    def __post_init__(self):
        if self.subsample_factor < 1:
            raise ValueError("subsample_factor must be >= 1")
        if not (math.isfinite(self.noise_psnr_db) or self.noise_psnr_db == math.inf):
            raise ValueError("noise_psnr_db must be finite or +inf")
        if self.prediction not in (PREDICT_DICT, PREDICT_X):
            raise ValueError("unknown prediction mode %r" % self.prediction)


# -- synthetic scenes -------------------------------------------------------


def _draw_shapes(n1, n2, rng):
    shapes = []
    for _ in range(int(rng.integers(3, 5))):
        kind = "rect" if rng.random() < 0.5 else "disc"
        depth_level = 0.25 + 0.6 * rng.random()
        slope = 0.08 * (rng.random(2) - 0.5)
        if kind == "rect":
            h = int(rng.integers(n1 // 6, n1 // 2))
            w = int(rng.integers(n2 // 6, n2 // 2))
            i0 = int(rng.integers(0, n1 - h + 1))
            j0 = int(rng.integers(0, n2 - w + 1))
            geo = (i0, j0, h, w)
        else:
            r = int(rng.integers(max(2, n1 // 10), n1 // 4))
            ci = int(rng.integers(0, n1))
            cj = int(rng.integers(0, n2))
            geo = (ci, cj, r)
        shapes.append(
            {
                "kind": kind,
                "geo": geo,
                "depth_level": depth_level,
                "slope": slope,
                "velocity": (0.0, 0.0),
            }
        )
    texture = {
        "amp": 0.03,
        "freq": (rng.uniform(0.04, 0.1), rng.uniform(0.04, 0.1)),
        "phase": rng.uniform(0, 2 * np.pi),
    }
    return shapes, texture


def _render_scene(n1, n2, shapes, texture, frame=0):
    yy, xx = np.mgrid[0:n1, 0:n2].astype(np.float64)
    u = xx / max(n1, n2)
    v = yy / max(n1, n2)
    depth = 0.15 + 0.08 * u + 0.04 * v
    # intensity is a monotone function of local depth, so depth
    # discontinuities always show up in the intensity modality too
    intensity = 0.9 - 0.75 * depth
    for s in shapes:
        di = s["velocity"][0] * frame
        dj = s["velocity"][1] * frame
        if s["kind"] == "rect":
            i0, j0, h, w = s["geo"]
            i0 = int(round(i0 + di)) % n1
            j0 = int(round(j0 + dj)) % n2
            mask = np.zeros((n1, n2), dtype=bool)
            mask[i0 : i0 + h, j0 : j0 + w] = True
        else:
            ci, cj, r = s["geo"]
            ci = (ci + di) % n1
            cj = (cj + dj) % n2
            mask = (yy - ci) ** 2 + (xx - cj) ** 2 <= r * r
        d_region = s["depth_level"] + s["slope"][0] * u + s["slope"][1] * v
        depth[mask] = d_region[mask]
        intensity[mask] = (0.9 - 0.75 * d_region)[mask]
    fy, fx = texture["freq"]
    intensity = intensity + texture["amp"] * np.sin(
        2 * np.pi * (fy * yy + fx * xx) + texture["phase"]
    )
    depth = np.clip(depth, 0.0, 1.0)
    intensity = np.clip(intensity, 0.0, 1.0)
    return ImageStack(np.stack([intensity, depth]), ("intensity", "depth"))


def synthetic_scene(n1, n2, rng):
    """Piecewise-smooth two-modality scene with shared edges (L=2)."""
    shapes, texture = _draw_shapes(n1, n2, rng)
    return _render_scene(n1, n2, shapes, texture)


def synthetic_video(n1, n2, frames, rng):
    """A slowly drifting sequence of scenes sharing shape structure."""
    shapes, texture = _draw_shapes(n1, n2, rng)
    for s in shapes:
        s["velocity"] = (float(rng.uniform(-1.5, 1.5)), float(rng.uniform(-1.5, 1.5)))
    return [_render_scene(n1, n2, shapes, texture, f) for f in range(frames)]


# -- measurements and metrics ----------------------------------------------


def dynamic_range(image):
    return float(np.max(image) - np.min(image))


def synthesize_measurements(x_truth, spec, rng):
    """Identity sensing on modality 0; random mask + noise on modality 1.

    The mask keeps ceil(N / factor) uniformly chosen pixels.  Noise std per
    modality satisfies 20 log10(peak / std) = noise_psnr_db with peak the
    modality's dynamic range; masked-out entries of y are stored as 0.
    """
    x = x_truth.data
    L, n1, n2 = x.shape
    ops = [SensingOp.identity()]
    keep = int(np.ceil(n1 * n2 / spec.subsample_factor))
    flat = rng.choice(n1 * n2, size=keep, replace=False)
    mask = np.zeros(n1 * n2)
    mask[flat] = 1.0
    mask = mask.reshape(n1, n2)
    for _ in range(1, L):
        ops.append(SensingOp.diagonal(mask))
    y = np.empty_like(x)
    for l in range(L):
        clean = ops[l].apply(x[l])
        if math.isinf(spec.noise_psnr_db):
            y[l] = clean
        else:
            peak = dynamic_range(x[l])
            sigma = peak / (10.0 ** (spec.noise_psnr_db / 20.0))
            y[l] = clean + ops[l].apply(sigma * rng.standard_normal((n1, n2)))
    return Measurements(y), tuple(ops)


def psnr_missing(x_ref, x_pred, phi, peak=None):
    """PSNR over the pixels with phi == 0 only; capped at the sentinel."""
    x_ref = np.asarray(x_ref, dtype=np.float64)
    x_pred = np.asarray(x_pred, dtype=np.float64)
    phi = np.asarray(phi)
    missing = phi == 0
    if not missing.any():
        raise NoMissingPixels("mask observes every pixel")
    if peak is None:
        peak = dynamic_range(x_ref)
    mse = float(np.mean((x_ref[missing] - x_pred[missing]) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return min(PSNR_SENTINEL, 10.0 * math.log10(peak * peak / mse))


def linear_baseline(y_depth, phi):
    """Inverse-distance interpolation from the 4 nearest observed pixels."""
    y_depth = np.asarray(y_depth, dtype=np.float64)
    phi = np.asarray(phi)
    obs = np.argwhere(phi == 1)
    if obs.shape[0] == 0:
        raise AllMasked("no observed pixel to interpolate from")
    out = y_depth.copy()
    holes = np.argwhere(phi == 0)
    if holes.shape[0] == 0:
        return out
    tree = cKDTree(obs)
    k = min(4, obs.shape[0])
    dist, idx = tree.query(holes, k=k)
    dist = np.atleast_2d(dist.T).T.reshape(holes.shape[0], k)
    idx = np.atleast_2d(idx.T).T.reshape(holes.shape[0], k)
    weights = 1.0 / np.maximum(dist, 1e-12)
    vals = y_depth[obs[idx, 0], obs[idx, 1]]
    filled = (weights * vals).sum(axis=1) / weights.sum(axis=1)
    out[holes[:, 0], holes[:, 1]] = filled
    return out


# -- harness ----------------------------------------------------------------


def reconstruct_sample(sample, dictionary, solver, sigma, mode=PREDICT_DICT):
    """Solve the joint problem on a frame and return the chosen prediction."""
    x_lo = training.lowpass_stack(sample, sigma)
    result = coder.solve(sample.y, sample.ops, dictionary, x_lo, solver)
    if mode == PREDICT_X:
        return coder.predict_x(result), result
    return coder.predict(dictionary, result.alpha_hat, x_lo), result


def _depth_psnr(truth, pred, ops):
    mask = ops[1].mask if ops[1].kind == "mask" else np.ones(truth.data.shape[1:])
    if (mask == 1).all():
        return PSNR_SENTINEL
    return psnr_missing(truth.data[1], pred.data[1], mask)


def run_single(spec, seed, n1=64, n2=64):
    """One scene: linear baseline, delta-dictionary and learned rows."""
    truth = synthetic_scene(n1, n2, np.random.default_rng(seed))
    meas_rng = np.random.default_rng(seed + 100003)
    y, ops = synthesize_measurements(truth, spec, meas_rng)
    frame = StreamSample(y, ops, truth)
    cfg = spec.train
    rows = []

    t0 = time.perf_counter()
    mask = ops[1].mask if ops[1].kind == "mask" else np.ones((n1, n2))
    if (mask == 1).all():
        lin_psnr = PSNR_SENTINEL
    else:
        lin = linear_baseline(y.data[1], mask)
        lin_psnr = psnr_missing(truth.data[1], lin, mask)
    rows.append(_row("linear", spec, seed, lin_psnr, t0))

    rng = np.random.default_rng(cfg.rng_seed)
    delta_dict = training.init_dictionary(cfg, rng, truth.num_modalities)

    t0 = time.perf_counter()
    pred, _ = reconstruct_sample(frame, delta_dict, cfg.solver, cfg.lowpass_sigma, spec.prediction)
    rows.append(_row("proposed-delta-dict", spec, seed, _depth_psnr(truth, pred, ops), t0))

    t0 = time.perf_counter()
    learned, _ = training.train_stream(iter([frame] * cfg.rounds), cfg)
    pred, _ = reconstruct_sample(frame, learned, cfg.solver, cfg.lowpass_sigma, spec.prediction)
    rows.append(_row("proposed-learned", spec, seed, _depth_psnr(truth, pred, ops), t0))
    return rows


def _row(method, spec, seed, psnr, t0):
    return {
        "method": method,
        "factor": spec.subsample_factor,
        "seed": seed,
        "psnr_db": float(psnr),
        "wall_ms": (time.perf_counter() - t0) * 1e3,
    }


def run_experiment(spec, seeds=(0,), n1=64, n2=64):
    """Run the comparison over seeds; returns metric rows."""
    rows = []
    for seed in seeds:
        rows.extend(run_single(spec, seed, n1, n2))
    return rows


def run_stream_trend(spec, num_frames, seed=0, n1=64, n2=64):
    """Fig.-3 style streaming run: per-frame improvement over deltas.

    Starts from a delta dictionary, performs one mini-batch learning round
    per frame, and logs the PSNR gain of the current dictionary over the
    frozen delta dictionary on the full frame.
    """
    cfg = spec.train
    video = synthetic_video(n1, n2, num_frames, np.random.default_rng(seed))
    meas_rng = np.random.default_rng(seed + 200003)
    rng = np.random.default_rng(cfg.rng_seed)
    delta_dict = training.init_dictionary(cfg, rng, 2)
    dictionary = delta_dict
    mem = learning.MemoryState.zeros(2, cfg.K, (cfg.p1, cfg.p2), cfg.gamma)
    rows = []
    for f, truth in enumerate(video):
        y, ops = synthesize_measurements(truth, spec, meas_rng)
        frame = StreamSample(y, ops, truth)
        batch = training.sample_patches(frame, cfg.batch_size, cfg.patch_h, cfg.patch_w, rng)
        dictionary, mem, _ = training.train_round(dictionary, mem, batch, cfg)
        pred_cur, _ = reconstruct_sample(frame, dictionary, cfg.solver, cfg.lowpass_sigma, spec.prediction)
        pred_ref, _ = reconstruct_sample(frame, delta_dict, cfg.solver, cfg.lowpass_sigma, spec.prediction)
        rows.append(
            {
                "frame": f,
                "psnr_delta_db": _depth_psnr(truth, pred_cur, ops)
                - _depth_psnr(truth, pred_ref, ops),
            }
        )
    return rows


# -- CSV schema -------------------------------------------------------------


def metrics_csv(rows):
    lines = ["# peak=%s" % PEAK_CONVENTION, METRICS_HEADER]
    for r in rows:
        lines.append(
            "%s,%d,%d,%r,%r" % (r["method"], r["factor"], r["seed"], r["psnr_db"], r["wall_ms"])
        )
    return "\n".join(lines) + "\n"


def stream_csv(rows):
    lines = [STREAM_HEADER]
    for r in rows:
        lines.append("%d,%r" % (r["frame"], r["psnr_delta_db"]))
    return "\n".join(lines) + "\n"


def parse_metrics_csv(text):
    rows = []
    header = None
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        if header is None:
            if line != METRICS_HEADER:
                raise ValueError("unexpected metrics header %r" % line)
            header = line
            continue
        method, factor, seed, psnr, wall = line.split(",")
        rows.append(
            {
                "method": method,
                "factor": int(factor),
                "seed": int(seed),
                "psnr_db": float(psnr),
                "wall_ms": float(wall),
            }
        )
    return rows
