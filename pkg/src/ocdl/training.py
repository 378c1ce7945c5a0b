"""Streaming trainer: centering, patch sampling, coding, memory, updates.

One training round codes a mini-batch of patches against the current
dictionary, folds the batch statistics into the memory, and runs the
projected block-coordinate dictionary update.  Rounds consume one frame
from the stream each; all randomness flows from a single seeded generator
so a (seed, source order, config) triple fully determines the run.
"""

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import coder, io, learning
from .exceptions import AllMasked, EmptySource, PatchTooLarge
from .learning import MemoryState
from .types import (
    Dictionary,
    ImageStack,
    Measurements,
    SensingOp,
    SolverParams,
)

INIT_DELTAS = "deltas"
INIT_RANDOM = "random_unit_norm"

TRAIN_LOG_FIELDS = (
    "round",
    "sample",
    "cost",
    "sparsity",
    "dead_kernels",
    "surrogate_before",
    "surrogate_after",
    "wall_ms",
)


@dataclass(frozen=True)
class TrainConfig:
    K: int = 32
    p1: int = 15
    p2: int = 15
    solver: SolverParams = field(default_factory=SolverParams)
    gamma: float = 0.0
    batch_size: int = 8
    patch_h: int = 50
    patch_w: int = 50
    rounds: int = 100
    rng_seed: int = 0
    init: str = INIT_DELTAS
    lowpass_sigma: float = None
    checkpoint_every: int = 0  # 0 disables checkpointing
    dict_max_sweeps: int = 10
    dict_tol: float = 1e-6

    def __post_init__(self):
        if self.K < 1 or self.p1 < 1 or self.p2 < 1:
            raise ValueError("K, p1, p2 must be positive")
        if self.patch_h < self.p1 or self.patch_w < self.p2:
            raise ValueError("patch must be at least kernel-sized")
        if self.batch_size < 1 or self.rounds < 0:
            raise ValueError("bad batch_size or rounds")
        if self.init not in (INIT_DELTAS, INIT_RANDOM):
            raise ValueError("unknown init %r" % self.init)
        if self.lowpass_sigma is None:
            object.__setattr__(self, "lowpass_sigma", self.p1 / 4.0)
        if self.lowpass_sigma <= 0:
            raise ValueError("lowpass_sigma must be positive")

    @classmethod
    def from_mapping(cls, cfg):
        solver_keys = {
            "rho": "rho",
            "lambda": "lam",
            "tau": "tau",
            "max_outer_iters": "max_outer_iters",
            "rel_tol": "rel_tol",
            "tv_inner_iters": "tv_inner_iters",
            "backtrack_eta": "backtrack_eta",
            "L0": "L0",
        }
        solver = SolverParams(
            **{dst: cfg[src] for src, dst in solver_keys.items() if src in cfg}
        )
        own = {
            k: cfg[k]
            for k in (
                "K",
                "p1",
                "p2",
                "gamma",
                "batch_size",
                "patch_h",
                "patch_w",
                "rounds",
                "rng_seed",
                "init",
                "lowpass_sigma",
                "checkpoint_every",
                "dict_max_sweeps",
                "dict_tol",
            )
            if k in cfg
        }
        return cls(solver=solver, **own)


@dataclass(frozen=True)
class StreamSample:
    """One streamed frame: measurements, sensing ops, optional truth."""

    y: Measurements
    ops: tuple
    truth: ImageStack = None

    @property
    def image_shape(self):
        return self.y.data.shape[1:]


def lowpass_mask_aware(y_modality, mask, sigma):
    """Normalized Gaussian blur of masked data; nearest-neighbor fill.

    Computes blur(mask * y) / blur(mask) where the blurred mask exceeds
    1e-12 and fills the remaining pixels from their nearest computed pixel
    (Euclidean distance).  Blur: std sigma, radius ceil(3 sigma),
    replicate boundary.
    """
    y_modality = np.asarray(y_modality, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if not np.any(mask):
        raise AllMasked("mask has no observed pixel")
    radius = int(np.ceil(3.0 * sigma))
    blur = lambda a: ndimage.gaussian_filter(a, sigma, mode="nearest", radius=radius)
    num = blur(mask * y_modality)
    den = blur(mask)
    valid = den > 1e-12
    out = np.zeros_like(y_modality)
    out[valid] = num[valid] / den[valid]
    if not valid.all():
        _, (ii, jj) = ndimage.distance_transform_edt(~valid, return_indices=True)
        out = out[ii, jj]
    return out


def lowpass_stack(sample, sigma):
    """Per-modality mask-aware low-pass component of a stream sample."""
    L = sample.y.data.shape[0]
    shape = sample.image_shape
    out = np.empty((L,) + shape)
    for l in range(L):
        op = sample.ops[l]
        mask = op.mask if op.kind == "mask" else np.ones(shape)
        out[l] = lowpass_mask_aware(sample.y.data[l], mask, sigma)
    return out


def sample_patches(sample, count, patch_h, patch_w, rng):
    """count random patches (uniform top-left positions) of a frame."""
    n1, n2 = sample.image_shape
    if patch_h > n1 or patch_w > n2:
        raise PatchTooLarge("patch %dx%d in frame %dx%d" % (patch_h, patch_w, n1, n2))
    patches = []
    for _ in range(count):
        i = int(rng.integers(0, n1 - patch_h + 1))
        j = int(rng.integers(0, n2 - patch_w + 1))
        sl = (slice(i, i + patch_h), slice(j, j + patch_w))
        ops = tuple(
            op if op.kind == "identity" else SensingOp.diagonal(op.mask[sl])
            for op in sample.ops
        )
        truth = None
        if sample.truth is not None:
            truth = ImageStack(
                sample.truth.data[(slice(None),) + sl], sample.truth.modality_names
            )
        patches.append(
            StreamSample(Measurements(sample.y.data[(slice(None),) + sl]), ops, truth)
        )
    return patches


def init_dictionary(config, rng, num_modalities=2):
    """Initial dictionary: shifted unit impulses or random unit-norm."""
    K, p1, p2 = config.K, config.p1, config.p2
    if config.init == INIT_DELTAS:
        kernels = np.zeros((num_modalities, K, p1, p2))
        stride = max(1, (p1 * p2) // K)
        for k in range(K):
            flat = (k * stride) % (p1 * p2)
            kernels[:, k, flat // p2, flat % p2] = 1.0
    else:
        kernels = rng.standard_normal((num_modalities, K, p1, p2))
        kernels /= np.sqrt((kernels**2).sum(axis=(2, 3), keepdims=True))
    return Dictionary(kernels)


def _num_workers():
    raw = os.environ.get("OCDL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _code_sample(dictionary, sample, config):
    x_lo = lowpass_stack(sample, config.lowpass_sigma)
    result = coder.solve(sample.y, sample.ops, dictionary, x_lo, config.solver)
    return x_lo, result


def code_batch(dictionary, batch, config):
    """Code a mini-batch; samples are independent and may run in parallel."""
    workers = _num_workers()
    if workers == 1 or len(batch) == 1:
        return [_code_sample(dictionary, s, config) for s in batch]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: _code_sample(dictionary, s, config), batch))


def _sparsity_fraction(alpha):
    group_norms = np.sqrt(np.sum(alpha * alpha, axis=0))
    return float(np.mean(group_norms == 0.0))


def train_round(dictionary, mem, batch, config):
    """One round: code batch, update memory, update dictionary.

    Returns (dictionary, memory, diagnostics list with one entry per
    sample plus round-level fields).
    """
    t0 = time.perf_counter()
    coded = code_batch(dictionary, batch, config)
    pairs = []
    rows = []
    for idx, (x_lo, result) in enumerate(coded):
        x_hi = result.x_hat.data - x_lo
        pairs.append((x_hi, result.alpha_hat.data))
        rows.append(
            {
                "sample": idx,
                "cost": result.cost_trace[-1],
                "sparsity": _sparsity_fraction(result.alpha_hat.data),
            }
        )
    mem = learning.memory_update(mem, pairs)
    surrogate_before = learning.surrogate_value(mem, dictionary)
    dictionary = learning.dict_update(
        mem, dictionary, config.dict_max_sweeps, config.dict_tol
    )
    surrogate_after = learning.surrogate_value(mem, dictionary)
    wall_ms = (time.perf_counter() - t0) * 1e3
    for row in rows:
        row.update(
            dead_kernels=learning.dead_kernel_count(mem),
            surrogate_before=surrogate_before,
            surrogate_after=surrogate_after,
            wall_ms=wall_ms,
        )
    return dictionary, mem, rows


def save_checkpoint(path, round_no, dictionary, mem, rng):
    os.makedirs(path, exist_ok=True)
    io.write_tensor(os.path.join(path, "dict.mdt"), dictionary.kernels, dtype="f64")
    io.write_tensor(os.path.join(path, "mem_b.mdt"), mem.b, dtype="f64")
    io.write_tensor(os.path.join(path, "mem_c.mdt"), mem.c, dtype="f64")
    state = {
        "round": round_no,
        "t": mem.t,
        "gamma": mem.gamma,
        "rng_state": rng.bit_generator.state,
    }
    with open(os.path.join(path, "state.json"), "w", encoding="utf-8") as fh:
        json.dump(state, fh, sort_keys=True)


def load_checkpoint(path):
    kernels = io.read_tensor(os.path.join(path, "dict.mdt"))
    b = io.read_tensor(os.path.join(path, "mem_b.mdt"))
    c = io.read_tensor(os.path.join(path, "mem_c.mdt"))
    with open(os.path.join(path, "state.json"), "r", encoding="utf-8") as fh:
        state = json.load(fh)
    mem = MemoryState(b=b, c=c, t=state["t"], gamma=state["gamma"])
    rng = np.random.default_rng()
    rng.bit_generator.state = state["rng_state"]
    return state["round"], Dictionary(kernels), mem, rng


def train_stream(source, config, checkpoint_dir=None, resume=None, num_modalities=2):
    """Run the online learning loop over a stream of frames.

    source yields StreamSample frames; each round consumes one frame and
    codes config.batch_size random patches from it.  Returns the final
    Dictionary and the training log (list of row dicts).  With resume
    (a checkpoint path) the already-processed frames are skipped and the
    run continues bit-identically to an uninterrupted one.
    """
    source = iter(source)
    if resume is not None:
        start_round, dictionary, mem, rng = load_checkpoint(resume)
    else:
        start_round = 0
        rng = np.random.default_rng(config.rng_seed)
        dictionary = init_dictionary(config, rng, num_modalities)
        mem = MemoryState.zeros(
            num_modalities, config.K, (config.p1, config.p2), config.gamma
        )
    log = []
    exhausted = object()
    for _ in range(start_round):
        if next(source, exhausted) is exhausted:
            raise EmptySource("stream shorter than checkpoint round")
    for round_no in range(start_round, config.rounds):
        frame = next(source, exhausted)
        if frame is exhausted:
            if round_no == 0:
                raise EmptySource("stream yielded no samples")
            break
        batch = sample_patches(
            frame, config.batch_size, config.patch_h, config.patch_w, rng
        )
        dictionary, mem, rows = train_round(dictionary, mem, batch, config)
        for row in rows:
            row["round"] = round_no
            log.append(row)
        if (
            checkpoint_dir
            and config.checkpoint_every
            and (round_no + 1) % config.checkpoint_every == 0
        ):
            save_checkpoint(
                os.path.join(checkpoint_dir, "checkpoint-%04d" % (round_no + 1)),
                round_no + 1,
                dictionary,
                mem,
                rng,
            )
    if config.rounds == 0 and next(source, exhausted) is exhausted:
        raise EmptySource("stream yielded no samples")
    return dictionary, log


def log_to_csv(rows):
    """Render the training log in the fixed column order."""
    lines = [",".join(TRAIN_LOG_FIELDS)]
    for row in rows:
        lines.append(",".join(repr(row[f]) if isinstance(row[f], float) else str(row[f])
                              for f in TRAIN_LOG_FIELDS))
    return "\n".join(lines) + "\n"
