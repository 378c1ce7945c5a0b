"""Command-line front end: synth, train, reconstruct, eval.

Exit codes: 0 success, 2 configuration error, 3 data error (missing or
malformed inputs), 4 numerical failure.

On-disk frame layout (shared by synth output and train/reconstruct input):

    frame000_y.mdt       measurements [L, n1, n2]
    frame000_mask.mdt    observation mask [n1, n2] for modalities >= 1
    frame000_truth.mdt   ground truth [L, n1, n2] (synth only, optional)
"""

import argparse
import glob
import os
import re
import sys

import numpy as np

from . import evaluation, io, training
from .evaluation import ExperimentSpec
from .exceptions import (
    ConfigError,
    KernelNormViolation,
    NoConvergence,
    NonFiniteCost,
    OcdlError,
)
from .training import StreamSample, TrainConfig
from .types import Dictionary, Measurements, SensingOp

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_NUMERIC_ERRORS = (NonFiniteCost, NoConvergence, KernelNormViolation)


def _load_spec(path):
    try:
        cfg = io.load_config(path)
        train = TrainConfig.from_mapping(cfg)
        fields = {"train": train}
        if "scene" in cfg:
            fields["scene"] = cfg["scene"]
        if "subsample_factor" in cfg:
            fields["subsample_factor"] = cfg["subsample_factor"]
        if "noise_psnr_db" in cfg:
            fields["noise_psnr_db"] = cfg["noise_psnr_db"]
        if "prediction" in cfg:
            fields["prediction"] = cfg["prediction"]
        return ExperimentSpec(**fields), cfg
    except OSError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _frame_ids(data_dir):
    ids = []
    for path in sorted(glob.glob(os.path.join(data_dir, "frame*_y.mdt"))):
        m = re.match(r"frame(\d+)_y\.mdt$", os.path.basename(path))
        if m:
            ids.append(int(m.group(1)))
    return ids


def _load_frame(data_dir, frame_id):
    base = os.path.join(data_dir, "frame%03d" % frame_id)
    y = io.read_tensor(base + "_y.mdt")
    if y.ndim != 3:
        raise OcdlError("frame %d measurements must be rank 3" % frame_id)
    L = y.shape[0]
    mask_path = base + "_mask.mdt"
    if os.path.exists(mask_path):
        mask = io.read_tensor(mask_path)
        ops = (SensingOp.identity(),) + tuple(
            SensingOp.diagonal(mask) for _ in range(1, L)
        )
    else:
        ops = tuple(SensingOp.identity() for _ in range(L))
    truth = None
    if os.path.exists(base + "_truth.mdt"):
        from .types import ImageStack

        truth = ImageStack(io.read_tensor(base + "_truth.mdt"))
    return StreamSample(Measurements(y), ops, truth)


def _load_stream(data_dir):
    ids = _frame_ids(data_dir)
    if not ids:
        raise OcdlError("no frame*_y.mdt files in %s" % data_dir)
    for frame_id in ids:
        yield _load_frame(data_dir, frame_id)


def cmd_synth(args):
    spec, _ = _load_spec(args.config)
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    meas_rng = np.random.default_rng(args.seed + 100003)
    if args.frames > 1:
        scenes = evaluation.synthetic_video(args.height, args.width, args.frames, rng)
    else:
        scenes = [evaluation.synthetic_scene(args.height, args.width, rng)]
    for f, truth in enumerate(scenes):
        y, ops = evaluation.synthesize_measurements(truth, spec, meas_rng)
        base = os.path.join(args.out, "frame%03d" % f)
        io.write_tensor(base + "_y.mdt", y.data, dtype="f64")
        io.write_tensor(base + "_truth.mdt", truth.data, dtype="f64")
        mask = ops[1].mask if len(ops) > 1 and ops[1].kind == "mask" else None
        if mask is not None:
            io.write_tensor(base + "_mask.mdt", mask, dtype="f64")
        if args.previews:
            for l in range(truth.data.shape[0]):
                io.write_pgm(base + "_y_mod%d.pgm" % l, y.data[l])
    print("wrote %d frame(s) to %s" % (len(scenes), args.out))
    return EXIT_OK


def cmd_train(args):
    spec, _ = _load_spec(args.config)
    os.makedirs(args.out, exist_ok=True)
    stream = _load_stream(args.data)
    dictionary, log = training.train_stream(
        stream,
        spec.train,
        checkpoint_dir=args.out,
        resume=args.resume,
    )
    io.write_tensor(os.path.join(args.out, "dict.mdt"), dictionary.kernels, dtype="f64")
    with open(os.path.join(args.out, "train_log.csv"), "w", encoding="utf-8") as fh:
        fh.write(training.log_to_csv(log))
    print("trained %d round(s); dictionary at %s" % (
        len({r["round"] for r in log}), os.path.join(args.out, "dict.mdt")))
    return EXIT_OK


def cmd_reconstruct(args):
    spec, _ = _load_spec(args.config)
    os.makedirs(args.out, exist_ok=True)
    dictionary = Dictionary(io.read_tensor(args.dictionary))
    ids = _frame_ids(args.data)
    if args.frame is not None:
        if args.frame not in ids:
            raise OcdlError("frame %d not found in %s" % (args.frame, args.data))
        ids = [args.frame]
    if not ids:
        raise OcdlError("no frame*_y.mdt files in %s" % args.data)
    cfg = spec.train
    for frame_id in ids:
        sample = _load_frame(args.data, frame_id)
        pred, result = evaluation.reconstruct_sample(
            sample, dictionary, cfg.solver, cfg.lowpass_sigma, spec.prediction
        )
        base = os.path.join(args.out, "frame%03d" % frame_id)
        io.write_tensor(base + "_pred.mdt", pred.data, dtype="f64")
        for l in range(pred.data.shape[0]):
            io.write_pgm(base + "_pred_mod%d.pgm" % l, pred.data[l])
        line = "frame %03d: %d iteration(s), final cost %r" % (
            frame_id, result.iterations, result.cost_trace[-1])
        if sample.truth is not None and len(sample.ops) > 1 and sample.ops[1].kind == "mask":
            psnr = evaluation.psnr_missing(
                sample.truth.data[1], pred.data[1], sample.ops[1].mask
            )
            line += ", depth PSNR %.2f dB over missing pixels" % psnr
        print(line)
    return EXIT_OK


def cmd_eval(args):
    spec, _ = _load_spec(args.config)
    if args.stream_frames:
        rows = evaluation.run_stream_trend(
            spec, args.stream_frames, seed=args.seeds[0], n1=args.height, n2=args.width
        )
        text = evaluation.stream_csv(rows)
    else:
        rows = evaluation.run_experiment(
            spec, seeds=args.seeds, n1=args.height, n2=args.width
        )
        text = evaluation.metrics_csv(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print("wrote %d row(s) to %s" % (len(rows), args.out))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ocdl",
        description="Multimodal reconstruction and online convolutional "
        "dictionary learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic frames and measurements")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--previews", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="learn a dictionary from streamed frames")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint directory to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct frames with a dictionary")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dictionary", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frame", type=int, default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="run the benchmark harness")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--stream-frames", type=int, default=0,
                   help="run the per-frame streaming trend instead of the table")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except (OcdlError, OSError) as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
