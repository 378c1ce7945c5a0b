"""Bit-exact file formats: tensor container, PGM previews, config files.

Tensor container layout (all integers unsigned 32-bit little-endian):

    magic "MDT1" | version | rank | dims[rank] | payload

version 1 stores IEEE-754 binary32 payloads (compact artifacts); version 2
stores binary64 (checkpoints that must resume bit-exactly).  Payloads are
row-major little-endian.  Writes go through a temp file and rename so a
crash never leaves a truncated artifact behind.
"""

import os
import tempfile

import numpy as np

from .exceptions import ConfigError, TensorIOError

MAGIC = b"MDT1"
MAX_RANK = 6
_VERSION_DTYPES = {1: "<f4", 2: "<f8"}


def write_tensor(path, array, dtype="f32"):
    """Write an array to the tensor container; dtype 'f32' or 'f64'."""
    array = np.asarray(array)
    if array.ndim > MAX_RANK:
        raise TensorIOError("rank %d exceeds %d" % (array.ndim, MAX_RANK), path)
    version = 1 if dtype == "f32" else 2
    payload = np.ascontiguousarray(array, dtype=_VERSION_DTYPES[version])
    header = MAGIC + np.array(
        [version, array.ndim, *array.shape], dtype="<u4"
    ).tobytes()
    _atomic_write(path, header + payload.tobytes())


def read_tensor(path):
    """Read a tensor container back as float64 (f32 payloads are widened)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise TensorIOError("bad magic %r" % blob[:4], path, offset=0)
    head = np.frombuffer(blob, dtype="<u4", count=2, offset=4)
    version, rank = int(head[0]), int(head[1])
    if version not in _VERSION_DTYPES:
        raise TensorIOError("unknown version %d" % version, path, offset=4)
    if rank > MAX_RANK:
        raise TensorIOError("rank %d exceeds %d" % (rank, MAX_RANK), path, offset=8)
    dims_off = 12
    dims = np.frombuffer(blob, dtype="<u4", count=rank, offset=dims_off)
    payload_off = dims_off + 4 * rank
    dt = _VERSION_DTYPES[version]
    count = int(np.prod(dims)) if rank else 1
    expected = payload_off + count * np.dtype(dt).itemsize
    if len(blob) != expected:
        raise TensorIOError(
            "payload length %d, expected %d" % (len(blob) - payload_off, expected - payload_off),
            path,
            offset=payload_off,
        )
    data = np.frombuffer(blob, dtype=dt, count=count, offset=payload_off)
    out = data.reshape(tuple(int(d) for d in dims))
    # bit-exact for f64; widening for f32
    return np.asarray(out, dtype=np.float64) if version == 1 else out.copy()


def _atomic_write(path, data):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_pgm(path, image, sidecar=True):
    """Write a min-max scaled 8-bit P5 preview; scale goes to a sidecar."""
    image = np.asarray(image, dtype=np.float64)
    lo = float(image.min())
    hi = float(image.max())
    span = hi - lo if hi > lo else 1.0
    scaled = np.round((image - lo) / span * 255.0).astype(np.uint8)
    header = b"P5\n%d %d\n255\n" % (image.shape[1], image.shape[0])
    _atomic_write(path, header + scaled.tobytes())
    if sidecar:
        _atomic_write(
            path + ".scale.txt", ("min %r\nmax %r\n" % (lo, hi)).encode("ascii")
        )


def read_pgm(path):
    """Read a binary (P5) PGM as uint8."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise TensorIOError("not a P5 PGM", path, offset=0)
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise TensorIOError("unsupported maxval %d" % maxval, path, offset=pos)
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).copy()


# -- flat key = value configuration files ----------------------------------

CONFIG_SCHEMA = {
    # dictionary geometry
    "K": int,
    "p1": int,
    "p2": int,
    # solver weights and stopping rules
    "rho": float,
    "lambda": float,
    "tau": float,
    "max_outer_iters": int,
    "rel_tol": float,
    "tv_inner_iters": int,
    "backtrack_eta": float,
    "L0": float,
    # training loop
    "gamma": float,
    "batch_size": int,
    "patch_h": int,
    "patch_w": int,
    "rounds": int,
    "rng_seed": int,
    "init": str,
    "lowpass_sigma": float,
    "checkpoint_every": int,
    "dict_max_sweeps": int,
    "dict_tol": float,
    # experiment harness
    "scene": str,
    "subsample_factor": int,
    "noise_psnr_db": float,
    "prediction": str,
    "noise_seed": int,
}


def parse_config_text(text):
    """Parse flat `key = value` lines; '#' starts a comment.

    Unknown keys raise ConfigError naming the key and line.
    """
    out = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected `key = value`, got %r" % raw.strip(), line_no)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError("unknown key %r" % key, line_no)
        caster = CONFIG_SCHEMA[key]
        try:
            out[key] = caster(value)
        except ValueError:
            raise ConfigError(
                "bad %s value %r for key %r" % (caster.__name__, value, key), line_no
            ) from None
    return out


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def format_config(mapping):
    """Render a config mapping; parse(format(parse(x))) is a fixed point."""
    lines = []
    for key in sorted(mapping, key=lambda k: list(CONFIG_SCHEMA).index(k)):
        value = mapping[key]
        if isinstance(value, float):
            lines.append("%s = %r" % (key, value))
        else:
            lines.append("%s = %s" % (key, value))
    return "\n".join(lines) + "\n"
