import numpy as np
import pytest

from ocdl import io
from ocdl.exceptions import ConfigError, TensorIOError


def test_tensor_f64_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    for shape in [(3,), (4, 5), (2, 3, 4, 5), ()]:
        a = rng.standard_normal(shape)
        path = str(tmp_path / "t.mdt")
        io.write_tensor(path, a, dtype="f64")
        b = io.read_tensor(path)
        assert b.shape == a.shape
        assert a.tobytes() == b.tobytes()


def test_tensor_f32_widens_on_read(tmp_path):
    a = np.array([1.5, 2.25, -3.125])  # exactly representable in binary32
    path = str(tmp_path / "t.mdt")
    io.write_tensor(path, a, dtype="f32")
    b = io.read_tensor(path)
    assert b.dtype == np.float64
    assert np.array_equal(a, b)


def test_tensor_header_layout(tmp_path):
    path = str(tmp_path / "t.mdt")
    io.write_tensor(path, np.zeros((2, 3)), dtype="f64")
    blob = open(path, "rb").read()
    assert blob[:4] == b"MDT1"
    header = np.frombuffer(blob, dtype="<u4", count=4, offset=4)
    assert list(header) == [2, 2, 2, 3]  # version, rank, dims
    assert len(blob) == 4 + 4 * 4 + 6 * 8


def test_tensor_read_rejects_corruption(tmp_path):
    path = str(tmp_path / "t.mdt")
    io.write_tensor(path, np.arange(6.0).reshape(2, 3), dtype="f64")
    blob = bytearray(open(path, "rb").read())

    bad = str(tmp_path / "bad.mdt")
    open(bad, "wb").write(b"XXXX" + bytes(blob[4:]))
    with pytest.raises(TensorIOError):
        io.read_tensor(bad)

    open(bad, "wb").write(bytes(blob[:-8]))  # truncated payload
    with pytest.raises(TensorIOError):
        io.read_tensor(bad)

    wrong_ver = bytes(blob[:4]) + np.array([9], dtype="<u4").tobytes() + bytes(blob[8:])
    open(bad, "wb").write(wrong_ver)
    with pytest.raises(TensorIOError):
        io.read_tensor(bad)


def test_tensor_rank_limit(tmp_path):
    with pytest.raises(TensorIOError):
        io.write_tensor(str(tmp_path / "t.mdt"), np.zeros((1,) * 7))


def test_pgm_roundtrip_and_sidecar(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.standard_normal((7, 9)) * 10 + 3
    path = str(tmp_path / "img.pgm")
    io.write_pgm(path, img)
    back = io.read_pgm(path)
    assert back.shape == (7, 9)
    assert back.dtype == np.uint8
    assert back.min() == 0 and back.max() == 255  # min-max scaled
    sidecar = open(path + ".scale.txt").read()
    lo, hi = (float(line.split()[1]) for line in sidecar.splitlines())
    assert lo == img.min() and hi == img.max()
    # dequantized image is within half a quantization step
    deq = back / 255.0 * (hi - lo) + lo
    assert np.max(np.abs(deq - img)) <= (hi - lo) / 255.0


def test_pgm_constant_image(tmp_path):
    path = str(tmp_path / "c.pgm")
    io.write_pgm(path, np.full((4, 4), 2.5))
    assert not io.read_pgm(path).any()


def test_config_parse_types_comments_unknown_keys():
    cfg = io.parse_config_text(
        "K = 8\nrho = 1.5  # comment\n\n# full comment line\nlambda = 0.03\n"
    )
    assert cfg == {"K": 8, "rho": 1.5, "lambda": 0.03}
    with pytest.raises(ConfigError) as exc:
        io.parse_config_text("K = 8\nnot_a_key = 1\n")
    assert exc.value.line_no == 2
    with pytest.raises(ConfigError):
        io.parse_config_text("K eight\n")
    with pytest.raises(ConfigError):
        io.parse_config_text("K = eight\n")


def test_config_format_parse_fixed_point():
    cfg = io.parse_config_text("rho = 0.1\nK = 32\ntau = 1e-3\n")
    text = io.format_config(cfg)
    again = io.parse_config_text(text)
    assert again == cfg
    assert io.format_config(again) == text


def test_atomic_write_leaves_no_temp_files(tmp_path):
    path = str(tmp_path / "t.mdt")
    io.write_tensor(path, np.ones(3))
    io.write_tensor(path, np.ones(4))  # overwrite
    leftovers = [p.name for p in tmp_path.iterdir() if p.name.startswith(".tmp-")]
    assert leftovers == []
    assert io.read_tensor(path).shape == (4,)
