"""Convolution engine: synthesis, adjoints, cross-kernels, spectral norms.

Size conventions (per dimension): image n, kernel p, coefficient map
m = n + p - 1.  The synthesis image is the valid part of the kernel/map
convolution.  The dictionary-side operator A maps a kernel stack to the
*extended* full-convolution grid of size m + p - 1; images are implicitly
zero-embedded into that grid when transposed operators are applied.  Under
this convention each A^T A' block is exactly a restricted convolution with
a (2p-1)-sized cross-kernel, which is what lets the learner aggregate K^2
small kernels instead of a dense KP x KP matrix.

Two execution paths are provided for the direct summation kernels: a
compiled extension and a pure-numpy fallback, selected at import (set
OCDL_DISABLE_EXT=1 to force the fallback).  Large convolutions go through
zero-padded real FFTs; both paths agree to high precision and are tested
against each other.
"""

import os
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as spfft

from .exceptions import DimensionMismatch

if os.environ.get("OCDL_DISABLE_EXT"):
    from . import _convcore_py as _core
else:
    try:
        from . import _convcore as _core
    except ImportError:  # extension not built on this install
        from . import _convcore_py as _core

BACKEND = _core.BACKEND

# Below this size direct summation beats FFT setup cost.
FFT_THRESHOLD = 32


def flip2(a):
    """Spatial flip on the last two axes."""
    return a[..., ::-1, ::-1]


def _method(a, b, method):
    if method != "auto":
        return method
    if max(a.shape[-2], a.shape[-1], b.shape[-2], b.shape[-1]) >= FFT_THRESHOLD:
        return "fft"
    return "direct"


def _fft_shape(s1, s2):
    return (spfft.next_fast_len(s1), spfft.next_fast_len(s2))


def conv_full(a, b, method="auto"):
    """Full linear 2D convolution (output size a + b - 1 per dim)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    s1 = a.shape[0] + b.shape[0] - 1
    s2 = a.shape[1] + b.shape[1] - 1
    if _method(a, b, method) == "fft":
        fs = _fft_shape(s1, s2)
        out = spfft.irfft2(spfft.rfft2(a, fs) * spfft.rfft2(b, fs), fs)
        return np.ascontiguousarray(out[:s1, :s2])
    pad = np.zeros((s1 + b.shape[0] - 1, s2 + b.shape[1] - 1))
    pad[b.shape[0] - 1 : b.shape[0] - 1 + a.shape[0],
        b.shape[1] - 1 : b.shape[1] - 1 + a.shape[1]] = a
    return _core.conv_valid_direct(pad, b)


def conv_valid(a, b, method="auto"):
    """Valid linear 2D convolution; b must fit inside a."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] < b.shape[0] or a.shape[1] < b.shape[1]:
        raise DimensionMismatch("valid conv needs a >= b", a.shape, b.shape)
    if _method(a, b, method) == "fft":
        s1 = a.shape[0] + b.shape[0] - 1
        s2 = a.shape[1] + b.shape[1] - 1
        fs = _fft_shape(s1, s2)
        out = spfft.irfft2(spfft.rfft2(a, fs) * spfft.rfft2(b, fs), fs)
        return np.ascontiguousarray(
            out[b.shape[0] - 1 : a.shape[0], b.shape[1] - 1 : a.shape[1]]
        )
    return _core.conv_valid_direct(a, b)


def _check_pair(dict_slice, maps):
    if dict_slice.shape[0] != maps.shape[0]:
        raise DimensionMismatch("K: dict vs maps", dict_slice.shape, maps.shape)


def image_shape_for(maps_shape, kernel_shape):
    n1 = maps_shape[-2] - kernel_shape[-2] + 1
    n2 = maps_shape[-1] - kernel_shape[-1] + 1
    if n1 < 1 or n2 < 1:
        raise DimensionMismatch("maps smaller than kernel", maps_shape, kernel_shape)
    return n1, n2


def synthesize(dict_slice, maps, method="auto"):
    """Image sum_k d_k * alpha_k (valid region), for one modality.

    dict_slice: [K, p1, p2]; maps: [K, m1, m2]; returns [n1, n2] with
    n = m - p + 1.  Linear in both arguments.
    """
    dict_slice = np.asarray(dict_slice, dtype=np.float64)
    maps = np.asarray(maps, dtype=np.float64)
    _check_pair(dict_slice, maps)
    n1, n2 = image_shape_for(maps.shape, dict_slice.shape)
    if _method(maps[0], dict_slice[0], method) == "fft":
        s1 = maps.shape[1] + dict_slice.shape[1] - 1
        s2 = maps.shape[2] + dict_slice.shape[2] - 1
        fs = _fft_shape(s1, s2)
        prod = spfft.rfft2(maps, fs, axes=(-2, -1)) * spfft.rfft2(
            dict_slice, fs, axes=(-2, -1)
        )
        full = spfft.irfft2(prod.sum(axis=0), fs)
        p1, p2 = dict_slice.shape[1:]
        return np.ascontiguousarray(full[p1 - 1 : p1 - 1 + n1, p2 - 1 : p2 - 1 + n2])
    out = np.zeros((n1, n2))
    for k in range(dict_slice.shape[0]):
        out += _core.conv_valid_direct(maps[k], dict_slice[k])
    return out


def synthesize_adjoint_maps(dict_slice, residual, method="auto"):
    """Adjoint of synthesize in the maps argument: returns [K, m1, m2]."""
    dict_slice = np.asarray(dict_slice, dtype=np.float64)
    residual = np.asarray(residual, dtype=np.float64)
    fd = flip2(dict_slice)
    out = np.empty(
        (
            dict_slice.shape[0],
            residual.shape[0] + dict_slice.shape[1] - 1,
            residual.shape[1] + dict_slice.shape[2] - 1,
        )
    )
    if _method(residual, dict_slice[0], method) == "fft":
        fs = _fft_shape(out.shape[1], out.shape[2])
        prod = spfft.rfft2(fd, fs, axes=(-2, -1)) * spfft.rfft2(residual, fs)
        full = spfft.irfft2(prod, fs, axes=(-2, -1))
        return np.ascontiguousarray(full[:, : out.shape[1], : out.shape[2]])
    for k in range(dict_slice.shape[0]):
        out[k] = conv_full(residual, fd[k], method="direct")
    return out


def apply_A_T(maps, image, method="auto"):
    """Apply the transposed dictionary-side operator: [K, p1, p2] result.

    maps: [K, m1, m2]; image may live on the n grid (zero-embedded into the
    extended grid) or directly on the extended m + p - 1 grid.
    """
    maps = np.asarray(maps, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    m1, m2 = maps.shape[1:]
    e1 = image.shape[0]
    e2 = image.shape[1]
    if e1 > m1 or e2 > m2:
        # extended-grid input: valid conv of flip(maps) with image
        p1 = e1 - m1 + 1
        p2 = e2 - m2 + 1
    else:
        p1 = m1 - e1 + 1
        p2 = m2 - e2 + 1
    if p1 < 1 or p2 < 1:
        raise DimensionMismatch("maps vs image", maps.shape, image.shape)
    fm = flip2(maps)
    if _method(maps[0], image, method) == "fft":
        s1 = m1 + e1 - 1
        s2 = m2 + e2 - 1
        fs = _fft_shape(s1, s2)
        prod = spfft.rfft2(fm, fs, axes=(-2, -1)) * spfft.rfft2(image, fs)
        full = spfft.irfft2(prod, fs, axes=(-2, -1))
        lo1 = min(m1, e1) - 1
        lo2 = min(m2, e2) - 1
        return np.ascontiguousarray(full[:, lo1 : lo1 + p1, lo2 : lo2 + p2])
    out = np.empty((maps.shape[0], p1, p2))
    maps_larger = m1 >= e1 and m2 >= e2
    for k in range(maps.shape[0]):
        if maps_larger:
            out[k] = _core.conv_valid_direct(fm[k], image)
        else:
            out[k] = _core.conv_valid_direct(image, fm[k])
    return out


@dataclass(frozen=True)
class CrossKernels:
    """K x K cross-correlation kernels of size (2p1-1) x (2p2-1).

    kernels[k, k'] represents the (k, k') block of the Gram operator; the
    represented matrix is symmetric, so kernels[k', k] is the spatial flip
    of kernels[k, k'].
    """

    kernels: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kernels, dtype=np.float64)
        if k.ndim != 4 or k.shape[0] != k.shape[1]:
            raise ValueError("CrossKernels must be [K, K, 2p1-1, 2p2-1]")
        if k.shape[2] % 2 == 0 or k.shape[3] % 2 == 0:
            raise ValueError("cross-kernel spatial dims must be odd")
        object.__setattr__(self, "kernels", k)

    @property
    def num_kernels(self):
        return self.kernels.shape[0]

    @property
    def kernel_shape(self):
        return ((self.kernels.shape[2] + 1) // 2, (self.kernels.shape[3] + 1) // 2)


def cross_kernels(maps, kernel_shape, method="auto"):
    """Central (2p-1)-sized parts of all pairwise map cross-correlations.

    maps: [K, m1, m2] for one modality.  The result represents the Gram
    operator A^T A' on the extended grid exactly.
    """
    maps = np.asarray(maps, dtype=np.float64)
    p1, p2 = kernel_shape
    K, m1, m2 = maps.shape
    q1, q2 = 2 * p1 - 1, 2 * p2 - 1
    out = np.empty((K, K, q1, q2))
    if _method(maps[0], maps[0], method) == "fft":
        fs = _fft_shape(2 * m1 - 1, 2 * m2 - 1)
        fwd = spfft.rfft2(maps, fs, axes=(-2, -1))
        rev = spfft.rfft2(flip2(maps), fs, axes=(-2, -1))
        for k in range(K):
            prod = rev[k][None] * fwd[k:]
            full = spfft.irfft2(prod, fs, axes=(-2, -1))
            block = full[:, m1 - p1 : m1 + p1 - 1, m2 - p2 : m2 + p2 - 1]
            out[k, k:] = block
            out[k + 1 :, k] = flip2(block[1:])
        return out
    for k in range(K):
        fk = flip2(maps[k])
        for kp in range(k, K):
            full = conv_full(fk, maps[kp], method="direct")
            block = full[m1 - p1 : m1 + p1 - 1, m2 - p2 : m2 + p2 - 1]
            out[k, kp] = block
            if kp != k:
                out[kp, k] = flip2(block)
    return out


def apply_cross(ck, kernel_stack):
    """Apply the Gram operator represented by cross-kernels to a stack.

    (C d)_k = sum_k' restricted-conv(c_kk', d_k'); linear, symmetric PSD.
    """
    c = ck.kernels if isinstance(ck, CrossKernels) else np.asarray(ck)
    d = np.asarray(kernel_stack, dtype=np.float64)
    p1, p2 = d.shape[1:]
    if c.shape[0] != d.shape[0] or c.shape[2] != 2 * p1 - 1 or c.shape[3] != 2 * p2 - 1:
        raise DimensionMismatch("cross-kernels vs kernel stack", c.shape, d.shape)
    windows = sliding_window_view(c, (p1, p2), axis=(2, 3))
    return np.einsum("klijuv,luv->kij", windows, flip2(d), optimize=True)


def spectral_norm(matvec, shape, rmatvec=None, iters=200, tol=1e-8, seed=0):
    """Largest singular value of a linear operator via power iteration.

    matvec operates on arrays of the given shape.  Without rmatvec the
    operator is assumed symmetric PSD; otherwise iteration runs on the
    normal operator.  The start vector is drawn from a fixed seed so the
    estimate is deterministic.  Warns (NoConvergence message) and returns
    the best estimate if the tolerance is not reached.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return 0.0
    v /= nv
    est = 0.0
    for _ in range(iters):
        w = matvec(v)
        if rmatvec is not None:
            w = rmatvec(w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new_est = nw if rmatvec is None else np.sqrt(nw)
        v = w / nw
        if abs(new_est - est) <= tol * max(new_est, 1e-300):
            return float(new_est)
        est = new_est
    warnings.warn(
        "spectral_norm: power iteration exhausted %d iterations" % iters,
        category=RuntimeWarning,
    )
    return float(est)


class SynthesisPlan:
    """Cached-FFT forward/adjoint synthesis for a fixed dictionary.

    Precomputes kernel transforms once and reuses them across solver
    iterations.  Owned by a single solver; not shared across threads.
    """

    def __init__(self, kernels, image_shape):
        # kernels: [L, K, p1, p2]
        self.kernels = np.asarray(kernels, dtype=np.float64)
        self.L, self.K, self.p1, self.p2 = self.kernels.shape
        self.n1, self.n2 = image_shape
        self.m1 = self.n1 + self.p1 - 1
        self.m2 = self.n2 + self.p2 - 1
        self._use_fft = max(self.m1, self.m2, self.p1, self.p2) >= FFT_THRESHOLD
        if self._use_fft:
            self._fs = _fft_shape(self.m1 + self.p1 - 1, self.m2 + self.p2 - 1)
            self._kf = spfft.rfft2(self.kernels, self._fs, axes=(-2, -1))
            self._fsa = _fft_shape(self.m1, self.m2)
            self._kfa = spfft.rfft2(flip2(self.kernels), self._fsa, axes=(-2, -1))

    def forward(self, maps):
        """maps: [L, K, m1, m2] -> images [L, n1, n2]."""
        if not self._use_fft:
            return np.stack(
                [synthesize(self.kernels[l], maps[l]) for l in range(self.L)]
            )
        mf = spfft.rfft2(maps, self._fs, axes=(-2, -1))
        full = spfft.irfft2((mf * self._kf).sum(axis=1), self._fs, axes=(-2, -1))
        return np.ascontiguousarray(
            full[:, self.p1 - 1 : self.p1 - 1 + self.n1,
                 self.p2 - 1 : self.p2 - 1 + self.n2]
        )

    def adjoint(self, residuals):
        """residuals: [L, n1, n2] -> maps [L, K, m1, m2]."""
        if not self._use_fft:
            return np.stack(
                [
                    synthesize_adjoint_maps(self.kernels[l], residuals[l])
                    for l in range(self.L)
                ]
            )
        rf = spfft.rfft2(residuals, self._fsa, axes=(-2, -1))
        full = spfft.irfft2(self._kfa * rf[:, None], self._fsa, axes=(-2, -1))
        return np.ascontiguousarray(full[:, :, : self.m1, : self.m2])
