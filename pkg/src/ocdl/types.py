"""Core value types: image stacks, sensing operators, dictionaries, maps.

Shape conventions used throughout:

* images are [n1, n2], stacks [L, n1, n2];
* kernels are [p1, p2], dictionaries [L, K, p1, p2];
* coefficient maps are [K, m1, m2] per modality with m = n + p - 1, so that
  the valid convolution of a kernel with its map covers the whole image.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatch, InvalidMask, KernelNormViolation

KERNEL_NORM_TOL = 1e-9

IDENTITY = "identity"
DIAGONAL_MASK = "mask"


def _as_f64(a):
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite entries")
    return a


def map_shape(image_shape, kernel_shape):
    """Full-convolution coefficient-map size m = n + p - 1 per dimension."""
    n1, n2 = image_shape
    p1, p2 = kernel_shape
    return (n1 + p1 - 1, n2 + p2 - 1)


@dataclass(frozen=True)
class ImageStack:
    """L registered single-channel images of identical size."""

    data: np.ndarray
    modality_names: tuple = ()

    def __post_init__(self):
        data = _as_f64(self.data)
        if data.ndim != 3:
            raise ValueError("ImageStack data must be [L, n1, n2]")
        object.__setattr__(self, "data", data)
        names = tuple(self.modality_names)
        if not names:
            names = tuple("modality%d" % i for i in range(data.shape[0]))
        if len(names) != data.shape[0]:
            raise ValueError("need one name per modality")
        object.__setattr__(self, "modality_names", names)

    @property
    def num_modalities(self):
        return self.data.shape[0]

    @property
    def image_shape(self):
        return self.data.shape[1:]


@dataclass(frozen=True)
class SensingOp:
    """Per-modality linear measurement operator (self-adjoint here)."""

    kind: str
    mask: np.ndarray = None

    def __post_init__(self):
        if self.kind not in (IDENTITY, DIAGONAL_MASK):
            raise ValueError("unknown sensing kind %r" % self.kind)
        if self.kind == DIAGONAL_MASK:
            if self.mask is None:
                raise ValueError("diagonal mask requires a mask array")
            mask = np.asarray(self.mask, dtype=np.float64)
            if not np.all((mask == 0.0) | (mask == 1.0)):
                raise InvalidMask("mask entries must be 0 or 1")
            object.__setattr__(self, "mask", mask)
        elif self.mask is not None:
            raise ValueError("identity sensing takes no mask")

    @classmethod
    def identity(cls):
        return cls(IDENTITY)

    @classmethod
    def diagonal(cls, mask):
        return cls(DIAGONAL_MASK, np.asarray(mask))

    def apply(self, image):
        if self.kind == IDENTITY:
            return np.array(image, dtype=np.float64)
        if image.shape != self.mask.shape:
            raise DimensionMismatch("mask vs image", self.mask.shape, image.shape)
        return self.mask * image

    # Both shipped operators are symmetric.
    adjoint = apply


@dataclass(frozen=True)
class Measurements:
    """Per-modality measured images; masked-out entries are stored as 0."""

    data: np.ndarray  # [L, n1, n2]

    def __post_init__(self):
        data = _as_f64(self.data)
        if data.ndim != 3:
            raise ValueError("Measurements data must be [L, n1, n2]")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class Dictionary:
    """L x K convolutional kernels, each inside the unit l2 ball."""

    kernels: np.ndarray  # [L, K, p1, p2]

    def __post_init__(self):
        k = _as_f64(self.kernels)
        if k.ndim != 4:
            raise ValueError("Dictionary kernels must be [L, K, p1, p2]")
        norms = np.sqrt(np.sum(k * k, axis=(2, 3)))
        bad = np.argwhere(norms > 1.0 + KERNEL_NORM_TOL)
        if bad.size:
            l, kk = bad[0]
            raise KernelNormViolation(int(l), int(kk), norms[l, kk])
        object.__setattr__(self, "kernels", k)

    @property
    def num_modalities(self):
        return self.kernels.shape[0]

    @property
    def num_kernels(self):
        return self.kernels.shape[1]

    @property
    def kernel_shape(self):
        return self.kernels.shape[2:]


@dataclass(frozen=True)
class CoeffMaps:
    """Jointly sparse coefficient maps [L, K, m1, m2]."""

    data: np.ndarray

    def __post_init__(self):
        data = _as_f64(self.data)
        if data.ndim != 4:
            raise ValueError("CoeffMaps data must be [L, K, m1, m2]")
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, num_modalities, num_kernels, image_shape, kernel_shape):
        m1, m2 = map_shape(image_shape, kernel_shape)
        return cls(np.zeros((num_modalities, num_kernels, m1, m2)))

    @property
    def map_shape(self):
        return self.data.shape[2:]


@dataclass(frozen=True)
class SolverParams:
    """Weights and stopping rules for the joint reconstruction solver."""

    rho: float = 1.0
    lam: float = 0.1
    tau: float = 0.1
    max_outer_iters: int = 250
    rel_tol: float = 1e-5
    tv_inner_iters: int = 20
    backtrack_eta: float = 2.0
    L0: float = 1.0

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.lam < 0 or self.tau < 0:
            raise ValueError("lam and tau must be nonnegative")
        if self.max_outer_iters < 0 or self.tv_inner_iters < 1:
            raise ValueError("bad iteration limits")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be nonnegative")
        if self.backtrack_eta <= 1.0:
            raise ValueError("backtrack_eta must exceed 1")
        if self.L0 <= 0:
            raise ValueError("L0 must be positive")


def validate_problem(image_shape, sensing_ops, dictionary):
    """Check mutual consistency of image dims, sensing ops and dictionary.

    Raises DimensionMismatch, InvalidMask or KernelNormViolation; returns
    None when everything is consistent.  Pure: depends only on arguments.
    """
    image_shape = tuple(image_shape)
    ops = list(sensing_ops)
    if len(ops) != dictionary.num_modalities:
        raise DimensionMismatch(
            "modalities: sensing ops vs dictionary",
            (len(ops),),
            (dictionary.num_modalities,),
        )
    for op in ops:
        if op.kind == DIAGONAL_MASK and op.mask.shape != image_shape:
            raise DimensionMismatch("mask vs image", op.mask.shape, image_shape)
    # Dictionary construction already enforces the norm invariant; re-check
    # here so stale arrays mutated in place are still caught.
    Dictionary(dictionary.kernels)
