"""Online dictionary statistics and the projected block-coordinate update.

The learner never stores past samples.  It aggregates, per modality, the
correlation of coefficient maps with coded high-pass images (memory
vector b) and the pairwise map cross-correlation kernels (the compact
representation of the Gram operator), blended per round with the weight
theta = (1 - 1/t)^(1+gamma) so a forgetting factor gamma > 0 discounts
early, poorly coded samples.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import conv, prox
from .exceptions import DimensionMismatch, EmptyBatch, EmptyMemory
from .types import CoeffMaps, Dictionary, ImageStack

LIPSCHITZ_FLOOR = 1e-12
LIPSCHITZ_SAFETY = 1.01


@dataclass(frozen=True)
class MemoryState:
    """Aggregated sufficient statistics for the dictionary surrogate.

    b: [L, K, p1, p2]; c: [L, K, K, 2p1-1, 2p2-1]; t counts completed
    rounds.  t == 0 iff both statistics are identically zero.
    """

    b: np.ndarray
    c: np.ndarray
    t: int = 0
    gamma: float = 0.0

    @classmethod
    def zeros(cls, num_modalities, num_kernels, kernel_shape, gamma=0.0):
        p1, p2 = kernel_shape
        return cls(
            b=np.zeros((num_modalities, num_kernels, p1, p2)),
            c=np.zeros((num_modalities, num_kernels, num_kernels, 2 * p1 - 1, 2 * p2 - 1)),
            t=0,
            gamma=float(gamma),
        )

    @property
    def kernel_shape(self):
        return self.b.shape[2:]


def _batch_stats(state, batch):
    """Per-round batch means of (A^T x_hi, cross-kernels) per modality."""
    L, K = state.b.shape[:2]
    p = state.kernel_shape
    b_new = np.zeros_like(state.b)
    c_new = np.zeros_like(state.c)
    for x_hi, alpha in batch:
        x = np.asarray(x_hi.data if isinstance(x_hi, ImageStack) else x_hi, dtype=np.float64)
        a = np.asarray(alpha.data if isinstance(alpha, CoeffMaps) else alpha, dtype=np.float64)
        if x.shape[0] != L or a.shape[:2] != (L, K):
            raise DimensionMismatch("batch sample vs memory", a.shape, state.b.shape)
        for l in range(L):
            b_new[l] += conv.apply_A_T(a[l], x[l])
            c_new[l] += conv.cross_kernels(a[l], p)
    b_new /= len(batch)
    c_new /= len(batch)
    return b_new, c_new


def memory_update(state, batch):
    """Blend the batch statistics into the memory; returns a new state."""
    batch = list(batch)
    if not batch:
        raise EmptyBatch("memory_update needs at least one sample")
    b_new, c_new = _batch_stats(state, batch)
    t = state.t + 1
    theta = (1.0 - 1.0 / t) ** (1.0 + state.gamma)
    return replace(
        state,
        b=theta * state.b + (1.0 - theta) * b_new,
        c=theta * state.c + (1.0 - theta) * c_new,
        t=t,
    )


def surrogate_value(state, dictionary):
    """Surrogate objective at the dictionary, up to its d-free constant.

    sum_l [ 1/2 <d_l, C_l d_l> - <b_l, d_l> ].
    """
    if state.t < 1:
        raise EmptyMemory("no samples aggregated yet")
    kernels = dictionary.kernels if isinstance(dictionary, Dictionary) else np.asarray(dictionary)
    val = 0.0
    for l in range(kernels.shape[0]):
        cd = conv.apply_cross(state.c[l], kernels[l])
        val += 0.5 * np.vdot(kernels[l], cd) - np.vdot(state.b[l], kernels[l])
    return float(val)


def block_gradient(state, dictionary, modality, kernel):
    """Gradient of the surrogate with respect to one kernel block."""
    if state.t < 1:
        raise EmptyMemory("no samples aggregated yet")
    kernels = dictionary.kernels if isinstance(dictionary, Dictionary) else np.asarray(dictionary)
    d_l = kernels[modality]
    row = state.c[modality, kernel]  # [K, 2p1-1, 2p2-1]
    p1, p2 = state.kernel_shape
    grad = np.zeros((p1, p2))
    for kp in range(d_l.shape[0]):
        grad += conv.conv_valid(row[kp], d_l[kp])
    return grad - state.b[modality, kernel]


def block_lipschitz(state, modality, kernel):
    """Spectral norm of the (k, k) diagonal Gram block, floored."""
    c_kk = state.c[modality, kernel, kernel]
    p = state.kernel_shape
    est = conv.spectral_norm(lambda d: conv.conv_valid(c_kk, d), p, iters=5000, tol=1e-6)
    return max(LIPSCHITZ_SAFETY * est, LIPSCHITZ_FLOOR)


def dead_kernel_count(state, threshold=LIPSCHITZ_FLOOR):
    """Kernels whose diagonal Gram block is numerically zero."""
    count = 0
    for l in range(state.c.shape[0]):
        for k in range(state.c.shape[1]):
            if np.max(np.abs(state.c[l, k, k])) <= threshold:
                count += 1
    return count


def dict_update(state, dict_prev, max_sweeps=10, tol=1e-6):
    """Projected block-coordinate gradient descent on the surrogate.

    Gauss-Seidel order within a sweep; each block uses step 1/L_k with L_k
    the diagonal-block spectral norm, followed by unit-ball projection.
    Stops early when the largest kernel change falls below tol.
    """
    if state.t < 1:
        raise EmptyMemory("no samples aggregated yet")
    kernels = (
        dict_prev.kernels if isinstance(dict_prev, Dictionary) else np.asarray(dict_prev)
    ).copy()
    L, K = kernels.shape[:2]
    lips = np.array([[block_lipschitz(state, l, k) for k in range(K)] for l in range(L)])
    p1, p2 = state.kernel_shape
    windows_shape = (p1, p2)
    for _ in range(max_sweeps):
        max_change = 0.0
        for l in range(L):
            for k in range(K):
                if lips[l, k] <= LIPSCHITZ_FLOOR:
                    continue  # dead kernel: gradient is -b_k = 0, leave as is
                grad = np.zeros(windows_shape)
                for kp in range(K):
                    grad += conv.conv_valid(state.c[l, k, kp], kernels[l, kp])
                grad -= state.b[l, k]
                new = prox.project_unit_ball(kernels[l, k] - grad / lips[l, k])
                max_change = max(max_change, float(np.max(np.abs(new - kernels[l, k]))))
                kernels[l, k] = new
        if max_change < tol:
            break
    return Dictionary(kernels)
