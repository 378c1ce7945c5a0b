"""Proximal and projection operators: group shrinkage, isotropic TV, ball.

The TV proximal has no closed form; it is solved by an accelerated
projected gradient method on the dual with a fixed 1/8 step (the operator
norm bound of the 2D forward-difference gradient), warm-started across
outer solver iterations via TVDualState.
"""

from dataclasses import dataclass

import numpy as np


def group_l21_norm(maps):
    """Sum over (kernel, position) of the l2 norm across modalities.

    maps: [L, K, m1, m2].
    """
    maps = np.asarray(maps, dtype=np.float64)
    return float(np.sqrt(np.sum(maps * maps, axis=0)).sum())


def prox_group_l21(maps, threshold):
    """Group soft-threshold: g -> (||g||-thr)_+ g/||g|| per length-L group."""
    maps = np.asarray(maps, dtype=np.float64)
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    if threshold == 0.0:
        return maps.copy()
    norms = np.sqrt(np.sum(maps * maps, axis=0, keepdims=True))
    scale = np.maximum(norms - threshold, 0.0) / np.where(norms > 0.0, norms, 1.0)
    return maps * scale


def _grad(image):
    """Forward differences with replicate boundary (zeros on last row/col)."""
    g1 = np.zeros_like(image)
    g2 = np.zeros_like(image)
    g1[:-1, :] = image[1:, :] - image[:-1, :]
    g2[:, :-1] = image[:, 1:] - image[:, :-1]
    return g1, g2


def _div(g1, g2):
    """Negative adjoint of _grad (discrete divergence)."""
    d = np.zeros_like(g1)
    d[:-1, :] += g1[:-1, :]
    d[1:, :] -= g1[:-1, :]
    d[:, :-1] += g2[:, :-1]
    d[:, 1:] -= g2[:, :-1]
    return d


def tv_value(image):
    """Isotropic TV: sum of pointwise gradient magnitudes."""
    g1, g2 = _grad(np.asarray(image, dtype=np.float64))
    return float(np.sqrt(g1 * g1 + g2 * g2).sum())


@dataclass
class TVDualState:
    """Warm-start dual fields for the TV proximal inner solver."""

    q1: np.ndarray
    q2: np.ndarray

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))


def _project_dual(q1, q2):
    mag = np.sqrt(q1 * q1 + q2 * q2)
    scale = np.where(mag > 1.0, mag, 1.0)
    return q1 / scale, q2 / scale


def prox_tv_iso(image, weight, inner_iters=20, warm=None):
    """Approximate prox of weight*TV at image; returns (result, dual state).

    Accelerated dual projected gradient with fixed step 1/8.  weight 0
    returns the input bit-exactly.  The output never increases the prox
    objective relative to the input point.
    """
    image = np.asarray(image, dtype=np.float64)
    if weight < 0:
        raise ValueError("weight must be nonnegative")
    if warm is None:
        warm = TVDualState.zeros(image.shape)
    if weight == 0.0:
        return image.copy(), warm
    q1, q2 = warm.q1.copy(), warm.q2.copy()
    y1, y2 = q1, q2
    t = 1.0
    u = image
    for _ in range(max(1, inner_iters)):
        u = image + weight * _div(y1, y2)
        g1, g2 = _grad(u)
        n1 = y1 + g1 / (8.0 * weight)
        n2 = y2 + g2 / (8.0 * weight)
        n1, n2 = _project_dual(n1, n2)
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        y1 = n1 + ((t - 1.0) / t_next) * (n1 - q1)
        y2 = n2 + ((t - 1.0) / t_next) * (n2 - q2)
        q1, q2 = n1, n2
        t = t_next
    u = image + weight * _div(q1, q2)
    # Monotone safeguard against the trivial point.
    if 0.5 * np.sum((u - image) ** 2) + weight * tv_value(u) > weight * tv_value(image):
        return image.copy(), TVDualState(np.zeros_like(q1), np.zeros_like(q2))
    return u, TVDualState(q1, q2)


def project_unit_ball(kernel):
    """d -> d / max(||d||, 1); idempotent."""
    kernel = np.asarray(kernel, dtype=np.float64)
    return kernel / max(np.linalg.norm(kernel), 1.0)
