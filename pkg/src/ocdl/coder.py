"""Joint reconstruction over (x, alpha) for a fixed dictionary.

Minimizes

    1/2 ||y - H x||^2 + rho/2 ||x - x_lo - D alpha||^2
        + lam ||alpha||_{2,1} + tau * sum_l TV(x_l)

with a monotone FISTA: gradient step on the smooth quadratic with a
backtracked step size, separable proximal steps (group shrinkage on alpha,
TV per modality on x), and acceptance of a new point only if the full cost
does not increase.
"""

from dataclasses import dataclass, field

import numpy as np

from . import prox
from .conv import SynthesisPlan
from .exceptions import DimensionMismatch, NonFiniteCost
from .types import CoeffMaps, Dictionary, ImageStack, Measurements


@dataclass
class CodingResult:
    x_hat: ImageStack
    alpha_hat: CoeffMaps
    cost_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _arr(x):
    if isinstance(x, (ImageStack, Measurements)):
        return x.data
    if isinstance(x, CoeffMaps):
        return x.data
    if isinstance(x, Dictionary):
        return x.kernels
    return np.asarray(x, dtype=np.float64)


def _check_shapes(x, alpha, kernels, y, x_lo):
    L, n1, n2 = x.shape
    if y.shape != x.shape:
        raise DimensionMismatch("y vs x", y.shape, x.shape)
    if x_lo.shape != x.shape:
        raise DimensionMismatch("x_lo vs x", x_lo.shape, x.shape)
    if kernels.shape[0] != L or alpha.shape[0] != L:
        raise DimensionMismatch("modalities", kernels.shape, x.shape)
    m1 = n1 + kernels.shape[2] - 1
    m2 = n2 + kernels.shape[3] - 1
    if alpha.shape[1:] != (kernels.shape[1], m1, m2):
        raise DimensionMismatch(
            "alpha vs dictionary/image", alpha.shape, (L, kernels.shape[1], m1, m2)
        )


def _data_residual(x, y, ops):
    return np.stack([ops[l].apply(x[l]) - y[l] for l in range(x.shape[0])])


def cost(x, alpha, dictionary, y, ops, x_lo, params, plan=None):
    """Full reconstruction cost at (x, alpha)."""
    x, alpha, kernels = _arr(x), _arr(alpha), _arr(dictionary)
    y, x_lo = _arr(y), _arr(x_lo)
    _check_shapes(x, alpha, kernels, y, x_lo)
    if plan is None:
        plan = SynthesisPlan(kernels, x.shape[1:])
    r_data = _data_residual(x, y, ops)
    r_couple = x - x_lo - plan.forward(alpha)
    val = 0.5 * np.sum(r_data * r_data)
    val += 0.5 * params.rho * np.sum(r_couple * r_couple)
    val += params.lam * prox.group_l21_norm(alpha)
    val += params.tau * sum(prox.tv_value(x[l]) for l in range(x.shape[0]))
    return float(val)


def smooth_gradient(x, alpha, dictionary, y, ops, x_lo, params, plan=None):
    """Gradient of the smooth quadratic part at (x, alpha)."""
    x, alpha, kernels = _arr(x), _arr(alpha), _arr(dictionary)
    y, x_lo = _arr(y), _arr(x_lo)
    _check_shapes(x, alpha, kernels, y, x_lo)
    if plan is None:
        plan = SynthesisPlan(kernels, x.shape[1:])
    r_data = _data_residual(x, y, ops)
    r_couple = x - x_lo - plan.forward(alpha)
    grad_x = np.stack(
        [ops[l].adjoint(r_data[l]) for l in range(x.shape[0])]
    ) + params.rho * r_couple
    grad_alpha = -params.rho * plan.adjoint(r_couple)
    return grad_x, grad_alpha


def _estimate_smooth_lipschitz(plan, ops, rho, iters=30, seed=0):
    """Power iteration on the joint smooth Hessian (symmetric PSD)."""
    rng = np.random.default_rng(seed)
    vx = rng.standard_normal((plan.L, plan.n1, plan.n2))
    va = rng.standard_normal((plan.L, plan.K, plan.m1, plan.m2))
    est = 1.0
    for _ in range(iters):
        norm = np.sqrt(np.sum(vx * vx) + np.sum(va * va))
        if norm == 0.0:
            return 1.0
        vx /= norm
        va /= norm
        rc = vx - plan.forward(va)
        hx = np.stack(
            [ops[l].adjoint(ops[l].apply(vx[l])) for l in range(plan.L)]
        ) + rho * rc
        ha = -rho * plan.adjoint(rc)
        est = np.sqrt(np.sum(hx * hx) + np.sum(ha * ha))
        vx, va = hx, ha
    return float(max(est, 1e-12))


def solve(y, ops, dictionary, x_lo, params, init=None):
    """Monotone FISTA on the joint reconstruction problem.

    init defaults to (x_lo, 0).  Returns a CodingResult whose cost_trace is
    non-increasing.  Raises NonFiniteCost (with the last valid iterate
    attached) if the cost diverges.
    """
    kernels = _arr(dictionary)
    y, x_lo = _arr(y), _arr(x_lo)
    L, n1, n2 = y.shape
    plan = SynthesisPlan(kernels, (n1, n2))
    if init is None:
        x = x_lo.copy()
        alpha = np.zeros((L, plan.K, plan.m1, plan.m2))
    else:
        x = _arr(init[0]).copy()
        alpha = _arr(init[1]).copy()
    _check_shapes(x, alpha, kernels, y, x_lo)

    def smooth(xv, av):
        r_data = _data_residual(xv, y, ops)
        rc = xv - x_lo - plan.forward(av)
        return 0.5 * np.sum(r_data * r_data) + 0.5 * params.rho * np.sum(rc * rc)

    def nonsmooth(xv, av):
        val = params.lam * prox.group_l21_norm(av)
        val += params.tau * sum(prox.tv_value(xv[l]) for l in range(L))
        return val

    def grad(xv, av):
        r_data = _data_residual(xv, y, ops)
        rc = xv - x_lo - plan.forward(av)
        gx = np.stack([ops[l].adjoint(r_data[l]) for l in range(L)]) + params.rho * rc
        ga = -params.rho * plan.adjoint(rc)
        return gx, ga

    lip = max(params.L0, 1.01 * _estimate_smooth_lipschitz(plan, ops, params.rho))
    tv_states = [None] * L

    x_acc, a_acc = x, alpha
    x_old, a_old = x, alpha
    yx, ya = x, alpha
    t = 1.0
    F_acc = smooth(x, alpha) + nonsmooth(x, alpha)
    if not np.isfinite(F_acc):
        raise NonFiniteCost("initial cost is not finite")
    trace = [F_acc]
    converged = False
    it = 0
    for it in range(1, params.max_outer_iters + 1):
        gx, ga = grad(yx, ya)
        f_y = smooth(yx, ya)
        for _ in range(60):
            step = 1.0 / lip
            zx_raw = yx - step * gx
            za = prox.prox_group_l21(ya - step * ga, params.lam * step)
            zx = np.empty_like(zx_raw)
            new_states = []
            for l in range(L):
                zl, st = prox.prox_tv_iso(
                    zx_raw[l], params.tau * step, params.tv_inner_iters, tv_states[l]
                )
                zx[l] = zl
                new_states.append(st)
            dx = zx - yx
            da = za - ya
            f_z = smooth(zx, za)
            bound = (
                f_y
                + np.vdot(gx, dx)
                + np.vdot(ga, da)
                + 0.5 * lip * (np.sum(dx * dx) + np.sum(da * da))
            )
            if f_z <= bound + 1e-12 * max(abs(bound), 1.0):
                break
            lip *= params.backtrack_eta
        tv_states = new_states
        F_z = f_z + nonsmooth(zx, za)
        if not np.isfinite(F_z):
            raise NonFiniteCost(
                "cost diverged at iteration %d" % it,
                result=_make_result(x_acc, a_acc, trace, it, False),
            )
        x_old, a_old = x_acc, a_acc
        accepted = F_z <= F_acc
        if accepted:
            x_acc, a_acc = zx, za
            F_new = F_z
        else:  # keep previous iterate, momentum still advances
            F_new = F_acc
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        yx = x_acc + (t / t_next) * (zx - x_acc) + ((t - 1.0) / t_next) * (x_acc - x_old)
        ya = a_acc + (t / t_next) * (za - a_acc) + ((t - 1.0) / t_next) * (a_acc - a_old)
        t = t_next
        trace.append(F_new)
        # A rejected step leaves the cost unchanged; only an accepted step
        # with a small relative improvement signals convergence.
        if accepted and abs(F_acc - F_new) <= params.rel_tol * max(abs(F_acc), 1e-300):
            F_acc = F_new
            converged = True
            break
        F_acc = F_new
    return _make_result(x_acc, a_acc, trace, it, converged)


def _make_result(x, alpha, trace, iterations, converged):
    return CodingResult(
        x_hat=ImageStack(x),
        alpha_hat=CoeffMaps(alpha),
        cost_trace=list(trace),
        iterations=iterations,
        converged=converged,
    )


def predict(dictionary, alpha_hat, x_lo):
    """Default prediction D alpha_hat + x_lo."""
    kernels = _arr(dictionary)
    alpha = _arr(alpha_hat)
    x_lo = _arr(x_lo)
    plan = SynthesisPlan(kernels, x_lo.shape[1:])
    return ImageStack(plan.forward(alpha) + x_lo)


def predict_x(result):
    """Alternative prediction: the x iterate itself."""
    return result.x_hat
