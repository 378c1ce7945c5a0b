import numpy as np
import pytest

from ocdl import coder, conv, prox
from ocdl.exceptions import DimensionMismatch
from ocdl.types import Dictionary, SensingOp, SolverParams


def small_problem(seed=0, L=2, K=3, n=10, p=3, keep=0.6):
    rng = np.random.default_rng(seed)
    kernels = rng.standard_normal((L, K, p, p))
    kernels /= np.sqrt((kernels**2).sum(axis=(2, 3), keepdims=True))
    d = Dictionary(kernels)
    x_lo = rng.standard_normal((L, n, n)) * 0.1
    y = rng.standard_normal((L, n, n))
    ops = [SensingOp.identity()]
    for _ in range(1, L):
        ops.append(SensingOp.diagonal((rng.random((n, n)) < keep).astype(float)))
        y[-1] *= ops[-1].mask
    return d, tuple(ops), y, x_lo


def test_cost_term_by_term_oracle():
    d, ops, y, x_lo = small_problem(0)
    rng = np.random.default_rng(1)
    L, n = y.shape[0], y.shape[1]
    p, K = 3, 3
    x = rng.standard_normal((L, n, n))
    alpha = rng.standard_normal((L, K, n + p - 1, n + p - 1))
    params = SolverParams(rho=0.8, lam=0.15, tau=0.25)
    got = coder.cost(x, alpha, d, y, ops, x_lo, params)
    expect = 0.0
    for l in range(L):
        expect += 0.5 * np.sum((ops[l].apply(x[l]) - y[l]) ** 2)
        synth = conv.synthesize(d.kernels[l], alpha[l])
        expect += 0.5 * params.rho * np.sum((x[l] - x_lo[l] - synth) ** 2)
        expect += params.tau * prox.tv_value(x[l])
    expect += params.lam * prox.group_l21_norm(alpha)
    assert got == pytest.approx(expect, rel=1e-12)


def test_smooth_gradient_matches_finite_differences():
    d, ops, y, x_lo = small_problem(2, n=6)
    rng = np.random.default_rng(3)
    L, K, p = 2, 3, 3
    n = 6
    x = rng.standard_normal((L, n, n))
    alpha = rng.standard_normal((L, K, n + p - 1, n + p - 1))
    params = SolverParams(rho=1.3, lam=0.0, tau=0.0)

    def smooth(xv, av):
        # lam = tau = 0 makes the full cost equal its smooth part
        return coder.cost(xv, av, d, y, ops, x_lo, params)

    gx, ga = coder.smooth_gradient(x, alpha, d, y, ops, x_lo, params)
    h = 1e-6
    for _ in range(10):
        i = tuple(rng.integers(0, s) for s in x.shape)
        e = np.zeros_like(x)
        e[i] = h
        fd = (smooth(x + e, alpha) - smooth(x - e, alpha)) / (2 * h)
        assert fd == pytest.approx(gx[i], rel=1e-5, abs=1e-7)
    for _ in range(10):
        i = tuple(rng.integers(0, s) for s in alpha.shape)
        e = np.zeros_like(alpha)
        e[i] = h
        fd = (smooth(x, alpha + e) - smooth(x, alpha - e)) / (2 * h)
        assert fd == pytest.approx(ga[i], rel=1e-5, abs=1e-7)


def test_solver_cost_trace_monotone():
    d, ops, y, x_lo = small_problem(4)
    params = SolverParams(rho=1.0, lam=0.05, tau=0.05, max_outer_iters=40,
                          rel_tol=0.0, tv_inner_iters=10)
    result = coder.solve(y, ops, d, x_lo, params)
    trace = np.array(result.cost_trace)
    assert np.all(np.diff(trace) <= 1e-12)
    assert trace[-1] < trace[0]


def test_solver_closed_form_blend_when_no_regularization():
    # With identity sensing, lam = tau = 0 and alpha forced to stay 0,
    # the minimizer over x is (y + rho * x_lo) / (1 + rho).
    rng = np.random.default_rng(5)
    L, n = 2, 8
    kernels = np.zeros((L, 1, 3, 3))  # zero dictionary: alpha has no effect
    d = Dictionary(kernels)
    y = rng.standard_normal((L, n, n))
    x_lo = rng.standard_normal((L, n, n))
    ops = (SensingOp.identity(), SensingOp.identity())
    rho = 0.7
    params = SolverParams(rho=rho, lam=0.0, tau=0.0, max_outer_iters=400,
                          rel_tol=1e-12)
    result = coder.solve(y, ops, d, x_lo, params)
    expect = (y + rho * x_lo) / (1.0 + rho)
    assert np.max(np.abs(result.x_hat.data - expect)) < 1e-6


def test_solver_against_plain_ista_oracle():
    d, ops, y, x_lo = small_problem(6, n=8)
    params = SolverParams(rho=1.0, lam=0.1, tau=0.0, max_outer_iters=300,
                          rel_tol=0.0)
    result = coder.solve(y, ops, d, x_lo, params)

    # Oracle: unaccelerated proximal gradient with a conservative step.
    plan = conv.SynthesisPlan(d.kernels, y.shape[1:])
    x = x_lo.copy()
    alpha = np.zeros((2, 3, 10, 10))
    lip = coder._estimate_smooth_lipschitz(plan, ops, params.rho) * 1.05
    for _ in range(4000):
        gx, ga = coder.smooth_gradient(x, alpha, d, y, ops, x_lo, params)
        x = x - gx / lip
        alpha = prox.prox_group_l21(alpha - ga / lip, params.lam / lip)
    oracle_cost = coder.cost(x, alpha, d, y, ops, x_lo, params)
    assert result.cost_trace[-1] <= oracle_cost * (1.0 + 1e-4)


def test_solver_convergence_flag_and_shapes():
    d, ops, y, x_lo = small_problem(7)
    params = SolverParams(max_outer_iters=500, rel_tol=1e-7, lam=0.05, tau=0.02)
    result = coder.solve(y, ops, d, x_lo, params)
    assert result.converged
    assert result.iterations <= 500
    assert result.x_hat.data.shape == y.shape
    assert result.alpha_hat.data.shape == (2, 3, 12, 12)


def test_solver_rejects_mismatched_inputs():
    d, ops, y, x_lo = small_problem(8)
    params = SolverParams()
    with pytest.raises(DimensionMismatch):
        coder.solve(y, ops, d, x_lo[:, :5, :5], params)


def test_predict_adds_lowpass_back():
    d, ops, y, x_lo = small_problem(9)
    rng = np.random.default_rng(10)
    alpha = rng.standard_normal((2, 3, 12, 12))
    pred = coder.predict(d, alpha, x_lo)
    for l in range(2):
        expect = conv.synthesize(d.kernels[l], alpha[l]) + x_lo[l]
        assert np.allclose(pred.data[l], expect, atol=1e-10)


def test_zero_data_gives_zero_highpass():
    # y = x_lo and a zero-friendly regularizer: solution stays at x_lo, alpha 0.
    d, ops, _, _ = small_problem(11)
    rng = np.random.default_rng(11)
    x_lo = rng.standard_normal((2, 10, 10)) * 0.0
    y = np.zeros((2, 10, 10))
    params = SolverParams(lam=0.5, tau=0.0, max_outer_iters=50, rel_tol=0.0)
    result = coder.solve(y, ops, d, x_lo, params)
    assert np.max(np.abs(result.x_hat.data)) < 1e-8
    assert np.max(np.abs(result.alpha_hat.data)) < 1e-8
