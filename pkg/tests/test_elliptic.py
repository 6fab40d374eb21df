import numpy as np
import pytest

from chemhill.elliptic import (
    CompatibilityError,
    SolverOptions,
    StepFailure,
    helmholtz_solve,
    neumann_poisson_solve,
    source_potential,
    step_solve,
    v0star_norm,
    vstar_norm,
)
from chemhill.grid import Field, inner_h, laplacian_apply, make_grid, mean, norm_h, norm_v, seminorm_v
from chemhill.nonlinearity import BetaSpec, PiSpec, beta_eval, pi_eval, yosida
from chemhill.scheme import SimParams

import oracles


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(lin_tol=0.0)
    with pytest.raises(ValueError):
        SolverOptions(max_newton=0)
    with pytest.raises(ValueError):
        SolverOptions(tau_schedule=(1e-3, 1e-2))
    assert SolverOptions(tau_schedule=(1e-2, 1e-3)).tau_schedule == (1e-2, 1e-3)


def test_helmholtz_constants_are_fixed_points():
    g = make_grid(1, 64)
    rhs = Field(g, np.full(g.shape, 2.5))
    w = helmholtz_solve(g, rhs)
    assert np.max(np.abs(w.values - 2.5)) <= 1e-12


@pytest.mark.parametrize("d,k", [(1, 2), (2, 1)])
def test_helmholtz_mode_solution(d, k):
    g = make_grid(d, 128 if d == 1 else 32)
    vals = oracles.mode_values(g, k)
    a = d * oracles.mode_eigenvalue(g.n, k)
    w = helmholtz_solve(g, Field(g, vals))
    assert np.max(np.abs(w.values - vals / (1.0 + a))) <= 1e-12
    if d == 1:
        analytic = vals / (1.0 + (k * np.pi) ** 2)
        assert np.max(np.abs(w.values - analytic)) <= 1e-4


def test_helmholtz_self_adjoint_and_contractive():
    g = make_grid(2, 16)
    rng = np.random.default_rng(0)
    for _ in range(20):
        r1 = Field(g, rng.standard_normal(g.shape))
        r2 = Field(g, rng.standard_normal(g.shape))
        k1, k2 = helmholtz_solve(g, r1), helmholtz_solve(g, r2)
        s1, s2 = inner_h(k1, r2), inner_h(r1, k2)
        assert abs(s1 - s2) <= 1e-11 * max(1.0, abs(s1))
        assert norm_h(k1) <= norm_h(r1) + 1e-12


def test_neumann_poisson_mode_and_edge_cases():
    g = make_grid(1, 128)
    vals = oracles.mode_values(g, 1)
    a = oracles.mode_eigenvalue(g.n, 1)
    w = neumann_poisson_solve(g, Field(g, vals))
    assert abs(mean(w)) <= 1e-12
    assert np.max(np.abs(w.values - vals / a)) <= 1e-10
    assert np.max(np.abs(w.values - vals / np.pi**2)) <= 1e-4
    zero = neumann_poisson_solve(g, Field(g, np.zeros(g.shape)))
    assert np.max(np.abs(zero.values)) == 0.0
    with pytest.raises(CompatibilityError):
        neumann_poisson_solve(g, Field(g, np.ones(g.shape)))


def test_source_potential_weak_form():
    g = make_grid(1, 64)
    gv = np.pi**2 * oracles.mode_values(g, 1)
    f = source_potential(g, Field(g, gv))
    assert np.max(np.abs(f.values - oracles.mode_values(g, 1))) <= 2e-3
    rng = np.random.default_rng(5)
    for _ in range(10):
        z = Field(g, rng.standard_normal(g.shape))
        lhs = -inner_h(laplacian_apply(g, f), z)
        rhs = inner_h(Field(g, gv), z)
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))


def test_dual_norms():
    g = make_grid(1, 64)
    one = Field(g, np.ones(g.shape))
    assert vstar_norm(g, one) == pytest.approx(1.0, abs=1e-12)
    assert vstar_norm(g, Field(g, np.zeros(g.shape))) == 0.0
    vals = oracles.mode_values(g, 1)
    a = oracles.mode_eigenvalue(g.n, 1)
    got = vstar_norm(g, Field(g, vals)) ** 2
    assert got == pytest.approx(0.5 / (1.0 + a), abs=1e-12)
    assert got == pytest.approx(0.5 / (1.0 + np.pi**2), abs=1e-3)
    with pytest.raises(CompatibilityError):
        v0star_norm(g, one)


def _params(eps=0.1, lam=0.01, N=50, T=1.0, eta=0.0, c3=0.0):
    return SimParams(eps=eps, lam=lam, N=N, T=T, eta=eta, c3=c3)


@pytest.mark.parametrize("family", ["linear", "power", "logit", "abs_logit"])
def test_step_solve_zero_rhs_gives_zero(family):
    g = make_grid(1, 32)
    params = _params()
    rhs = Field(g, np.zeros(g.shape))
    warm = Field(g, 0.3 * np.sin(2 * np.pi * g.axis))
    u = step_solve(g, params, BetaSpec(family), PiSpec("zero"), rhs, warm)
    assert norm_h(u) <= 1e-10


def test_step_solve_matches_independent_linear_route():
    g = make_grid(1, 64)
    params = _params(N=100)
    rng = np.random.default_rng(3)
    rhs_vals = rng.standard_normal(g.shape)
    opts = SolverOptions(newton_tol=1e-13)
    u = step_solve(
        g, params, BetaSpec("linear"), PiSpec("zero"), Field(g, rhs_vals), Field(g, np.zeros(g.shape)), opts
    )
    want = oracles.linear_step_solution(g.n, params.lam, params.eps, params.h, rhs_vals)
    assert np.max(np.abs(u.values - want)) <= 1e-9


@pytest.mark.parametrize("family", ["power", "logit"])
def test_step_solve_warm_start_independence(family):
    g = make_grid(1, 32)
    params = _params()
    rng = np.random.default_rng(4)
    rhs = Field(g, 0.5 * rng.standard_normal(g.shape))
    opts = SolverOptions(newton_tol=1e-12)
    u1 = step_solve(g, params, BetaSpec(family), PiSpec("zero"), rhs, Field(g, np.zeros(g.shape)), opts)
    u2 = step_solve(
        g, params, BetaSpec(family), PiSpec("zero"), rhs, Field(g, 0.4 * np.cos(np.pi * g.axis)), opts
    )
    assert norm_h(u1 - u2) <= 1e-9


def test_step_solve_rejects_stepsize_violation():
    g = make_grid(1, 32)
    params = SimParams(eps=0.5, lam=0.01, N=10, T=1.0, c3=1.0)
    rhs = Field(g, np.zeros(g.shape))
    with pytest.raises(ValueError):
        step_solve(g, params, BetaSpec("power"), PiSpec("tanh_decay", c3=1.0), rhs, rhs)


def test_step_solve_failure_carries_history():
    g = make_grid(1, 32)
    params = _params()
    rng = np.random.default_rng(9)
    rhs = Field(g, rng.standard_normal(g.shape))
    opts = SolverOptions(newton_tol=1e-17, max_newton=50)
    with pytest.raises(StepFailure) as info:
        step_solve(g, params, BetaSpec("power"), PiSpec("zero"), rhs, Field(g, np.zeros(g.shape)), opts)
    assert info.value.residual is not None
    assert len(info.value.history) >= 1


def test_step_operator_coercivity_probe():
    # the per-step operator gains min(lam - c3*eps*h, eps*h) in the V norm
    g = make_grid(1, 32)
    eps, lam, h, c3 = 0.1, 0.01, 0.02, 1.0
    b, p = BetaSpec("power", m=3), PiSpec("tanh_decay", c3=c3)
    const = min(lam - c3 * eps * h, eps * h)
    rng = np.random.default_rng(12)

    def apply_op(x):
        return (
            lam * x
            + helmholtz_solve(g, x)
            - eps * h * laplacian_apply(g, x)
            + h * Field(g, beta_eval(b, x.values))
            + h * Field(g, pi_eval(p, eps, x.values))
        )

    for _ in range(200):
        u = Field(g, rng.standard_normal(g.shape))
        w = Field(g, rng.standard_normal(g.shape))
        gain = inner_h(apply_op(u) - apply_op(w), u - w)
        assert gain >= const * norm_v(u - w) ** 2 - 1e-10


def test_pt_pairing_linear_graph_closed_form():
    g = make_grid(1, 64)
    rng = np.random.default_rng(6)
    u = Field(g, rng.standard_normal(g.shape))
    tau = 0.25
    bt = Field(g, yosida(BetaSpec("linear"), tau, u.values))
    pairing = inner_h(-1.0 * laplacian_apply(g, u), bt)
    assert pairing == pytest.approx(seminorm_v(u) ** 2 / (1.0 + tau), rel=1e-12)
    assert pairing >= 0.0
