import numpy as np
import pytest

from chemhill.elliptic import SolverOptions
from chemhill.grid import Field, make_grid, norm_h
from chemhill.limits import _uhat_diff_norms, estimate_order, save_study_csv, study, summarize
from chemhill.nonlinearity import BetaSpec, PiSpec
from chemhill.scheme import Scenario, SimParams, interpolants, run

import oracles


def test_estimate_order_exact_halving():
    assert estimate_order([0.4, 0.2, 0.1]) == pytest.approx([1.0, 1.0])
    assert estimate_order([0.4, 0.1]) == pytest.approx([2.0])


def test_estimate_order_noise_floor():
    assert estimate_order([1e-13, 5e-14], floor=1e-10) == [None]
    assert estimate_order([1.0, 0.5, 1e-12], floor=1e-10) == [1.0, None]


def base_scenario(g, family="power", eta=0.0, N=32, T=0.2, eps=0.1, lam=0.01, **kw):
    return Scenario(
        grid=g,
        params=SimParams(eps=eps, lam=lam, N=N, T=T, eta=eta),
        beta=BetaSpec(family, **kw),
        pi=PiSpec("zero"),
        u0=Field(g, np.cos(np.pi * g.axis)),
        smooth_u0=False,
    )


def test_h_study_against_eigen_recurrence():
    # with the linear graph and no transport the whole run lives on one
    # eigenvector, so every level and every level difference has an exact
    # scalar description
    g = make_grid(1, 64)
    sc = base_scenario(g, family="linear", T=0.1, lam=1e-3)
    levels = [32, 64, 128, 256]
    rep = study("h", sc, levels, opts=SolverOptions(newton_tol=1e-13, lin_tol=1e-12))
    assert rep.failed_level is None
    assert rep.levels == [0.1 / n for n in levels]
    assert all(a > b for a, b in zip(rep.diffs_linf_h, rep.diffs_linf_h[1:]))
    for order in rep.orders_linf_h:
        assert 0.8 <= order <= 1.2

    a = oracles.mode_eigenvalue(g.n, 1)
    phi_h = norm_h(Field(g, oracles.mode_values(g, 1)))
    amps = {
        n: oracles.mode_recurrence(a, 0.1, 1e-3, 0.1 / n, n, 1.0)[0] for n in levels
    }

    def hat(alphas, n, t):
        h = 0.1 / n
        k = min(int(t / h), n - 1)
        s = (t - k * h) / h
        return (1 - s) * alphas[k] + s * alphas[k + 1]

    for (n0, n1), got in zip(zip(levels, levels[1:]), rep.diffs_linf_h):
        ts = np.arange(n1 + 1) * (0.1 / n1)
        want = max(abs(hat(amps[n0], n0, t) - hat(amps[n1], n1, t)) for t in ts) * phi_h
        assert got == pytest.approx(want, abs=1e-10)


def test_lambda_study_cauchy_decrease():
    g = make_grid(1, 48)
    sc = base_scenario(g, eta=0.5, N=16, T=0.1, c2=0.0)
    rep = study("lambda", sc, [1e-2, 5e-3, 2.5e-3])
    assert rep.failed_level is None
    assert all(a > b for a, b in zip(rep.diffs_linf_h, rep.diffs_linf_h[1:]))
    assert len(rep.ledgers) == 3


def test_epsilon_study_coscaling_and_weighted_bounds():
    g = make_grid(1, 48)
    sc = base_scenario(g, eta=0.5, N=16, T=0.1, c2=0.0)
    rep = study("epsilon", sc, [0.1, 0.05, 0.025])
    assert rep.failed_level is None
    assert all(a > b for a, b in zip(rep.diffs_l2_vstar, rep.diffs_l2_vstar[1:]))
    assert [led.lam for led in rep.ledgers] == pytest.approx([0.01, 0.005, 0.0025])
    for led in rep.ledgers:
        assert led.q3 <= 2.0 * rep.ledgers[0].q3
        assert led.q10 <= 2.0 * rep.ledgers[0].q10


def test_study_rejects_nondecreasing_levels():
    g = make_grid(1, 32)
    sc = base_scenario(g, c2=0.0)
    with pytest.raises(ValueError):
        study("lambda", sc, [1e-3, 1e-2])
    with pytest.raises(ValueError):
        study("nonsense", sc, [1, 2])


def test_study_marks_failed_level():
    g = make_grid(1, 32)
    sc = base_scenario(g, c2=0.0, N=8, T=0.1)
    rep = study("h", sc, [8, 16], opts=SolverOptions(newton_tol=1e-17, max_newton=20))
    assert rep.failed_level is not None
    assert rep.diffs_linf_h == []
    assert "residual" in rep.failure_message or "stagnated" in rep.failure_message


def test_identical_runs_have_zero_difference():
    g = make_grid(1, 32)
    sc = base_scenario(g, eta=0.5, N=8, T=0.05, c2=0.0)
    opts = SolverOptions()
    va = interpolants(run(sc, opts))
    vb = interpolants(run(sc, opts))
    linf, l2v = _uhat_diff_norms(va, vb, opts)
    assert linf == 0.0
    assert l2v == 0.0


def test_study_parallel_jobs_match_serial():
    g = make_grid(1, 32)
    sc = base_scenario(g, eta=0.5, N=8, T=0.05, c2=0.0)
    serial = study("h", sc, [8, 16], opts=SolverOptions())
    parallel = study("h", sc, [8, 16], opts=SolverOptions(), jobs=2)
    assert serial.diffs_linf_h == parallel.diffs_linf_h
    assert serial.diffs_l2_vstar == parallel.diffs_l2_vstar


def test_study_csv_and_summary(tmp_path):
    g = make_grid(1, 32)
    sc = base_scenario(g, N=8, T=0.05, c2=0.0)
    rep = study("h", sc, [8, 16, 32])
    path = tmp_path / "study.csv"
    save_study_csv(rep, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("axis,level,diff_linf_h")
    text = summarize(rep)
    assert "h axis" in text
    assert text.count("level") == 3
