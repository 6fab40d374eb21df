"""Refinement studies along the step size and the two regularization axes.

A study runs the same scenario over a strictly decreasing parameter
sequence and measures consecutive-level differences of the piecewise-linear
density reconstruction in Linf(0,T;H) and L2(0,T;dual). Shrinking
differences are the empirical footprint of the limit passages; observed
orders come from log-ratios of consecutive differences. No rate is
asserted by the theory behind the scheme, so orders are reported, not
demanded.

Axis conventions:

    h        levels are step counts N (increasing); one shared spatial grid.
    lambda   levels are lambda values (decreasing) at fixed eps.
    epsilon  levels are eps values (decreasing) with lambda co-scaled as
             eps/10, a one-parameter diagonal through the two-parameter
             limit.
"""

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import LEDGER_COLUMNS, build_ledger
from .elliptic import SolverFailure, SolverOptions, helmholtz_solve
from .grid import inner_h, norm_h
from .scheme import interpolants, run

__all__ = ["StudyReport", "study", "estimate_order", "save_study_csv", "summarize"]

AXES = ("h", "lambda", "epsilon")


@dataclass
class StudyReport:
    axis: str
    levels: list                      # parameter values, strictly decreasing
    diffs_linf_h: list = field(default_factory=list)
    diffs_l2_vstar: list = field(default_factory=list)
    orders_linf_h: list = field(default_factory=list)
    orders_l2_vstar: list = field(default_factory=list)
    ledgers: list = field(default_factory=list)
    failed_level: float = None
    failure_message: str = ""


def _level_scenario(axis, base, level):
    if axis == "h":
        return base.with_params(N=int(level))
    if axis == "lambda":
        return base.with_params(lam=float(level))
    return base.with_params(eps=float(level), lam=float(level) / 10.0)


def _level_value(axis, scenario):
    if axis == "h":
        return scenario.params.h
    if axis == "lambda":
        return scenario.params.lam
    return scenario.params.eps


def _run_level(args):
    scenario, opts = args
    return run(scenario, opts)


def estimate_order(diffs, ratios=None, floor=0.0):
    """Observed orders log(d_k / d_{k+1}) / log(ratio_k); None below the noise floor."""
    if ratios is None:
        ratios = [2.0] * (len(diffs) - 1)
    orders = []
    for d0, d1, r in zip(diffs, diffs[1:], ratios):
        if d0 <= floor or d1 <= floor or r <= 1.0:
            orders.append(None)
        else:
            orders.append(float(np.log(d0 / d1) / np.log(r)))
    return orders


def _uhat_diff_norms(view_a, view_b, opts):
    """Exact Linf(0,T;H) and L2(0,T;dual) distance between two linear reconstructions.

    Both reconstructions are linear between their own breakpoints, so on the
    union partition the difference is linear per segment and both norms are
    exact: the Linf over a segment of a norm of a linear path is attained at
    an endpoint, and the squared dual norm integrates by the endpoint rule
    (ip(a,a) + ip(a,b) + ip(b,b))/3 per segment.
    """
    g = view_a.traj.grid
    breaks = np.union1d(view_a.times, view_b.times)
    fields = [view_a.u_hat(t) - view_b.u_hat(t) for t in breaks]
    linf = max(norm_h(f) for f in fields)
    solved = [helmholtz_solve(g, f, opts) for f in fields]
    l2v = 0.0
    for k in range(len(breaks) - 1):
        dt = breaks[k + 1] - breaks[k]
        paa = inner_h(fields[k], solved[k])
        pab = inner_h(fields[k], solved[k + 1])
        pbb = inner_h(fields[k + 1], solved[k + 1])
        l2v += dt * (paa + pab + pbb) / 3.0
    return float(linf), float(np.sqrt(max(l2v, 0.0)))


def study(axis, base_scenario, levels, b=None, opts=None, jobs=1, noise_floor=None):
    """Run one trajectory per level and tabulate consecutive differences.

    Parameters
    ----------
    axis : {"h", "lambda", "epsilon"}
    base_scenario : Scenario
        Template; the axis parameter is overridden per level.
    levels : sequence
        Step counts N (increasing) for the h axis, parameter values
        (decreasing) otherwise.
    b : BetaSpec, optional
        Graph for the ledger; defaults to the scenario's.
    opts : SolverOptions, optional
    jobs : int
        Level runs fan out over a process pool when jobs > 1.
    noise_floor : float, optional
        Orders are suppressed below this difference level; defaults to
        10 * newton_tol.

    A level whose run fails marks the report failed and truncates the
    tables after the last successful level.
    """
    if axis not in AXES:
        raise ValueError(f"unknown study axis {axis!r}")
    opts = opts or SolverOptions()
    b = b or base_scenario.beta
    if noise_floor is None:
        noise_floor = 10.0 * opts.newton_tol
    scenarios = [_level_scenario(axis, base_scenario, lv) for lv in levels]
    for sc in scenarios:
        sc.params.validate()
    values = [_level_value(axis, sc) for sc in scenarios]
    if any(v1 >= v0 for v0, v1 in zip(values, values[1:])):
        raise ValueError(f"levels must strictly decrease along the {axis} axis, got {values}")

    report = StudyReport(axis=axis, levels=values)
    trajectories = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_level, (sc, opts)) for sc in scenarios]
            for lv, fut in zip(values, futures):
                try:
                    trajectories.append(fut.result())
                except (SolverFailure, ValueError) as exc:
                    report.failed_level = lv
                    report.failure_message = str(exc)
                    break
    else:
        for lv, sc in zip(values, scenarios):
            try:
                trajectories.append(run(sc, opts))
            except (SolverFailure, ValueError) as exc:
                report.failed_level = lv
                report.failure_message = str(exc)
                break

    report.ledgers = [build_ledger(tr, b, opts) for tr in trajectories]
    views = [interpolants(tr) for tr in trajectories]
    for va, vb in zip(views, views[1:]):
        linf, l2v = _uhat_diff_norms(va, vb, opts)
        report.diffs_linf_h.append(linf)
        report.diffs_l2_vstar.append(l2v)
    ratios = [v0 / v1 for v0, v1 in zip(values, values[1:])][: max(len(report.diffs_linf_h) - 1, 0)]
    report.orders_linf_h = estimate_order(report.diffs_linf_h, ratios, noise_floor)
    report.orders_l2_vstar = estimate_order(report.diffs_l2_vstar, ratios, noise_floor)
    return report


def save_study_csv(report, path):
    """One row per level: parameter, diffs/orders to the next level, ledger."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["axis", "level", "diff_linf_h", "diff_l2_vstar", "order_linf_h", "order_l2_vstar"]
            + LEDGER_COLUMNS
        )
        for i, lv in enumerate(report.levels):
            if i >= len(report.ledgers):
                break

            def cell(seq, k):
                if k < len(seq) and seq[k] is not None:
                    return f"{seq[k]:.17g}"
                return ""

            row = [
                report.axis,
                f"{lv:.17g}",
                cell(report.diffs_linf_h, i),
                cell(report.diffs_l2_vstar, i),
                cell(report.orders_linf_h, i),
                cell(report.orders_l2_vstar, i),
            ]
            row += [
                x if isinstance(x, str) else f"{x:.17g}" for x in report.ledgers[i].row()
            ]
            writer.writerow(row)


def summarize(report):
    """Human-readable block mirroring the CSV table."""
    lines = [f"refinement study along the {report.axis} axis"]
    for i, lv in enumerate(report.levels):
        if i >= len(report.ledgers):
            lines.append(f"  level {lv:.6g}: FAILED ({report.failure_message})")
            break
        entry = f"  level {lv:.6g}"
        if i < len(report.diffs_linf_h):
            entry += f"  dLinfH={report.diffs_linf_h[i]:.6e}  dL2V*={report.diffs_l2_vstar[i]:.6e}"
        if i < len(report.orders_linf_h) and report.orders_linf_h[i] is not None:
            entry += f"  order={report.orders_linf_h[i]:.2f}/{report.orders_l2_vstar[i]:.2f}"
        lines.append(entry)
    if report.failed_level is not None and len(report.ledgers) >= len(report.levels):
        lines.append(f"  failed at level {report.failed_level:.6g}: {report.failure_message}")
    return "\n".join(lines)
