"""Batch experiment front end: scenario files in, CSV/report files out.

Single runs default to a JSON report (same syntax family as scenarios);
grid sweeps default to CSV with one row per grid point and a stable,
documented column set.  All floating output carries 17 significant digits,
so identical scenario + seed + flags reproduce byte-identical files.

Exit codes: 0 success, 1 solver non-convergence, 2 invalid input,
3 efficiency bound violated (bound-check only).
"""

from __future__ import annotations

import dataclasses
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import click
import numpy as np

from . import efficiency
from .errors import (
    DegenerateError,
    DomainError,
    ElasticMarketError,
    InfeasibleError,
    NonConvergence,
    ParseError,
    PreconditionError,
    ValidationError,
)
from .market import clear, price_taking_equilibrium, solve_system, surplus
from .models import MonomialPrice, TwoPiecePrice
from .nash import SolverConfig, solve_nash_best_response, solve_nash_direct, verify_nash
from .network import network_surplus, solve_network_nash, solve_network_system
from .reporting import render_csv, render_report
from .sampling import random_link_instance
from .scenario import parse_scenario

BOUND_SLACK = 1e-6  # margin below the theoretical bound that trips exit code 3


def _pool_size(n_jobs):
    cap = os.environ.get("ELASTIC_MARKET_THREADS")
    workers = int(cap) if cap else 8
    return max(1, min(workers, n_jobs))


def _map_ordered(fn, items):
    """Evaluate grid points on a bounded pool, results in input order."""
    n = len(items)
    if n <= 1 or _pool_size(n) == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=_pool_size(n)) as pool:
        return list(pool.map(fn, items))


def _resolved_config(scn, tol, seed, max_iter):
    base = scn.solver if scn is not None else SolverConfig()
    kwargs = dataclasses.asdict(base)
    if tol is not None:
        kwargs["tol"] = tol
    if seed is not None:
        kwargs["seed"] = seed
    if max_iter is not None:
        kwargs["max_sweeps"] = max_iter
    return SolverConfig(**kwargs)


def _emit(command, config, header, rows, fmt, out, extra=None, started=None):
    if fmt == "csv":
        text = render_csv(header, rows)
    else:
        report = {"command": command}
        if config is not None:
            report["config"] = dataclasses.asdict(config)
        report["columns"] = list(header)
        report["rows"] = [list(r) for r in rows]
        if extra:
            report.update(extra)
        if started is not None:
            report["wall_time_s"] = time.perf_counter() - started
        text = render_report(report)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


def _guard(fn):
    """Map package errors onto the documented exit codes."""

    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ParseError, ValidationError, DomainError, PreconditionError,
                InfeasibleError, DegenerateError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(2)
        except NonConvergence as e:
            click.echo(f"solver failed: {e}", err=True)
            sys.exit(1)
        except ElasticMarketError as e:  # pragma: no cover - safety net
            click.echo(f"error: {e}", err=True)
            sys.exit(1)

    wrapped.__name__ = fn.__name__
    wrapped.__doc__ = fn.__doc__
    return wrapped


def _scenario_options(fn):
    fn = click.option("--scenario", "scenario_path", required=True,
                      type=click.Path(), help="Scenario file (JSON).")(fn)
    fn = click.option("--out", "out", type=click.Path(), default=None,
                      help="Write output here instead of stdout.")(fn)
    fn = click.option("--format", "fmt", type=click.Choice(["csv", "report"]),
                      default=None, help="Output format (default: report for "
                      "single runs, csv for sweeps).")(fn)
    fn = click.option("--tol", type=float, default=None, help="Solver tolerance override.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Seed override.")(fn)
    fn = click.option("--max-iter", type=int, default=None, help="Sweep cap override.")(fn)
    return fn


def _parse_bid_list(text):
    try:
        return [float(x) for x in text.split(",") if x != ""]
    except ValueError as e:
        raise ValidationError(f"--bids: {e}") from e


def _parse_grid(text, name):
    try:
        values = [float(x) for x in text.split(",") if x != ""]
    except ValueError as e:
        raise ValidationError(f"{name}: {e}") from e
    if not values:
        raise ValidationError(f"{name}: needs at least one value")
    return values


def _need_single_link(scn):
    if scn.kind != "single_link":
        raise ValidationError("this command needs a single_link scenario")
    return scn.link


def _need_network(scn):
    if scn.kind != "network":
        raise ValidationError("this command needs a network scenario")
    return scn.network


@click.group()
@click.version_option(package_name="elastic-market", prog_name="elastic-market")
def main():
    """Experiment harness for the elastic-supply bidding game."""


@main.command("clear")
@_scenario_options
@click.option("--bids", "bids_flag", default=None,
              help="Comma-separated bid vector (overrides the scenario's).")
@_guard
def cmd_clear(scenario_path, out, fmt, tol, seed, max_iter, bids_flag):
    """Clear the market for a bid vector on a single link."""
    started = time.perf_counter()
    scn = parse_scenario(scenario_path)
    inst = _need_single_link(scn)
    bids = _parse_bid_list(bids_flag) if bids_flag is not None else scn.bids
    if bids is None:
        raise ValidationError('bids: provide "--bids" or a "bids" field in the scenario')
    if len(bids) != inst.n_users:
        raise ValidationError(f"bids: expected {inst.n_users} entries, got {len(bids)}")
    outcome = clear(inst.price, bids)
    header = ["user", "bid", "rate"]
    rows = [[r, bids[r], outcome.d[r]] for r in range(inst.n_users)]
    extra = {"f": outcome.f, "mu": outcome.mu, "residual": outcome.residual}
    cfg = _resolved_config(scn, tol, seed, max_iter)
    _emit("clear", cfg, header, rows, fmt or "report", out, extra, started)


@main.command("system")
@_scenario_options
@_guard
def cmd_system(scenario_path, out, fmt, tol, seed, max_iter):
    """Socially optimal allocation for a single link."""
    started = time.perf_counter()
    scn = parse_scenario(scenario_path)
    inst = _need_single_link(scn)
    cfg = _resolved_config(scn, tol, seed, max_iter)
    sol = solve_system(inst, tol=cfg.tol)
    header = ["user", "rate"]
    rows = [[r, sol.d[r]] for r in range(inst.n_users)]
    extra = {"f": sol.f, "lam": sol.lam, "surplus": sol.surplus,
             "kkt_residual": sol.kkt_residual}
    _emit("system", cfg, header, rows, fmt or "report", out, extra, started)


@main.command("price-taking")
@_scenario_options
@_guard
def cmd_price_taking(scenario_path, out, fmt, tol, seed, max_iter):
    """Price-taking equilibrium bids (reproduces the social optimum)."""
    started = time.perf_counter()
    scn = parse_scenario(scenario_path)
    inst = _need_single_link(scn)
    cfg = _resolved_config(scn, tol, seed, max_iter)
    w, outcome = price_taking_equilibrium(inst, tol=cfg.tol)
    header = ["user", "bid", "rate"]
    rows = [[r, w[r], outcome.d[r]] for r in range(inst.n_users)]
    extra = {"f": outcome.f, "mu": outcome.mu,
             "surplus": surplus(inst, outcome.d), "residual": outcome.residual}
    _emit("price-taking", cfg, header, rows, fmt or "report", out, extra, started)


def _solve_nash(inst, cfg, method):
    if method == "direct":
        return solve_nash_direct(inst, cfg)
    return solve_nash_best_response(inst, cfg=cfg)


@main.command("nash")
@_scenario_options
@click.option("--method", type=click.Choice(["br", "direct"]), default="br",
              show_default=True, help="Best-response dynamics or the direct "
              "characterization (differentiable prices only).")
@_guard
def cmd_nash(scenario_path, out, fmt, tol, seed, max_iter, method):
    """Nash equilibrium of the single-link price-anticipating game."""
    started = time.perf_counter()
    scn = parse_scenario(scenario_path)
    inst = _need_single_link(scn)
    cfg = _resolved_config(scn, tol, seed, max_iter)
    res = _solve_nash(inst, cfg, method)
    sysol = solve_system(inst, tol=cfg.tol)
    rep = efficiency.ratio(inst, res, sysol)
    header = ["user", "bid", "rate", "viol_upper", "viol_lower"]
    rows = [
        [r, res.w[r], res.outcome.d[r],
         res.residual_report.viol_upper[r], res.residual_report.viol_lower[r]]
        for r in range(inst.n_users)
    ]
    extra = {
        "method": res.method,
        "sweeps": res.sweeps,
        "max_bid_delta": res.max_bid_delta,
        "f": res.outcome.f,
        "mu": res.outcome.mu,
        "nash_surplus": rep.nash_surplus,
        "system_surplus": rep.system_surplus,
        "ratio": rep.ratio,
        "bound": rep.bound,
        "margin": rep.margin,
        "verified": res.residual_report.passed,
        "max_deviation_gain": res.residual_report.max_deviation_gain,
    }
    _emit("nash", cfg, header, rows, fmt or "report", out, extra, started)


@main.command("verify")
@_scenario_options
@click.option("--bids", "bids_flag", default=None,
              help="Comma-separated bid vector (overrides the scenario's).")
@_guard
def cmd_verify(scenario_path, out, fmt, tol, seed, max_iter, bids_flag):
    """Check whether a bid profile is a Nash equilibrium."""
    started = time.perf_counter()
    scn = parse_scenario(scenario_path)
    inst = _need_single_link(scn)
    cfg = _resolved_config(scn, tol, seed, max_iter)
    bids = _parse_bid_list(bids_flag) if bids_flag is not None else scn.bids
    if bids is None:
        raise ValidationError('bids: provide "--bids" or a "bids" field in the scenario')
    check = verify_nash(inst, bids, tol=max(cfg.tol, 1e-10),
                        deviation_samples=cfg.deviation_samples)
    header = ["user", "bid", "viol_upper", "viol_lower"]
    rows = [[r, float(bids[r]), check.viol_upper[r], check.viol_lower[r]]
            for r in range(inst.n_users)]
    extra = {
        "passed": check.passed,
        "sum_positive": check.sum_positive,
        "max_violation": check.max_violation,
        "max_deviation_gain": check.max_deviation_gain,
        "tol": check.tol,
    }
    _emit("verify", cfg, header, rows, fmt or "report", out, extra, started)


_WC_HEADER = ["a", "b", "B", "R", "d1", "d_tail", "alpha_tail",
              "nash_surplus", "system_surplus", "ratio", "bound", "margin", "verified"]


def _worst_case_row(price, R):
    wc = efficiency.build_worst_case(price, R)
    nash_surplus = wc.predicted_ratio * efficiency.best_single_price_surplus(price)
    if price.kind == "monomial":
        a, b, B, bound = price.a, None, price.B, efficiency.g(price.B)
    else:
        a, b, B, bound = price.a, price.b, None, efficiency.WORST_CASE_RATIO
    return [a, b, B, R, wc.d[0], wc.d[-1] if wc.n_users > 1 else None,
            wc.inst.users[-1].alpha, nash_surplus,
            efficiency.best_single_price_surplus(price), wc.predicted_ratio,
            bound, wc.predicted_ratio - bound, True]


@main.command("worst-case")
@click.option("--a", "a_", type=float, default=None, help="First slope of the two-piece price.")
@click.option("--b", "b_", type=float, default=None, help="Second slope of the two-piece price.")
@click.option("--B", "B_", type=float, default=None,
              help="Monomial exponent (uses the worst coefficient for that exponent).")
@click.option("--R", "R_", default=None, help="User count, or comma-separated counts.")
@click.option("--scenario", "scenario_path", type=click.Path(), default=None,
              help="Scenario whose experiment.R_grid supplies the user counts.")
@click.option("--out", type=click.Path(), default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "report"]), default=None)
@_guard
def cmd_worst_case(a_, b_, B_, R_, scenario_path, out, fmt):
    """Construct worst-case games: --a/--b (two-piece) or --B (monomial)."""
    started = time.perf_counter()
    if B_ is not None:
        if a_ is not None or b_ is not None:
            raise ValidationError("give either --a/--b or --B, not both")
        coeff = efficiency.monomial_critical_as(B_)[1]
        price = MonomialPrice(coeff, B_)
    elif a_ is not None and b_ is not None:
        price = TwoPiecePrice(a_, b_, 1.0)
    else:
        raise ValidationError("give --a and --b for a two-piece price, or --B for a monomial")
    counts = [int(x) for x in _grid_from(R_, scenario_path, "R_grid", "--R")]
    rows = _map_ordered(lambda R: _worst_case_row(price, R), counts)
    _emit("worst-case", None, _WC_HEADER, rows, fmt or "csv", out, started=started)


def _grid_from(flag, scenario_path, key, name):
    """Resolve a sweep grid from its flag, falling back to the scenario's
    experiment section."""
    if flag is not None:
        return _parse_grid(flag, name)
    if scenario_path is not None:
        grids = parse_scenario(scenario_path).experiment
        if key in grids:
            return grids[key]
    raise ValidationError(f"{name}: give the flag or a scenario with experiment.{key}")


@main.command("sweep-g")
@click.option("--B-grid", "grid", default=None, help="Comma-separated exponents.")
@click.option("--scenario", "scenario_path", type=click.Path(), default=None,
              help="Scenario whose experiment.B_grid supplies the exponents.")
@click.option("--out", type=click.Path(), default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "report"]), default=None)
@_guard
def cmd_sweep_g(grid, scenario_path, out, fmt):
    """Tabulate the monomial efficiency bound g over an exponent grid."""
    started = time.perf_counter()
    values = _grid_from(grid, scenario_path, "B_grid", "--B-grid")
    header = ["B", "g", "g1", "g2", "a1", "a2"]

    def row(B):
        a1, a2 = efficiency.monomial_critical_as(B)
        return [B, efficiency.g(B), efficiency.g1(B), efficiency.g2(B), a1, a2]

    rows = _map_ordered(row, values)
    _emit("sweep-g", None, header, rows, fmt or "csv", out, started=started)


@main.command("sweep-h")
@click.option("--a-grid", "a_grid", default=None, help="Comma-separated first slopes in (0,1).")
@click.option("--b-grid", "b_grid", default=None, help="Comma-separated second slopes.")
@click.option("--scenario", "scenario_path", type=click.Path(), default=None,
              help="Scenario whose experiment.a_grid/b_grid supply the slopes.")
@click.option("--out", type=click.Path(), default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "report"]), default=None)
@_guard
def cmd_sweep_h(a_grid, b_grid, scenario_path, out, fmt):
    """Tabulate the two-piece ratio H over an (a, b) grid."""
    started = time.perf_counter()
    avals = _grid_from(a_grid, scenario_path, "a_grid", "--a-grid")
    bvals = _grid_from(b_grid, scenario_path, "b_grid", "--b-grid")
    header = ["a", "b", "H", "H1", "H2"]
    points = [(a, b) for a in avals for b in bvals]

    def row(point):
        a, b = point
        return [a, b, efficiency.H(a, b), efficiency.H1(a), efficiency.H2(a)]

    rows = _map_ordered(row, points)
    _emit("sweep-h", None, header, rows, fmt or "csv", out, started=started)


@main.command("network-system")
@_scenario_options
@_guard
def cmd_network_system(scenario_path, out, fmt, tol, seed, max_iter):
    """Socially optimal path rates for a network scenario."""
    started = time.perf_counter()
    scn = parse_scenario(scenario_path)
    inst = _need_network(scn)
    cfg = _resolved_config(scn, tol, seed, max_iter)
    sol = solve_network_system(inst, tol=max(cfg.tol, 1e-10))
    header = ["path", "rate"]
    rows = [[q, float(sol.y[q])] for q in range(inst.topo.n_paths)]
    extra = {
        "f": [float(v) for v in sol.f],
        "d": [float(v) for v in sol.d],
        "surplus": sol.surplus,
        "kkt_residual": sol.kkt_residual,
    }
    _emit("network-system", cfg, header, rows, fmt or "report", out, extra, started)


@main.command("network-nash")
@_scenario_options
@_guard
def cmd_network_nash(scenario_path, out, fmt, tol, seed, max_iter):
    """Nash equilibrium of the network game (verified before reporting)."""
    started = time.perf_counter()
    scn = parse_scenario(scenario_path)
    inst = _need_network(scn)
    cfg = _resolved_config(scn, tol, seed, max_iter)
    W, alloc, diag = solve_network_nash(inst, init=scn.bids, cfg=cfg)
    header = ["link", "user", "bid", "granted"]
    rows = [
        [j, r, float(W[j, r]), float(alloc.x[j, r])]
        for j in range(inst.topo.n_links)
        for r in range(inst.topo.n_users)
    ]
    extra = {
        "f": [float(v) for v in alloc.f],
        "d": [float(v) for v in alloc.d],
        "surplus": network_surplus(inst, alloc.d, alloc.f),
        "sweeps": diag.sweeps,
        "max_bid_delta": diag.max_bid_delta,
        "restarts": diag.restarts,
        "verified": diag.check.passed,
        "max_deviation_gain": diag.check.max_gain,
        "deviation_gains": [float(v) for v in diag.check.gains],
    }
    _emit("network-nash", cfg, header, rows, fmt or "report", out, extra, started)


_BOUND_HEADER = ["instance", "price_kind", "users", "nash_surplus",
                 "system_surplus", "ratio", "bound", "margin", "verified"]


def _bound_check_single(inst, cfg, label):
    try:
        res = solve_nash_direct(inst, cfg)
    except PreconditionError:
        res = solve_nash_best_response(inst, cfg=cfg)
    sysol = solve_system(inst, tol=cfg.tol)
    rep = efficiency.ratio(inst, res, sysol)
    return [label, inst.price.kind, inst.n_users, rep.nash_surplus,
            rep.system_surplus, rep.ratio, rep.bound, rep.margin,
            res.residual_report.passed]


@main.command("bound-check")
@click.option("--scenario", "scenario_path", type=click.Path(), default=None,
              help="Check one scenario instead of random instances.")
@click.option("--random", "n_random", type=int, default=None,
              help="Number of random single-link instances to check.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tol", type=float, default=None)
@click.option("--max-iter", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "report"]), default=None)
@_guard
def cmd_bound_check(scenario_path, n_random, seed, tol, max_iter, out, fmt):
    """Solve nash + system and compare the ratio to its bound (exit 3 if violated)."""
    started = time.perf_counter()
    rows = []
    if scenario_path is not None:
        scn = parse_scenario(scenario_path)
        inst = _need_single_link(scn)
        cfg = _resolved_config(scn, tol, seed, max_iter)
        rows.append(_bound_check_single(inst, cfg, 0))
    elif n_random is not None:
        if n_random < 1:
            raise ValidationError("--random: needs a positive count")
        cfg = _resolved_config(None, tol, seed, max_iter)
        rng = np.random.default_rng(cfg.seed)
        instances = [random_link_instance(rng) for _ in range(n_random)]
        rows = _map_ordered(
            lambda item: _bound_check_single(item[1], cfg, item[0]),
            list(enumerate(instances)),
        )
    else:
        raise ValidationError("give --scenario or --random N")
    violated = any(
        row[7] is not None and row[7] < -BOUND_SLACK for row in rows
    )
    _emit("bound-check", None, _BOUND_HEADER, rows, fmt or "csv", out, started=started)
    if violated:
        click.echo("bound violated", err=True)
        sys.exit(3)


if __name__ == "__main__":
    main()
