"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; tolerances are fixed here and nowhere else.
"""

import itertools
import math
import time

import numpy as np
import pytest

from elastic_market import (
    WORST_CASE_RATIO,
    WORST_CASE_SLOPE,
    LinearPrice,
    LinearUtility,
    LinkInstance,
    NetworkInstance,
    PreconditionError,
    SolverConfig,
    Topology,
    TwoPiecePrice,
    allocation_derivs,
    build_worst_case,
    check_network_bound,
    clear,
    g,
    market_rate,
    max_rate,
    minimize_H,
    price_taking_equilibrium,
    solve_nash_best_response,
    solve_nash_direct,
    solve_network_nash,
    solve_network_system,
    solve_system,
    surplus,
    verify_nash,
)
from elastic_market.efficiency import H
from elastic_market.sampling import (
    random_link_instance,
    random_network_instance,
    random_price,
)

H_ASTAR_100 = 0.6574779512204402  # H(2 - sqrt(2), 100), frozen from direct evaluation


def _solve_any(inst, cfg=None):
    try:
        return solve_nash_direct(inst, cfg)
    except PreconditionError:
        return solve_nash_best_response(inst, cfg=cfg)


def test_c1_worst_case_constant():
    started = time.perf_counter()
    a_star, value = minimize_H()
    elapsed = time.perf_counter() - started
    assert abs(value - (4.0 * math.sqrt(2.0) - 5.0)) <= 1e-6
    assert abs(a_star - (2.0 - math.sqrt(2.0))) <= 1e-4
    assert elapsed < 5.0
    print(f"\nACCEPTANCE 1 worst-case constant: PASS ({elapsed:.2f}s)")


def test_c2_monomial_curve():
    started = time.perf_counter()
    assert abs(g(1.0) - 20.0 / 27.0) <= 1e-12
    assert abs(g(1000.0) - 0.75) <= 1e-3
    values = [g(B) for B in (1.0, 2.0, 5.0, 10.0, 100.0)]
    assert all(x < y for x, y in zip(values, values[1:]))
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0
    print(f"\nACCEPTANCE 2 monomial curve: PASS ({elapsed:.2f}s)")


def test_c3_constructed_tightness():
    started = time.perf_counter()
    price = TwoPiecePrice(WORST_CASE_SLOPE, 100.0, 1.0)
    wc = build_worst_case(price, 10_000)
    assert verify_nash(wc.inst, wc.w, tol=1e-8).passed
    assert abs(wc.predicted_ratio - H(WORST_CASE_SLOPE, 100.0)) <= 2e-3
    assert abs(wc.predicted_ratio - H_ASTAR_100) <= 2e-3
    ratios = [build_worst_case(price, R).predicted_ratio for R in (3, 10, 100)]
    ratios.append(wc.predicted_ratio)
    assert all(x >= y for x, y in zip(ratios, ratios[1:]))
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    print(f"\nACCEPTANCE 3 constructed tightness: PASS ({elapsed:.2f}s)")


def test_c4_analytic_equilibria():
    one = LinkInstance(LinearPrice(1.0), (LinearUtility(1.0),))
    two = LinkInstance(LinearPrice(1.0), (LinearUtility(1.0), LinearUtility(1.0)))

    # independent oracle: dense grid search of the own-bid payoff at 1e-6
    w_grid = np.arange(0.0, 2.0, 1e-6)
    with np.errstate(divide="ignore", invalid="ignore"):
        q_solo = np.where(w_grid > 0, w_grid / np.sqrt(w_grid), 0.0) - w_grid
        q_sym = np.where(w_grid > 0, w_grid / np.sqrt(w_grid + 9 / 32), 0.0) - w_grid
    assert w_grid[q_solo.argmax()] == pytest.approx(0.25, abs=1e-6)
    assert w_grid[q_sym.argmax()] == pytest.approx(9 / 32, abs=1e-6)

    for solver in (solve_nash_direct, solve_nash_best_response):
        res1 = solver(one)
        assert res1.w[0] == pytest.approx(0.25, abs=1e-8)
        assert res1.outcome.f == pytest.approx(0.5, abs=1e-8)
        assert surplus(one, res1.outcome.d) / solve_system(one).surplus == pytest.approx(
            0.75, abs=1e-8
        )
        res2 = solver(two)
        assert res2.w == pytest.approx((9 / 32, 9 / 32), abs=1e-8)
        assert res2.outcome.f == pytest.approx(0.75, abs=1e-8)
        assert surplus(two, res2.outcome.d) / solve_system(two).surplus == pytest.approx(
            15 / 16, abs=1e-8
        )
    print("\nACCEPTANCE 4 analytic equilibria: PASS")


def test_c5_price_taking_matches_system():
    rng = np.random.default_rng(500)
    for _ in range(100):
        inst = random_link_instance(rng)  # p(0) = 0 families only
        sol = solve_system(inst)
        _, outcome = price_taking_equilibrium(inst)
        assert abs(surplus(inst, outcome.d) - sol.surplus) <= 1e-8
    print("\nACCEPTANCE 5 price-taking equivalence: PASS (100 instances)")


def test_c6_efficiency_bound_suite():
    # M/M/1 prices are excluded throughout: their price floor p(0) > 0
    # violates the hypotheses behind both bounds.
    started = time.perf_counter()
    rng = np.random.default_rng(600)
    checked = monomial_checked = 0
    for _ in range(200):
        inst = random_link_instance(rng)
        res = _solve_any(inst)
        assert res.residual_report.passed
        sol = solve_system(inst)
        rat = surplus(inst, res.outcome.d) / sol.surplus
        assert rat >= WORST_CASE_RATIO - 1e-6
        if inst.price.kind in ("monomial", "linear"):
            B = getattr(inst.price, "B", 1.0)
            assert rat >= g(B) - 1e-6
            monomial_checked += 1
        checked += 1
    elapsed = time.perf_counter() - started
    assert checked >= 200
    assert elapsed < 300.0
    print(
        f"\nACCEPTANCE 6 efficiency bound suite: PASS "
        f"({checked} instances, {monomial_checked} monomial, {elapsed:.1f}s)"
    )


def test_c7_solver_cross_validation():
    rng = np.random.default_rng(700)
    for _ in range(50):
        inst = random_link_instance(rng, price_kinds=("linear", "monomial", "mm1"))
        direct = solve_nash_direct(inst)
        br_ones = solve_nash_best_response(inst, init=[1.0] * inst.n_users)
        br_near_zero = solve_nash_best_response(inst, init=[1e-3] * inst.n_users)
        assert np.allclose(direct.w, br_ones.w, atol=1e-6)
        assert np.allclose(br_ones.w, br_near_zero.w, atol=1e-6)
    print("\nACCEPTANCE 7 solver cross-validation: PASS (50 instances)")


def _enumerate_max_flow(topo, r, xbar):
    paths = topo.paths_of(r)
    links = topo.links_of_user(r)
    A = topo.A[np.ix_(links, paths)].astype(float)
    b = np.asarray(xbar, float)[links]
    n = len(paths)
    rows = np.vstack([A, -np.eye(n)])
    rhs = np.concatenate([b, np.zeros(n)])
    best = 0.0
    for idx in itertools.combinations(range(len(rows)), n):
        sub = rows[list(idx)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        y = np.linalg.solve(sub, rhs[list(idx)])
        if (rows @ y <= rhs + 1e-9).all():
            best = max(best, float(y.sum()))
    return best


def test_c8_network_reduction_and_bound():
    started = time.perf_counter()
    # single-link network reproduces the single-link game
    net = NetworkInstance(
        Topology(A=[[1, 1]], H=[[1, 0], [0, 1]]),
        (LinearPrice(1.0),),
        (LinearUtility(1.0), LinearUtility(1.0)),
    )
    W, alloc, diag = solve_network_nash(net, cfg=SolverConfig(tol=1e-9))
    link = LinkInstance(LinearPrice(1.0), (LinearUtility(1.0), LinearUtility(1.0)))
    ref = solve_nash_direct(link)
    assert np.allclose(W[0], ref.w, atol=1e-6)
    net_sys = solve_network_system(net, tol=1e-9)
    assert abs(net_sys.surplus - solve_system(link).surplus) <= 1e-6

    # max-flow matches brute-force vertex enumeration on small instances
    rng = np.random.default_rng(801)
    checked = 0
    while checked < 40:
        inst = random_network_instance(rng, max_paths=3)
        topo = inst.topo
        r = int(rng.integers(topo.n_users))
        if len(topo.paths_of(r)) > 3:
            continue
        xbar = np.zeros(topo.n_links)
        links = topo.links_of_user(r)
        xbar[links] = rng.uniform(0.0, 3.0, size=len(links))
        assert max_rate(topo, r, xbar)[0] == pytest.approx(
            _enumerate_max_flow(topo, r, xbar), abs=1e-10
        )
        checked += 1

    # bound on verified equilibria of random small networks
    rng = np.random.default_rng(800)
    done = attempts = 0
    while done < 50 and attempts < 70:
        attempts += 1
        inst = random_network_instance(rng, price_kinds=("linear", "monomial"))
        W, alloc, diag = solve_network_nash(
            inst, cfg=SolverConfig(tol=1e-8, max_sweeps=400)
        )
        assert diag.check.passed
        sysol = solve_network_system(inst, tol=1e-9)
        rep = check_network_bound(inst, alloc, sysol)
        assert rep.margin >= -1e-6
        done += 1
    assert done >= 50
    elapsed = time.perf_counter() - started
    print(
        f"\nACCEPTANCE 8 network reduction and bound: PASS "
        f"({done} networks in {attempts} attempts, {elapsed:.1f}s)"
    )


def test_c9_mechanism_invariants():
    started = time.perf_counter()
    rng = np.random.default_rng(900)

    # clearing residual on 1e5 random bid vectors across all families
    worst = 0.0
    for _ in range(200):
        price = random_price(rng, ("linear", "monomial", "two_piece", "mm1"))
        for _ in range(500):
            w = rng.uniform(0.0, 5.0, size=int(rng.integers(1, 6)))
            out = clear(price, w)
            worst = max(worst, out.residual / max(1.0, float(w.sum())))
    assert worst <= 1e-12

    # rate strictly increasing and concave in the total bid
    for _ in range(200):
        price = random_price(rng, ("linear", "monomial", "two_piece", "mm1"))
        r1, r2, r3 = np.sort(rng.uniform(0.01, 8.0, size=3))
        if r3 - r1 < 1e-9 or r2 in (r1, r3):
            continue
        f1, f2, f3 = (market_rate(price, x) for x in (r1, r2, r3))
        assert f1 < f2 < f3
        t = (r2 - r1) / (r3 - r1)
        assert f2 >= (1 - t) * f1 + t * f3 - 1e-9 * max(1.0, f3)

    # allocation derivatives against central finite differences off-kink
    checked = 0
    while checked < 100:
        inst = random_link_instance(rng)
        n = inst.n_users
        w = rng.uniform(0.05, 2.0, size=n)
        r = int(rng.integers(n))
        if inst.price.kind == "two_piece":
            if abs(clear(inst.price, w).f - inst.price.k) < 1e-2:
                continue
        h = 1e-6 * max(1.0, w[r])
        wp, wm = w.copy(), w.copy()
        wp[r] += h
        wm[r] -= h
        fd = (clear(inst.price, wp).d[r] - clear(inst.price, wm).d[r]) / (2 * h)
        left, right = allocation_derivs(inst, r, w)
        assert abs(fd - right) <= 1e-6 * max(1.0, abs(right))
        assert abs(left - right) <= 1e-9 * max(1.0, abs(right))
        checked += 1

    elapsed = time.perf_counter() - started
    print(f"\nACCEPTANCE 9 mechanism invariants: PASS ({elapsed:.1f}s)")
