"""Clearing mechanism, aggregate surplus, SYSTEM, and the price-taking benchmark."""

import math

import numpy as np
import pytest

from elastic_market import (
    DomainError,
    LinearPrice,
    LinearUtility,
    LinkInstance,
    Log1pUtility,
    MM1Price,
    MonomialPrice,
    ShiftedPowerUtility,
    TwoPiecePrice,
    clear,
    market_rate,
    price_taking_equilibrium,
    solve_system,
    surplus,
)
from elastic_market.market import market_rate_batch
from elastic_market.sampling import random_link_instance, random_price

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0  # root of f**2 + f - 1


class TestClear:
    def test_linear_two_users(self):
        out = clear(LinearPrice(1.0), (3.0, 1.0))
        assert out.f == pytest.approx(2.0)
        assert out.mu == pytest.approx(2.0)
        assert out.d == pytest.approx((1.5, 0.5))

    def test_zero_bids(self):
        out = clear(MonomialPrice(2.0, 3.0), (0.0, 0.0))
        assert (out.f, out.mu, out.d) == (0.0, 0.0, (0.0, 0.0))

    def test_monomial(self):
        out = clear(MonomialPrice(2.0, 2.0), (2.0,))
        assert out.f == pytest.approx(1.0)
        assert out.mu == pytest.approx(2.0)
        assert out.d[0] == pytest.approx(1.0)

    def test_zero_bidder_gets_zero(self):
        out = clear(LinearPrice(1.0), (1.0, 0.0))
        assert out.d[1] == 0.0
        assert out.d[0] > 0.0

    def test_negative_bid_rejected(self):
        with pytest.raises(DomainError):
            clear(LinearPrice(1.0), (1.0, -0.5))

    def test_residual_tiny_on_random_bids(self):
        rng = np.random.default_rng(10)
        for _ in range(500):
            price = random_price(rng, ("linear", "monomial", "two_piece", "mm1"))
            w = rng.uniform(0.0, 5.0, size=rng.integers(1, 6))
            out = clear(price, w)
            assert out.residual <= 1e-12 * max(1.0, float(w.sum()))
            assert abs(math.fsum(out.d) - out.f) <= 1e-12 * max(1.0, out.f)

    def test_monotone_in_single_bid(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            price = random_price(rng)
            base = rng.uniform(0.0, 2.0, size=3)
            bumped = base.copy()
            bumped[1] += rng.uniform(0.01, 1.0)
            assert clear(price, bumped).f > clear(price, base).f

    def test_rate_concave_in_revenue(self):
        # f = g^{-1}(revenue) with g convex increasing, so f is concave.
        rng = np.random.default_rng(12)
        for _ in range(100):
            price = random_price(rng, ("linear", "monomial", "two_piece", "mm1"))
            r1, r2, r3 = np.sort(rng.uniform(0.01, 10.0, size=3))
            if r3 - r1 < 1e-9:
                continue
            t = (r2 - r1) / (r3 - r1)
            chord = (1 - t) * market_rate(price, r1) + t * market_rate(price, r3)
            assert market_rate(price, r2) >= chord - 1e-9 * max(1.0, chord)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(13)
        for price in (LinearPrice(0.7), TwoPiecePrice(0.5, 9.0, 1.3), MM1Price(1.0, 2.0)):
            revs = np.append(rng.uniform(0.0, 8.0, size=64), 0.0)
            batch = market_rate_batch(price, revs)
            for rev, f in zip(revs, batch):
                assert f == pytest.approx(market_rate(price, float(rev)), abs=1e-14)


class TestSurplus:
    def test_single_user(self):
        inst = LinkInstance(LinearPrice(1.0), (LinearUtility(1.0),))
        assert surplus(inst, (1.0,)) == pytest.approx(0.5)

    def test_zero_allocation(self):
        inst = LinkInstance(LinearPrice(1.0), (LinearUtility(1.0), Log1pUtility(1.0, 1.0)))
        assert surplus(inst, (0.0, 0.0)) == 0.0

    def test_two_users(self):
        inst = LinkInstance(LinearPrice(1.0), (LinearUtility(1.0), LinearUtility(1.0)))
        assert surplus(inst, (3 / 8, 3 / 8)) == pytest.approx(15 / 32)


class TestSolveSystem:
    def test_single_linear_user(self):
        inst = LinkInstance(LinearPrice(1.0), (LinearUtility(1.0),))
        sol = solve_system(inst)
        assert sol.d[0] == pytest.approx(1.0, abs=1e-10)
        assert sol.f == pytest.approx(1.0, abs=1e-10)
        assert sol.surplus == pytest.approx(0.5, abs=1e-12)

    def test_corner_solution_matches_grid_oracle(self):
        # Independent check: coarse 2-D grid search of the surplus itself.
        inst = LinkInstance(LinearPrice(1.0), (LinearUtility(1.0), LinearUtility(0.5)))
        sol = solve_system(inst)
        grid = np.linspace(0.0, 2.0, 401)
        best = max(
            (x + 0.5 * y - 0.5 * (x + y) ** 2, x, y) for x in grid for y in grid
        )
        assert best[1:] == (1.0, 0.0)
        assert sol.d == pytest.approx((1.0, 0.0), abs=1e-9)
        assert sol.surplus == pytest.approx(best[0], abs=1e-10)

    def test_log1p_root(self):
        inst = LinkInstance(LinearPrice(1.0), (Log1pUtility(1.0, 1.0),))
        sol = solve_system(inst)
        assert sol.f == pytest.approx(GOLDEN, abs=1e-12)

    def test_mm1_degenerate_when_priced_out(self):
        # p(0) = a/s = 1 exceeds every marginal utility: nobody enters.
        inst = LinkInstance(MM1Price(2.0, 2.0), (LinearUtility(0.5),))
        sol = solve_system(inst)
        assert sol.f == 0.0 and sol.surplus == 0.0

    def test_kkt_residual_small_on_random_instances(self):
        rng = np.random.default_rng(14)
        for _ in range(100):
            inst = random_link_instance(rng)
            sol = solve_system(inst)
            assert sol.kkt_residual <= 1e-7
            assert sol.f == pytest.approx(math.fsum(sol.d), abs=1e-12)

    def test_optimality_against_perturbations(self):
        rng = np.random.default_rng(15)
        for _ in range(20):
            inst = random_link_instance(rng)
            sol = solve_system(inst)
            base = np.asarray(sol.d)
            for _ in range(50):
                delta = rng.normal(scale=0.05, size=base.size)
                cand = np.maximum(base + delta, 0.0)
                if inst.price.domain_sup() <= float(cand.sum()):
                    continue
                assert surplus(inst, cand) <= sol.surplus + 1e-10


class TestPriceTaking:
    def test_single_user(self):
        inst = LinkInstance(LinearPrice(1.0), (LinearUtility(1.0),))
        w, out = price_taking_equilibrium(inst)
        assert w[0] == pytest.approx(1.0, abs=1e-10)
        assert out.f == pytest.approx(1.0, abs=1e-10)
        assert out.mu == pytest.approx(1.0, abs=1e-10)

    def test_corner(self):
        inst = LinkInstance(LinearPrice(1.0), (LinearUtility(1.0), LinearUtility(0.5)))
        w, _ = price_taking_equilibrium(inst)
        assert w == pytest.approx((1.0, 0.0), abs=1e-9)

    def test_round_trip_reproduces_optimum(self):
        rng = np.random.default_rng(16)
        for _ in range(100):
            inst = random_link_instance(rng)
            sol = solve_system(inst)
            w, out = price_taking_equilibrium(inst)
            assert np.allclose(out.d, sol.d, atol=1e-10, rtol=1e-8)

    def test_surplus_matches_system(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            inst = random_link_instance(rng)
            sol = solve_system(inst)
            _, out = price_taking_equilibrium(inst)
            assert surplus(inst, out.d) == pytest.approx(sol.surplus, abs=1e-8)


class TestMixedFamilies:
    def test_two_piece_system(self):
        # With the price curve kinked at 1 and a single linear user with
        # alpha between the two slopes' reach, the optimum sits at p(f) = 1.
        price = TwoPiecePrice(0.5, 2.0, 1.0)
        inst = LinkInstance(price, (LinearUtility(1.0),))
        sol = solve_system(inst)
        # a + b (f - 1) = 1  ->  f = 1.25
        assert sol.f == pytest.approx(1.25, abs=1e-9)

    def test_shifted_power_interior(self):
        inst = LinkInstance(LinearPrice(1.0), (ShiftedPowerUtility(1.0, 1.0, 2.0),))
        sol = solve_system(inst)
        # (d + 1)^-2 = d  has the real root d ~= 0.4655712318767680
        assert sol.f == pytest.approx(0.4655712318767680, abs=1e-10)
