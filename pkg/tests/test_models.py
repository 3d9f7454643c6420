"""Price/utility family unit tests and their analytic invariants."""

import math

import numpy as np
import pytest

from elastic_market import (
    DomainError,
    LinearPrice,
    LinearUtility,
    Log1pUtility,
    MM1Price,
    MonomialPrice,
    ShiftedPowerUtility,
    TwoPiecePrice,
    price_from_spec,
    utility_from_spec,
)

ALL_PRICES = [
    LinearPrice(1.0),
    LinearPrice(2.5),
    MonomialPrice(2.0, 2.0),
    MonomialPrice(0.7, 3.5),
    TwoPiecePrice(0.5, 3.0, 1.0),
    TwoPiecePrice(1.2, 1.2, 0.7),
    MM1Price(1.0, 2.0),
    MM1Price(0.3, 4.0),
]

ALL_UTILITIES = [
    LinearUtility(0.7),
    Log1pUtility(1.0, 1.0),
    Log1pUtility(2.0, 0.5),
    ShiftedPowerUtility(1.0, 1.0, 2.0),
    ShiftedPowerUtility(1.5, 0.8, 0.5),
]


def domain_points(price, n=25, rng=None):
    hi = min(price.domain_sup() * 0.98, 8.0)
    if rng is None:
        return np.linspace(hi / n, hi, n)
    return rng.uniform(hi * 1e-3, hi, size=n)


class TestPriceEval:
    def test_monomial(self):
        assert MonomialPrice(2.0, 2.0).value(1.0) == 2.0

    def test_two_piece_knee_endpoint(self):
        p = TwoPiecePrice(0.4, 7.0, 1.0)
        assert p.value(1.0) == pytest.approx(0.4, abs=0)

    def test_mm1(self):
        assert MM1Price(1.0, 2.0).value(1.0) == pytest.approx(2.0)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            LinearPrice(1.0).value(-0.1)
        with pytest.raises(DomainError):
            MM1Price(1.0, 2.0).value(2.0)

    def test_strictly_increasing(self):
        rng = np.random.default_rng(1)
        for p in ALL_PRICES:
            f = np.sort(domain_points(p, rng=rng))
            vals = [p.value(x) for x in f]
            assert all(a < b for a, b in zip(vals, vals[1:]))


class TestPriceCost:
    def test_linear(self):
        assert LinearPrice(1.0).cost(1.0) == 0.5

    def test_monomial(self):
        assert MonomialPrice(1.0, 1.0).cost(2.0) == pytest.approx(2.0)

    def test_mm1_closed_form(self):
        assert MM1Price(1.0, 2.0).cost(1.0) == pytest.approx(1.0)

    def test_matches_quadrature(self):
        # C(f) must agree with trapezoid integration of the price curve.
        for p in ALL_PRICES:
            f = min(p.domain_sup() * 0.9, 3.0)
            grid = np.linspace(0.0, f, 100_001)
            approx = np.trapezoid(p.value_array(grid), grid)
            assert abs(p.cost(f) - approx) <= 1e-6 * (1.0 + p.cost(f))

    def test_cost_zero_at_zero(self):
        for p in ALL_PRICES:
            assert p.cost(0.0) == 0.0


class TestPriceDerivs:
    def test_two_piece_knee(self):
        assert TwoPiecePrice(0.5, 3.0, 1.0).derivs(1.0) == (0.5, 3.0)

    def test_linear(self):
        assert LinearPrice(2.0).derivs(5.0) == (2.0, 2.0)

    def test_monomial(self):
        lo, hi = MonomialPrice(1.0, 2.0).derivs(1.0)
        assert lo == hi == pytest.approx(2.0)

    def test_matches_finite_differences_off_knee(self):
        rng = np.random.default_rng(2)
        for p in ALL_PRICES:
            for f in domain_points(p, n=10, rng=rng):
                if p.kind == "two_piece" and abs(f - p.k) < 1e-3:
                    continue
                h = 1e-7 * max(1.0, f)
                fd = (p.value(f + h) - p.value(max(f - h, 0.0))) / (h + min(f, h))
                lo, hi = p.derivs(f)
                assert lo == hi
                assert lo == pytest.approx(fd, rel=1e-4)


class TestElasticityAndBeta:
    def test_monomial_constant(self):
        p = MonomialPrice(0.9, 3.0)
        for f in (0.2, 1.0, 4.0):
            assert p.elasticity(f) == (3.0, 3.0)
            assert p.beta(f) == (0.75, 0.75)

    def test_two_piece_at_knee(self):
        a, b = 1.0, 4.0
        p = TwoPiecePrice(a, b, 1.0)
        assert p.elasticity(1.0) == pytest.approx((1.0, b / a))
        assert p.beta(1.0) == pytest.approx((0.5, b / (a + b)))

    def test_linear_is_half(self):
        assert LinearPrice(3.3).beta(2.0) == (0.5, 0.5)

    def test_mm1(self):
        assert MM1Price(0.5, 2.0).elasticity(1.0) == pytest.approx((2.0, 2.0))

    def test_beta_identity_and_ranges(self):
        rng = np.random.default_rng(3)
        for p in ALL_PRICES:
            for f in domain_points(p, n=10, rng=rng):
                em, ep = p.elasticity(f)
                bm, bp = p.beta(f)
                assert 0.0 < em <= ep
                assert bm == em / (1.0 + em) and bp == ep / (1.0 + ep)
                assert 0.0 < bm <= bp < 1.0

    def test_nondecreasing_elasticity_families(self):
        # Monomial and M/M/1 prices have nondecreasing elasticity; the
        # two-piece family only satisfies it away from the knee.
        rng = np.random.default_rng(4)
        for p in [MonomialPrice(1.0, 2.5), MM1Price(1.0, 3.0), LinearPrice(0.8)]:
            f = np.sort(domain_points(p, n=20, rng=rng))
            eps = [p.elasticity(x)[0] for x in f]
            assert all(a <= b + 1e-12 for a, b in zip(eps, eps[1:]))


class TestConvexity:
    def test_price_convexity_probe(self):
        rng = np.random.default_rng(5)
        for p in ALL_PRICES:
            for _ in range(200):
                f1, f2, f3 = np.sort(domain_points(p, n=3, rng=rng))
                if f3 - f1 < 1e-9:
                    continue
                t = (f2 - f1) / (f3 - f1)
                chord = (1 - t) * p.value(f1) + t * p.value(f3)
                assert p.value(f2) <= chord + 1e-10 * max(1.0, chord)

    def test_cost_strictly_convex(self):
        rng = np.random.default_rng(6)
        for p in ALL_PRICES:
            for _ in range(50):
                f1, f3 = np.sort(domain_points(p, n=2, rng=rng))
                if f3 - f1 < 1e-6:
                    continue
                mid = 0.5 * (f1 + f3)
                assert p.cost(mid) < 0.5 * (p.cost(f1) + p.cost(f3))


class TestUtilities:
    def test_linear_values(self):
        u = LinearUtility(0.7)
        assert u.value(2.0) == pytest.approx(1.4)
        assert u.marginal(2.0) == 0.7

    def test_log1p_at_zero(self):
        u = Log1pUtility(1.0, 1.0)
        assert u.value(0.0) == 0.0
        assert u.marginal(0.0) == 1.0

    def test_shifted_power(self):
        u = ShiftedPowerUtility(1.0, 1.0, 2.0)
        assert u.value(1.0) == pytest.approx(0.5)
        assert u.marginal(1.0) == pytest.approx(0.25)

    def test_zero_at_zero_and_finite_marginal(self):
        for u in ALL_UTILITIES:
            assert u.value(0.0) == pytest.approx(0.0, abs=1e-15)
            assert 0.0 < u.marginal(0.0) < math.inf

    def test_domain_error(self):
        with pytest.raises(DomainError):
            LinearUtility(1.0).value(-1.0)

    def test_marginal_nonincreasing(self):
        rng = np.random.default_rng(7)
        for u in ALL_UTILITIES:
            d = np.sort(rng.uniform(0.0, 10.0, size=20))
            m = [u.marginal(x) for x in d]
            assert all(a >= b - 1e-12 for a, b in zip(m, m[1:]))

    def test_concavity_probe(self):
        rng = np.random.default_rng(8)
        for u in ALL_UTILITIES:
            for _ in range(200):
                d1, d2, d3 = np.sort(rng.uniform(0.0, 8.0, size=3))
                if d3 - d1 < 1e-9:
                    continue
                t = (d2 - d1) / (d3 - d1)
                chord = (1 - t) * u.value(d1) + t * u.value(d3)
                assert u.value(d2) >= chord - 1e-10 * max(1.0, abs(chord))


class TestDemand:
    def test_log1p(self):
        assert Log1pUtility(1.0, 1.0).demand(0.5) == pytest.approx(1.0)

    def test_linear_above_and_below(self):
        assert LinearUtility(1.0).demand(2.0) == 0.0
        assert LinearUtility(1.0).demand(0.5) == math.inf

    def test_zero_when_marginal_at_zero_too_small(self):
        for u in ALL_UTILITIES:
            assert u.demand(u.marginal(0.0) * 1.01) == 0.0

    def test_inverts_marginal(self):
        rng = np.random.default_rng(9)
        for u in ALL_UTILITIES:
            if u.kind == "linear":
                continue
            for lam in rng.uniform(0.01, u.marginal(0.0) * 0.99, size=10):
                d = u.demand(float(lam))
                assert u.marginal(d) == pytest.approx(lam, rel=1e-10)


class TestSpecRoundTrip:
    @pytest.mark.parametrize("model", ALL_PRICES)
    def test_price(self, model):
        assert price_from_spec(model.to_spec()) == model

    @pytest.mark.parametrize("model", ALL_UTILITIES)
    def test_utility(self, model):
        assert utility_from_spec(model.to_spec()) == model

    def test_bad_specs(self):
        with pytest.raises(ValueError, match="a > 0"):
            price_from_spec({"kind": "linear", "a": -1.0})
        with pytest.raises(ValueError, match="unknown price kind"):
            price_from_spec({"kind": "cubic", "a": 1.0})
        with pytest.raises(ValueError, match="unknown price field"):
            price_from_spec({"kind": "linear", "a": 1.0, "zz": 2})

    def test_constructor_constraints(self):
        with pytest.raises(ValueError):
            MonomialPrice(1.0, 0.5)
        with pytest.raises(ValueError):
            TwoPiecePrice(2.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            ShiftedPowerUtility(1.0, 1.0, 1.0)
