"""Efficiency-loss analysis: bound formulas and worst-case instances.

At any verified equilibrium of the single-link game with p(0) = 0 prices and
nonnegative utilities, the equilibrium surplus is at least 4 sqrt(2) - 5 of
the optimum (about a 34% worst-case loss); monomial prices a f**B tighten the
bound to g(B), which climbs from 20/27 at B = 1 toward 3/4 as the price
curve approaches a hard capacity.  The worst case is realized by linear
utilities on a two-piece-linear price curve: this module evaluates the ratio
formulas for that family, minimizes them, and constructs explicit games
approaching the bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import (
    DegenerateError,
    DomainError,
    InfeasibleError,
    NonConvergence,
    PreconditionError,
)
from .market import LinkInstance, surplus
from .models import LinearUtility
from .nash import verify_nash

__all__ = [
    "WORST_CASE_RATIO",
    "WORST_CASE_SLOPE",
    "RatioReport",
    "WorstCaseInstance",
    "ratio",
    "F_of_p",
    "H",
    "H1",
    "H2",
    "minimize_H",
    "g",
    "g1",
    "g2",
    "monomial_critical_as",
    "build_worst_case",
    "rate_at_unit_price",
    "best_single_price_surplus",
]

_MAX_ITER = 200

# Worst-case equilibrium/optimum surplus ratio, and the first slope of the
# two-piece price curve achieving it (in the steep-second-slope limit).
WORST_CASE_RATIO = 4.0 * math.sqrt(2.0) - 5.0
WORST_CASE_SLOPE = 2.0 - math.sqrt(2.0)


@dataclass(frozen=True)
class RatioReport:
    """Equilibrium-to-optimum surplus ratio against its theoretical bound.

    ``bound`` is None when no bound applies (a price floor p(0) > 0 voids its
    hypotheses); ``margin`` is ratio - bound otherwise.
    """

    nash_surplus: float
    system_surplus: float
    ratio: float
    bound: float | None
    margin: float | None


@dataclass(frozen=True)
class WorstCaseInstance:
    """A constructed linear-utility game whose equilibrium nears the bound."""

    inst: LinkInstance
    w: tuple
    d: tuple
    f: float
    predicted_ratio: float
    n_users: int


def rate_at_unit_price(price):
    """Rate at which the price curve crosses 1, by bracketing + bisection."""
    cap = price.bracket_cap()
    lo = 0.0
    hi = min(1.0, cap)
    for _ in range(_MAX_ITER):
        if price.value(hi) >= 1.0:
            break
        lo = hi
        if hi >= cap:
            raise NonConvergence("price never reaches 1 below the domain cap")
        hi = min(2.0 * hi, cap)
    else:
        raise NonConvergence("failed to bracket the unit-price rate")
    for _ in range(_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if price.value(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def best_single_price_surplus(price):
    """max over f of f - C(f): the optimal surplus when the top utility is d."""
    f = rate_at_unit_price(price)
    return f - price.cost(f)


def ratio(inst, nash, sys):
    """Equilibrium-to-optimum surplus ratio with the applicable bound attached.

    The bound is g(B) for monomial prices, 4 sqrt(2) - 5 for the other
    p(0) = 0 families, and None when the price has a positive floor.
    """
    if sys.surplus <= 0.0:
        raise DegenerateError("optimal surplus must be positive to form a ratio")
    ns = surplus(inst, nash.outcome.d)
    r = ns / sys.surplus
    if r > 1.0 + 1e-9:
        raise DegenerateError(
            f"equilibrium surplus exceeds the reported optimum (ratio {r!r})"
        )
    price = inst.price
    if price.violates_p0:
        bound = None
    elif price.kind == "monomial":
        bound = g(price.B)
    else:
        bound = WORST_CASE_RATIO
    margin = None if bound is None else r - bound
    return RatioReport(ns, sys.surplus, r, bound, margin)


def F_of_p(price):
    """Worst equilibrium/optimum surplus ratio over linear-utility games
    whose equilibrium rate is 1 under this price curve.

    Defined only when an equilibrium with total rate 1 exists, i.e. when
    1 - beta+(1) <= p(1) < 1.
    """
    p1 = price.value(1.0)
    bp = price.beta(1.0)[1]
    if not (1.0 - bp <= p1 < 1.0):
        raise PreconditionError(
            f"price curve admits no rate-1 equilibrium: requires "
            f"1 - beta+(1) <= p(1) < 1, got beta+(1)={bp!r}, p(1)={p1!r}"
        )
    num = p1 + (1.0 - p1) ** 2 / bp - price.cost(1.0)
    return num / best_single_price_surplus(price)


def H(a, b):
    """Ratio formula for the two-piece price with slopes (a, b) and knee 1."""
    if not (0.0 < a < 1.0):
        raise DomainError(f"H requires 0 < a < 1, got a={a!r}")
    if not (b >= max(a, 1.0 - a)):
        raise DomainError(f"H requires b >= max(a, 1-a), got a={a!r}, b={b!r}")
    one = (1.0 - a) ** 2
    return (a * b + 2.0 * (a + b) * one) / (2.0 * b - a * b + one)


def H1(a):
    """H at the smallest admissible second slope b = max(a, 1-a)."""
    if not (0.0 < a < 1.0):
        raise DomainError(f"H1 requires 0 < a < 1, got a={a!r}")
    if a <= 0.5:
        return (2.0 - a) / (3.0 - 2.0 * a)
    return a * a + 4.0 * a * (1.0 - a) ** 2


def H2(a):
    """Limit of H as the second slope grows without bound."""
    if not (0.0 < a < 1.0):
        raise DomainError(f"H2 requires 0 < a < 1, got a={a!r}")
    return (a + 2.0 * (1.0 - a) ** 2) / (2.0 - a)


def _golden_min(fn, lo, hi, iters=120):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = fn(x1), fn(x2)
    for _ in range(iters):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = fn(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = fn(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def minimize_H():
    """Worst slope and worst ratio over the whole two-piece family.

    Returns the closed-form pair (2 - sqrt(2), 4 sqrt(2) - 5) after
    confirming it numerically: a grid over the first slope combined with the
    two extreme second slopes (H is a ratio of affine functions of b, so its
    minimum in b sits at an endpoint), refined by golden-section search.
    """

    def over_b(a):
        return min(H1(a), H(a, 1e8))

    step = 1e-3
    grid_best = min(
        (over_b(step * i), step * i) for i in range(1, int(1.0 / step))
    )
    a0 = grid_best[1]
    a_num, v_num = _golden_min(over_b, max(1e-9, a0 - 2 * step), min(1 - 1e-9, a0 + 2 * step))
    if abs(v_num - WORST_CASE_RATIO) > 1e-6 or abs(a_num - WORST_CASE_SLOPE) > 1e-4:
        raise NonConvergence(
            "numeric confirmation of the worst-case constant failed",
            a=a_num,
            value=v_num,
        )
    return WORST_CASE_SLOPE, WORST_CASE_RATIO


def g(B):
    """Efficiency bound for monomial prices a f**B (the binding branch)."""
    return g2(B)


def g2(B):
    if not (B >= 1.0):
        raise DomainError(f"g requires B >= 1, got {B!r}")
    return ((B + 1.0) / (2.0 * B + 1.0)) ** (1.0 / B) * (
        (B + 1.0) * (3.0 * B + 2.0) / (2.0 * B + 1.0) ** 2
    )


def g1(B):
    """Ratio at the other critical coefficient; never below 3/4 for B >= 1."""
    if not (B >= 1.0):
        raise DomainError(f"g1 requires B >= 1, got {B!r}")
    return (1.0 / (B + 1.0)) ** (1.0 / B) * ((B + 2.0) / (B + 1.0))


def monomial_critical_as(B):
    """Coefficients at which the monomial-family ratio is stationary."""
    if not (B >= 1.0):
        raise DomainError(f"critical coefficients require B >= 1, got {B!r}")
    return 1.0 / (B + 1.0), (B + 1.0) / (2.0 * B + 1.0)


def build_worst_case(price, n_users, verify_tol=1e-8, deviation_samples=64):
    """Construct the linear-utility game minimizing equilibrium surplus at rate 1.

    Requires a price normalized so the target equilibrium rate sits at 1
    (for the two-piece family, knee 1) and admitting such an equilibrium.
    User 1 takes the smallest feasible rate (1 - p(1)) / beta+(1) at weight
    1; the remaining rate splits evenly over the other users, whose weights
    make the lower equilibrium condition bind exactly.  The resulting bids
    are verified to be an equilibrium before returning.
    """
    p1 = price.value(1.0)
    bm, bp = price.beta(1.0)
    if not (1.0 - bp <= p1 < 1.0):
        raise InfeasibleError(
            f"price curve admits no rate-1 equilibrium: requires "
            f"1 - beta+(1) <= p(1) < 1, got beta+(1)={bp!r}, p(1)={p1!r}"
        )
    d1 = (1.0 - p1) / bp
    if n_users < 2:
        raise InfeasibleError(
            "the construction splits rate over at least two users", min_users=2
        )
    d_tail = (1.0 - d1) / (n_users - 1.0)
    cap = (1.0 - p1) / bm
    if d_tail > cap * (1.0 + 1e-12):
        min_users = max(2, math.ceil(1.0 + (1.0 - d1) / cap))
        raise InfeasibleError(
            f"user count {n_users} cannot absorb the residual rate: each "
            f"follower needs d <= (1 - p(1)) / beta-(1) = {cap!r}; the "
            f"smallest feasible user count is {min_users}",
            min_users=min_users,
        )
    alpha_tail = p1 / (1.0 - bm * d_tail)
    users = (LinearUtility(1.0),) + tuple(
        LinearUtility(alpha_tail) for _ in range(n_users - 1)
    )
    inst = LinkInstance(price, users)
    d = (d1,) + (d_tail,) * (n_users - 1)
    w = tuple(p1 * x for x in d)

    check = verify_nash(inst, w, tol=verify_tol, deviation_samples=deviation_samples)
    if not check.passed:  # pragma: no cover - construction satisfies the conditions
        raise NonConvergence(
            "constructed worst case failed equilibrium verification", report=check
        )
    nash_surplus = math.fsum(u.alpha * x for u, x in zip(users, d)) - price.cost(1.0)
    predicted = nash_surplus / best_single_price_surplus(price)
    return WorstCaseInstance(inst, w, d, 1.0, predicted, n_users)
