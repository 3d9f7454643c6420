"""Single-link market clearing, aggregate surplus, and the social optimum.

The mechanism takes a bid vector w, picks the total rate f at which revenue
equals the aggregate charge (sum(w) = f p(f)) and grants each positive bidder
d_r = w_r / p(f).  Because f p(f) is continuous and strictly increasing, the
clearing rate is found by plain bisection; the solvers here never assume p is
differentiable, so the same code serves the kinked worst-case price curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NonConvergence

__all__ = [
    "LinkInstance",
    "ClearingOutcome",
    "SystemSolution",
    "clear",
    "market_rate",
    "market_rate_batch",
    "surplus",
    "solve_system",
    "price_taking_equilibrium",
]

_MAX_ITER = 200

# Relative width at which linear-utility users count as marginal in SYSTEM.
_PLATEAU_RTOL = 1e-9


@dataclass(frozen=True)
class LinkInstance:
    """One shared link: a price model plus the ordered list of user utilities."""

    price: object
    users: tuple

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        if len(self.users) < 1:
            raise ValueError("a link instance needs at least one user")

    @property
    def n_users(self):
        return len(self.users)


@dataclass(frozen=True)
class ClearingOutcome:
    """Market-clearing result: total rate, price, per-user grants, residual."""

    f: float
    mu: float
    d: tuple
    residual: float


@dataclass(frozen=True)
class SystemSolution:
    """Socially optimal allocation with its marginal price and diagnostics."""

    d: tuple
    f: float
    lam: float
    surplus: float
    kkt_residual: float


def market_rate(price, revenue):
    """Rate f solving f p(f) = revenue, by bracketing + bisection.

    The bracket is grown by doubling from f = 1 (capped strictly inside the
    price domain) and then bisected until the floats are adjacent, so the
    returned rate carries the smallest achievable residual.
    """
    if not (revenue >= 0.0) or not math.isfinite(revenue):
        raise DomainError(f"revenue must be finite and nonnegative, got {revenue!r}")
    if revenue == 0.0:
        return 0.0
    cap = price.bracket_cap()
    lo = 0.0
    hi = min(1.0, cap)
    for _ in range(_MAX_ITER):
        if hi * price.value(hi) >= revenue:
            break
        lo = hi
        if hi >= cap:
            raise NonConvergence(
                f"no clearing rate below the domain cap {cap!r} reaches revenue {revenue!r}"
            )
        hi = min(2.0 * hi, cap)
    else:
        raise NonConvergence(f"failed to bracket the clearing rate for revenue {revenue!r}")
    for _ in range(_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if mid * price.value(mid) < revenue:
            lo = mid
        else:
            hi = mid
    if abs(lo * price.value(lo) - revenue) <= abs(hi * price.value(hi) - revenue):
        return lo
    return hi


def market_rate_batch(price, revenue):
    """Vectorized ``market_rate`` over an array of revenues (lockstep bisection)."""
    rev = np.asarray(revenue, dtype=float)
    out = np.zeros(rev.shape)
    flat = rev.ravel()
    pos = flat > 0.0
    if not pos.any():
        return out
    t = flat[pos]
    if (t < 0).any() or not np.isfinite(t).all():
        raise DomainError("revenues must be finite and nonnegative")
    cap = price.bracket_cap()
    lo = np.zeros(t.shape)
    hi = np.full(t.shape, min(1.0, cap))
    for _ in range(_MAX_ITER):
        need = hi * price.value_array(hi) < t
        if not need.any():
            break
        if (need & (hi >= cap)).any():
            raise NonConvergence("no clearing rate below the domain cap reaches some revenue")
        lo[need] = hi[need]
        hi[need] = np.minimum(2.0 * hi[need], cap)
    else:
        raise NonConvergence("failed to bracket some clearing rate")
    for _ in range(3 * _MAX_ITER):
        mid = 0.5 * (lo + hi)
        open_ = (mid > lo) & (mid < hi)
        if not open_.any():
            break
        less = mid * price.value_array(mid) < t
        lo = np.where(open_ & less, mid, lo)
        hi = np.where(open_ & ~less, mid, hi)
    res_lo = np.abs(lo * price.value_array(lo) - t)
    res_hi = np.abs(hi * price.value_array(hi) - t)
    out.ravel()[pos] = np.where(res_lo <= res_hi, lo, hi)
    return out


def clear(price, bids):
    """Clear the market for a bid vector: unique (f, mu) with proportional grants.

    Zero total bids yield the (0, 0) outcome; a zero bidder among positive
    ones is granted exactly zero.
    """
    w = [float(x) for x in bids]
    for x in w:
        if not (x >= 0.0) or not math.isfinite(x):
            raise DomainError(f"bids must be finite and nonnegative, got {x!r}")
    total = math.fsum(w)
    if total == 0.0:
        return ClearingOutcome(0.0, 0.0, (0.0,) * len(w), 0.0)
    f = market_rate(price, total)
    mu = price.value(f)
    d = tuple(x / mu if x > 0.0 else 0.0 for x in w)
    return ClearingOutcome(f, mu, d, abs(total - f * mu))


def surplus(inst, d):
    """Aggregate surplus sum_r U_r(d_r) - C(sum_r d_r) at an allocation d."""
    d = list(d)
    if len(d) != inst.n_users:
        raise DomainError(f"allocation length {len(d)} != user count {inst.n_users}")
    total = math.fsum(d)
    return math.fsum(u.value(x) for u, x in zip(inst.users, d)) - inst.price.cost(total)


def _total_demand(users, lam):
    total = 0.0
    for u in users:
        q = u.demand(lam)
        if math.isinf(q):
            return math.inf
        total += q
    return total


def solve_system(inst, tol=1e-10):
    """Maximize aggregate surplus over nonnegative allocations.

    The optimum is characterized by a marginal price lam = p(f) at which each
    active user's marginal utility equals lam and every inactive user's
    marginal at 0 is at most lam.  Total demand at p(f) minus f is strictly
    decreasing in f, so an outer bisection on f finds the optimum; users with
    linear utility produce a demand plateau exactly at lam = alpha, which is
    resolved by assigning the residual rate to the tied user with the largest
    alpha (lowest index on exact ties).  Any tie-break yields the same
    surplus, which is all downstream ratios consume.
    """
    price, users = inst.price, inst.users
    p0 = price.value(0.0)
    umax = max(u.marginal(0.0) for u in users)
    if umax <= p0:
        # Nobody values rate above the price floor; only p(0) > 0 gets here.
        d = (0.0,) * len(users)
        return SystemSolution(d, 0.0, p0, 0.0, 0.0)

    cap = price.bracket_cap()
    lo = 0.0
    hi = min(1.0, cap)
    for _ in range(_MAX_ITER):
        if _total_demand(users, price.value(hi)) <= hi:
            break
        lo = hi
        if hi >= cap:
            raise NonConvergence("failed to bracket the socially optimal rate")
        hi = min(2.0 * hi, cap)
    else:
        raise NonConvergence("failed to bracket the socially optimal rate")

    for _ in range(3 * _MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _total_demand(users, price.value(mid)) > mid:
            lo = mid
        else:
            hi = mid

    f = hi
    lam = price.value(f)
    d = [u.demand(lam) for u in users]
    if any(math.isinf(x) for x in d):  # pragma: no cover - excluded by bracketing
        raise NonConvergence("demand still unbounded at the bisection endpoint")

    plateau = [
        r
        for r, u in enumerate(users)
        if u.kind == "linear" and abs(u.alpha - lam) <= _PLATEAU_RTOL * max(1.0, lam)
    ]
    residual = f - math.fsum(d)
    if plateau and residual > 0.0:
        best = min(plateau, key=lambda r: (-users[r].alpha, r))
        d[best] += residual

    f = math.fsum(d)
    lam = price.value(f)
    kkt = 0.0
    for u, x in zip(users, d):
        if x > 0.0:
            kkt = max(kkt, abs(u.marginal(x) - lam))
        else:
            kkt = max(kkt, max(0.0, u.marginal(0.0) - lam))
    return SystemSolution(tuple(d), f, lam, surplus(inst, d), kkt)


def price_taking_equilibrium(inst, tol=1e-10):
    """Bid vector at which price takers are all individually optimal.

    Bidding w_r = d_r p(f) at the social optimum makes the market clear at
    the optimal rate, so the mechanism reproduces the optimum when users do
    not anticipate their price impact.  Returns the bids and the clearing
    outcome; raises if the stationarity conditions fail numerically.
    """
    sol = solve_system(inst, tol)
    w = tuple(x * sol.lam for x in sol.d)
    out = clear(inst.price, w)
    if out.f == 0.0:
        return w, out
    gate = max(1e-8, 100.0 * tol) * max(1.0, out.mu)
    for u, wr, dr in zip(inst.users, w, out.d):
        if wr > 0.0:
            if abs(u.marginal(dr) - out.mu) > gate:
                raise NonConvergence(
                    "price-taking stationarity failed for an active user",
                    marginal=u.marginal(dr),
                    mu=out.mu,
                )
        elif u.marginal(0.0) > out.mu + gate:
            raise NonConvergence(
                "price-taking stationarity failed for an inactive user",
                marginal=u.marginal(0.0),
                mu=out.mu,
            )
    return w, out
