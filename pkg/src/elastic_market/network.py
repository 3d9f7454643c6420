"""The multi-link game: per-link clearing, max-flow grants, and solvers.

Users hold paths through a set of priced links and submit one bid per link.
Each link clears independently (same mechanism as the single link); a user
then routes as much rate as its per-link grants allow, which is a small
dense LP over its own path rates.  The social optimum is solved by projected
gradient over path rates, best responses by coordinate ascent over a user's
own path rates (bids recovered through the grant-to-bid inversion), and
equilibria are verified by sampled unilateral deviations in grant space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DomainError, NonConvergence
from .lp import solve_lp_max
from .market import clear
from .nash import SolverConfig

__all__ = [
    "Topology",
    "NetworkInstance",
    "NetworkAllocation",
    "NetworkSystemSolution",
    "NetworkNashDiagnostics",
    "NetworkCheck",
    "bid_matrix",
    "clear_links",
    "max_rate",
    "network_surplus",
    "solve_network_system",
    "omega",
    "best_response_network",
    "solve_network_nash",
    "verify_network_nash",
    "check_network_bound",
]

_MAX_ITER = 200


@dataclass(frozen=True)
class Topology:
    """Link-path incidence A (links x paths) and user-path ownership H
    (users x paths); every path belongs to exactly one user."""

    A: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=int)
        H = np.asarray(self.H, dtype=int)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "H", H)
        if A.ndim != 2 or H.ndim != 2:
            raise ValueError("incidence matrices must be 2-D")
        if A.shape[1] != H.shape[1]:
            raise ValueError("A and H must agree on the path count")
        if not np.isin(A, (0, 1)).all() or not np.isin(H, (0, 1)).all():
            raise ValueError("incidence entries must be 0 or 1")
        if (H.sum(axis=0) != 1).any():
            raise ValueError("every path must belong to exactly one user")
        if (A.sum(axis=0) < 1).any():
            raise ValueError("every path must use at least one link")
        if (H.sum(axis=1) < 1).any():
            raise ValueError("every user must own at least one path")

    @property
    def n_links(self):
        return self.A.shape[0]

    @property
    def n_paths(self):
        return self.A.shape[1]

    @property
    def n_users(self):
        return self.H.shape[0]

    def paths_of(self, r):
        return np.nonzero(self.H[r])[0]

    def links_of_path(self, q):
        return np.nonzero(self.A[:, q])[0]

    def links_of_user(self, r):
        return np.nonzero(self.A[:, self.paths_of(r)].sum(axis=1) > 0)[0]

    def usable(self):
        """Boolean (links x users): link j lies on some path of user r."""
        return (self.A.astype(bool) @ self.H.T.astype(bool))


@dataclass(frozen=True)
class NetworkInstance:
    topo: Topology
    prices: tuple
    users: tuple

    def __post_init__(self):
        object.__setattr__(self, "prices", tuple(self.prices))
        object.__setattr__(self, "users", tuple(self.users))
        if len(self.prices) != self.topo.n_links:
            raise ValueError("one price model per link required")
        if len(self.users) != self.topo.n_users:
            raise ValueError("one utility model per user required")


@dataclass(frozen=True)
class NetworkAllocation:
    x: np.ndarray  # links x users granted rate
    f: np.ndarray  # per-link totals
    y: np.ndarray  # per-path witness rates
    d: np.ndarray  # per-user routed rate


@dataclass(frozen=True)
class NetworkSystemSolution:
    y: np.ndarray
    f: np.ndarray
    d: np.ndarray
    surplus: float
    kkt_residual: float


@dataclass(frozen=True)
class NetworkCheck:
    passed: bool
    max_gain: float
    gains: tuple
    tol: float


@dataclass(frozen=True)
class NetworkNashDiagnostics:
    sweeps: int
    max_bid_delta: float
    restarts: int
    check: NetworkCheck


def bid_matrix(inst, W):
    """Validate a (links x users) bid matrix; bids off a user's paths must be 0."""
    W = np.array(W, dtype=float)
    topo = inst.topo
    if W.shape != (topo.n_links, topo.n_users):
        raise DomainError(
            f"bid matrix must be {(topo.n_links, topo.n_users)}, got {W.shape}"
        )
    if not np.isfinite(W).all() or (W < 0).any():
        raise DomainError("bids must be finite and nonnegative")
    if (W[~topo.usable()] != 0).any():
        raise DomainError("bids on links off a user's paths must be zero")
    return W


def clear_links(inst, W):
    """Clear every link independently; returns per-link totals and grants."""
    W = bid_matrix(inst, W)
    J, R = W.shape
    f = np.zeros(J)
    x = np.zeros((J, R))
    for j in range(J):
        out = clear(inst.prices[j], W[j])
        f[j] = out.f
        x[j] = out.d
    return f, x


def max_rate(topo, r, xbar):
    """Most rate user r can route given per-link grants xbar (full-length).

    A max-flow over the user's own paths: maximize total path rate subject
    to, at each link, the touching path rates staying within the grant.
    Returns the optimum and a full-length path-rate witness.
    """
    xbar = np.asarray(xbar, dtype=float)
    paths = topo.paths_of(r)
    links = topo.links_of_user(r)
    if (xbar[links] < 0).any():
        raise DomainError("grants must be nonnegative")
    A_sub = topo.A[np.ix_(links, paths)]
    value, y_sub = solve_lp_max(np.ones(len(paths)), A_sub, xbar[links])
    y = np.zeros(topo.n_paths)
    y[paths] = y_sub
    return value, y


def network_surplus(inst, d, f):
    """sum_r U_r(d_r) - sum_j C_j(f_j)."""
    d = np.asarray(d, dtype=float)
    f = np.asarray(f, dtype=float)
    util = math.fsum(u.value(x) for u, x in zip(inst.users, d))
    cost = math.fsum(p.cost(x) for p, x in zip(inst.prices, f))
    return util - cost


def _objective(inst, y):
    f = inst.topo.A @ y
    d = inst.topo.H @ y
    return network_surplus(inst, d, f), f, d


def _gradient(inst, f, d):
    uder = np.array([u.marginal(x) for u, x in zip(inst.users, d)])
    pvec = np.array([p.value(x) for p, x in zip(inst.prices, f)])
    return inst.topo.H.T @ uder - inst.topo.A.T @ pvec


def _kkt_residual(y, grad):
    active = y > 1e-12
    res = 0.0
    if active.any():
        res = float(np.abs(grad[active]).max())
    if (~active).any():
        res = max(res, float(np.maximum(grad[~active], 0.0).max()))
    return res


def _polish_path_rates(inst, y, f, d, tol, max_sweeps=400):
    """Drive the KKT residual down by exact coordinate solves.

    Each path rate solves a strictly decreasing scalar equation (owner's
    marginal utility equals the summed link prices along the path), found by
    bisection on the derivative sign.  Unlike objective-based line searches
    this keeps working when improvements are below float resolution, which
    is what limits plain projected gradient near the optimum.
    """
    topo = inst.topo
    owner_of = np.argmax(topo.H, axis=0)
    path_links = [topo.links_of_path(q) for q in range(topo.n_paths)]
    for _ in range(max_sweeps):
        f = topo.A @ y
        d = topo.H @ y
        if _kkt_residual(y, _gradient(inst, f, d)) <= tol:
            break
        for q in range(topo.n_paths):
            u = inst.users[owner_of[q]]
            links = path_links[q]
            prices = [inst.prices[int(j)] for j in links]
            base_d = max(0.0, d[owner_of[q]] - y[q])
            base_f = np.maximum(0.0, f[links] - y[q])

            def slope(t):
                return u.marginal(base_d + t) - math.fsum(
                    p.value(base_f[i] + t) for i, p in enumerate(prices)
                )

            hi_cap = min(p.bracket_cap() - base_f[i] for i, p in enumerate(prices))
            if slope(0.0) <= 0.0:
                new = 0.0
            else:
                lo = 0.0
                hi = min(max(1.0, 2.0 * y[q]), hi_cap)
                for _ in range(_MAX_ITER):
                    if slope(hi) <= 0.0:
                        break
                    lo = hi
                    hi = min(2.0 * hi, hi_cap)
                else:  # pragma: no cover - prices grow without bound
                    raise NonConvergence("path-rate polish failed to bracket")
                for _ in range(_MAX_ITER):
                    mid = 0.5 * (lo + hi)
                    if mid <= lo or mid >= hi:
                        break
                    if slope(mid) > 0.0:
                        lo = mid
                    else:
                        hi = mid
                new = 0.5 * (lo + hi)
            delta = new - y[q]
            if delta != 0.0:
                y[q] = new
                d[owner_of[q]] += delta
                f[links] += delta
    return y, topo.A @ y, topo.H @ y


def _newton_polish(inst, y, tol, max_rounds=60):
    """Active-set Newton on the stationarity system over positive path rates.

    Coordinate and gradient steps both crawl when paths couple through
    shared links; the reduced system is tiny (one row per active path), its
    Jacobian is closed-form (utility curvature minus summed price slopes on
    shared links), and Newton restores quadratic convergence.  Steps that do
    not reduce the KKT residual are halved, and paths pushed negative leave
    the active set.
    """
    topo = inst.topo
    owner_of = np.argmax(topo.H, axis=0)
    A = topo.A.astype(float)
    y = y.copy()

    def state(yv):
        f = topo.A @ yv
        d = topo.H @ yv
        grad = _gradient(inst, f, d)
        return f, d, grad

    f, d, grad = state(y)
    res = _kkt_residual(y, grad)
    for _ in range(max_rounds):
        if res <= tol:
            break
        active = np.nonzero((y > 1e-12) | (grad > tol))[0]
        if active.size == 0:
            break
        uc = np.array([inst.users[r].curvature(d[r]) for r in range(topo.n_users)])
        ps = np.array([p.derivs(x)[1] for p, x in zip(inst.prices, f)])
        jac = np.zeros((active.size, active.size))
        for i, q in enumerate(active):
            for k, q2 in enumerate(active):
                same_owner = owner_of[q] == owner_of[q2]
                shared = float((A[:, q] * A[:, q2] * ps).sum())
                jac[i, k] = (uc[owner_of[q]] if same_owner else 0.0) - shared
        try:
            delta = np.linalg.solve(jac, -grad[active])
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(jac, -grad[active], rcond=None)[0]
        scale = 1.0
        improved = False
        for _ in range(40):
            cand = y.copy()
            cand[active] = np.maximum(0.0, cand[active] + scale * delta)
            cf, cd, cgrad = state(cand)
            cres = _kkt_residual(cand, cgrad)
            if cres < res:
                y, f, d, grad, res = cand, cf, cd, cgrad, cres
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
    return y, f, d, res


def solve_network_system(inst, tol=1e-9, max_iters=3000):
    """Social optimum over path rates by projected gradient ascent.

    The per-path gradient is the owner's marginal utility minus the summed
    link prices along the path; steps project onto y >= 0 and are halved
    whenever the objective would decrease.  Plain gradient steps saturate
    once objective improvements fall below float resolution, so the residual
    gap is closed by per-path derivative bisections and an active-set Newton
    polish; the stated KKT condition is enforced at the end: near-zero
    gradient on active paths, nonpositive on idle ones.  The per-link totals
    are unique even when the path split is not.
    """
    topo = inst.topo
    y = np.zeros(topo.n_paths)
    obj, f, d = _objective(inst, y)
    step = 1.0
    for _ in range(max_iters):
        grad = _gradient(inst, f, d)
        res = _kkt_residual(y, grad)
        if res <= tol:
            return NetworkSystemSolution(y, f, d, obj, res)
        stalled = False
        for _ in range(200):
            cand = np.maximum(0.0, y + step * grad)
            if np.array_equal(cand, y):
                step *= 2.0
                continue
            cand_obj, cand_f, cand_d = _objective(inst, cand)
            if cand_obj >= obj - 1e-18:
                break
            step *= 0.5
            if step < 1e-300:
                stalled = True
                break
        else:
            stalled = True
        if stalled:
            break
        y, obj, f, d = cand, cand_obj, cand_f, cand_d
        step = min(step * 1.3, 1e12)

    y, f, d = _polish_path_rates(inst, y, f, d, tol, max_sweeps=50)
    res = _kkt_residual(y, _gradient(inst, f, d))
    if res > tol:
        y, f, d, res = _newton_polish(inst, y, tol)
    if res > tol:
        raise NonConvergence("network optimum did not reach tolerance", kkt=res)
    obj = network_surplus(inst, d, f)
    return NetworkSystemSolution(y, f, d, obj, res)


def _omega_rate(price, xbar, rivals):
    """Post-bid link rate F >= xbar solving (F - xbar) p(F) = rival revenue."""
    if rivals == 0.0:
        return xbar
    cap = price.bracket_cap()
    lo = xbar
    hi = min(xbar + max(xbar, 1.0), cap)
    for _ in range(_MAX_ITER):
        if (hi - xbar) * price.value(hi) >= rivals:
            break
        lo = hi
        if hi >= cap:
            raise NonConvergence("grant inversion found no rate below the domain cap")
        hi = min(xbar + 2.0 * (hi - xbar), cap)
    else:
        raise NonConvergence("grant inversion failed to bracket")
    for _ in range(_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if (mid - xbar) * price.value(mid) < rivals:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def omega(inst, j, r, xbar, w_minus_col):
    """Bid user r must place at link j to be granted xbar, given rival bids.

    Inverts the grant map: the post-bid link rate F solves
    (F - xbar) p_j(F) = sum(rival bids), and the required bid is xbar p_j(F).
    Zero target needs zero bid; with no rivals the link clears at the grant
    itself.
    """
    price = inst.prices[j]
    xbar = float(xbar)
    if xbar < 0.0 or not math.isfinite(xbar):
        raise DomainError("target grant must be finite and nonnegative")
    rivals = math.fsum(float(v) for v in np.atleast_1d(w_minus_col))
    if rivals < 0.0:
        raise DomainError("rival bids must be nonnegative")
    if xbar == 0.0:
        return 0.0
    if xbar >= price.bracket_cap():
        raise DomainError(f"target grant {xbar!r} outside the price domain")
    return xbar * price.value(_omega_rate(price, xbar, rivals))


def _golden_max(fn, lo, hi, tol):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = fn(x1), fn(x2)
    while hi - lo > tol:
        if f1 >= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = fn(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = fn(x2)
    xs = [(lo, fn(lo)), (x1, f1), (x2, f2)]
    return max(xs, key=lambda t: t[1])


def _path_rate_cap(inst, r, links, rivals):
    """Rate beyond which some link on the path prices out the user's marginal."""
    u0 = inst.users[r].marginal(0.0)
    z = 1.0
    for _ in range(_MAX_ITER):
        for j in links:
            price = inst.prices[j]
            cap = price.bracket_cap()
            if z >= cap:
                return cap
            if price.value(_omega_rate(price, z, rivals[j])) >= u0:
                return z
        z *= 2.0
    return z


def best_response_network(inst, r, W, cfg=None):
    """Best bid vector for user r against the rival bids in W.

    Works in the user's own path-rate space: a candidate vector of path
    rates implies per-link grants, whose cost is priced by the grant-to-bid
    inversion, and the payoff is the routed-rate utility minus total bids.
    Cyclic golden-section ascent over the path rates handles the kinks that
    per-link moves cannot cross (raising one link of a series path alone
    buys nothing, while raising the whole path does); when the user's own
    paths overlap, rate-transfer moves between path pairs cross the valley
    that axis moves would zigzag along.  Links off the user's paths stay at
    zero.
    """
    cfg = cfg or SolverConfig()
    topo = inst.topo
    u = inst.users[r]
    paths = topo.paths_of(r)
    path_links = [topo.links_of_path(q) for q in paths]
    rivals = np.asarray(W, dtype=float).sum(axis=1) - np.asarray(W, dtype=float)[:, r]

    grant_tol = max(1e-12, min(1e-9, cfg.tol))
    caps = [_path_rate_cap(inst, r, links, rivals) for links in path_links]
    overlapping = [
        (i, k)
        for i in range(len(paths))
        for k in range(i + 1, len(paths))
        if bool(np.intersect1d(path_links[i], path_links[k]).size)
    ]

    yhat = np.zeros(len(paths))

    def grants(yvec):
        x = np.zeros(topo.n_links)
        for i, links in enumerate(path_links):
            x[links] += yvec[i]
        return x

    def payoff(yvec):
        x = grants(yvec)
        cost = 0.0
        for j in np.nonzero(x)[0]:
            if x[j] >= inst.prices[j].bracket_cap():
                return -math.inf  # grant unattainable at any finite bid
            cost += omega(inst, j, r, x[j], rivals[j])
        d, _ = max_rate(topo, r, x)
        return u.value(d) - cost

    current = payoff(yhat)
    for _ in range(60):
        improved = 0.0
        for i in range(len(paths)):
            def line(t, i=i):
                trial = yhat.copy()
                trial[i] = t
                return payoff(trial)

            t_best, value = _golden_max(line, 0.0, caps[i], grant_tol)
            if value > current:
                improved = max(improved, value - current)
                yhat[i] = t_best
                current = value
        for i, k in overlapping:
            lo = -min(yhat[i], max(0.0, caps[k] - yhat[k]))
            hi = min(yhat[k], max(0.0, caps[i] - yhat[i]))
            if hi - lo <= grant_tol:
                continue

            def transfer(t, i=i, k=k):
                trial = yhat.copy()
                trial[i] += t
                trial[k] -= t
                return payoff(trial)

            t_best, value = _golden_max(transfer, lo, hi, grant_tol)
            if value > current:
                improved = max(improved, value - current)
                yhat[i] += t_best
                yhat[k] -= t_best
                current = value
        if improved <= max(cfg.tol, 1e-13):
            break

    x = grants(yhat)
    bids = np.zeros(topo.n_links)
    for j in np.nonzero(x)[0]:
        bids[j] = omega(inst, j, r, x[j], rivals[j])
    return bids


def solve_network_nash(inst, init=None, cfg=None):
    """Damped Gauss-Seidel over users' network best responses.

    A settled profile is accepted only if the sampled-deviation verifier
    passes; a failed verification restarts the sweep from a perturbed
    profile (up to 3 times) before reporting NonConvergence.
    """
    cfg = cfg or SolverConfig()
    topo = inst.topo
    usable = inst.topo.usable()
    if init is None:
        W = np.where(usable, 1.0, 0.0)
    else:
        W = bid_matrix(inst, init)

    rng = np.random.default_rng(cfg.seed)
    restarts = 0
    while True:
        delta = math.inf
        sweeps = 0
        for sweeps in range(1, cfg.max_sweeps + 1):
            delta = 0.0
            for r in range(topo.n_users):
                br = best_response_network(inst, r, W, cfg)
                # take link exits exactly rather than damping dust bids
                new = np.where(br == 0.0, 0.0,
                               (1.0 - cfg.damping) * W[:, r] + cfg.damping * br)
                delta = max(delta, float(np.abs(new - W[:, r]).max()))
                W[:, r] = new
            if delta <= cfg.tol:
                break
        else:
            raise NonConvergence(
                "network best-response dynamics did not settle",
                sweeps=cfg.max_sweeps,
                max_bid_delta=delta,
                restarts=restarts,
            )

        check = verify_network_nash(
            inst,
            W,
            tol=max(1e-7, 100.0 * cfg.tol),
            samples=max(cfg.deviation_samples, 128),
            seed=cfg.seed + restarts,
        )
        if check.passed:
            break
        restarts += 1
        if restarts > 3:
            raise NonConvergence(
                "network equilibrium verification kept failing",
                sweeps=sweeps,
                max_bid_delta=delta,
                restarts=restarts,
                check=check,
            )
        W = W * np.where(usable, rng.uniform(0.5, 1.5, W.shape), 0.0) + np.where(
            usable, 1e-3, 0.0
        )

    f, x = clear_links(inst, W)
    y = np.zeros(topo.n_paths)
    d = np.zeros(topo.n_users)
    for r in range(topo.n_users):
        d[r], y_r = max_rate(topo, r, x[:, r])
        y += y_r
    alloc = NetworkAllocation(x, f, y, d)
    return W, alloc, NetworkNashDiagnostics(sweeps, delta, restarts, check)


def verify_network_nash(inst, W, tol=1e-6, samples=128, seed=0):
    """Probe each user's grant-space payoff for profitable deviations.

    A profile is an equilibrium iff each user's granted vector maximizes
    routed-rate utility minus summed grant-to-bid payments; this samples
    per-coordinate log-spaced rescalings (including exit) and random
    nonnegative directions, and fails on any improvement above ``tol``.
    """
    W = bid_matrix(inst, W)
    topo = inst.topo
    f, x = clear_links(inst, W)
    rng = np.random.default_rng(seed)
    gains = []
    for r in range(topo.n_users):
        u = inst.users[r]
        links = topo.links_of_user(r)
        rivals = W.sum(axis=1) - W[:, r]

        def payoff(xbar, r=r, links=links, rivals=rivals, u=u):
            cost = 0.0
            for j in links:
                if xbar[j] >= inst.prices[j].bracket_cap():
                    return -math.inf  # grant unattainable at any finite bid
                if xbar[j] > 0.0:
                    cost += omega(inst, j, r, xbar[j], rivals[j])
            d, _ = max_rate(topo, r, xbar)
            return u.value(d) - cost

        base = u.value(max_rate(topo, r, x[:, r])[0]) - float(W[:, r].sum())
        budget = int(samples)
        best_gain = 0.0
        scale = max(1.0, float(np.abs(x[:, r]).max()))
        coord_probes = []
        for j in links:
            if x[j, r] > 0.0:
                coord_probes.extend((j, x[j, r] * 2.0 ** k) for k in (-2, -1, 1, 2))
                coord_probes.append((j, 0.0))
            else:
                coord_probes.extend((j, scale * 2.0 ** -k) for k in (0, 2, 4))
        for j, val in coord_probes[:budget]:
            trial = x[:, r].copy()
            trial[j] = val
            best_gain = max(best_gain, payoff(trial) - base)
        budget -= len(coord_probes[:budget])
        deltas = np.geomspace(1e-3, 1.0, max(1, budget // max(1, len(links)) or 1))
        count = 0
        while count < budget:
            direction = rng.standard_normal(len(links))
            delta = float(deltas[count % len(deltas)]) * scale
            trial = x[:, r].copy()
            trial[links] = np.maximum(0.0, trial[links] + delta * direction)
            best_gain = max(best_gain, payoff(trial) - base)
            count += 1
        gains.append(best_gain)
    max_gain = max(gains) if gains else 0.0
    return NetworkCheck(max_gain <= tol, max_gain, tuple(gains), tol)


def check_network_bound(inst, alloc, system_sol):
    """Equilibrium-to-optimum surplus ratio for a network game.

    The single-link worst-case constant extends to networks with p_j(0) = 0
    prices and nonnegative utilities; a price floor on any link voids the
    bound (reported as None).
    """
    from .efficiency import WORST_CASE_RATIO, RatioReport

    if system_sol.surplus <= 0.0:
        raise DegenerateError("optimal surplus must be positive to form a ratio")
    ns = network_surplus(inst, alloc.d, alloc.f)
    r = ns / system_sol.surplus
    if r > 1.0 + 1e-9:
        raise DegenerateError(
            f"equilibrium surplus exceeds the reported optimum (ratio {r!r})"
        )
    bound = None if any(p.violates_p0 for p in inst.prices) else WORST_CASE_RATIO
    margin = None if bound is None else r - bound
    return RatioReport(ns, system_sol.surplus, r, bound, margin)
