"""Seeded random instance generators for property suites and bound checks.

Everything draws through a single numpy Generator, so a fixed seed
reproduces the same instances across runs (and the CLI's random bound-check
inherits determinism from its seed flag).
"""

from __future__ import annotations

import numpy as np

from .market import LinkInstance
from .models import (
    LinearPrice,
    LinearUtility,
    Log1pUtility,
    MM1Price,
    MonomialPrice,
    ShiftedPowerUtility,
    TwoPiecePrice,
)
from .network import NetworkInstance, Topology

__all__ = [
    "random_price",
    "random_utility",
    "random_link_instance",
    "random_network_instance",
]


def random_price(rng, kinds=("linear", "monomial", "two_piece")):
    """Draw a price model; defaults to the p(0) = 0 families."""
    kind = kinds[rng.integers(len(kinds))]
    if kind == "linear":
        return LinearPrice(a=float(rng.uniform(0.2, 3.0)))
    if kind == "monomial":
        return MonomialPrice(a=float(rng.uniform(0.2, 3.0)), B=float(rng.uniform(1.0, 4.0)))
    if kind == "two_piece":
        a = float(rng.uniform(0.2, 2.0))
        return TwoPiecePrice(a=a, b=a * float(rng.uniform(1.0, 20.0)), k=float(rng.uniform(0.3, 2.0)))
    if kind == "mm1":
        return MM1Price(a=float(rng.uniform(0.05, 0.5)), s=float(rng.uniform(1.0, 4.0)))
    raise ValueError(f"unknown price kind {kind!r}")


def random_utility(rng, kinds=("linear", "log1p", "shifted_power")):
    kind = kinds[rng.integers(len(kinds))]
    if kind == "linear":
        return LinearUtility(alpha=float(rng.uniform(0.3, 2.0)))
    if kind == "log1p":
        return Log1pUtility(alpha=float(rng.uniform(0.5, 3.0)), kappa=float(rng.uniform(0.3, 3.0)))
    if kind == "shifted_power":
        gamma = float(rng.choice([0.5, 2.0, 3.0]))
        return ShiftedPowerUtility(
            alpha=float(rng.uniform(0.5, 3.0)), kappa=float(rng.uniform(0.5, 2.0)), gamma=gamma
        )
    raise ValueError(f"unknown utility kind {kind!r}")


def random_link_instance(
    rng,
    price_kinds=("linear", "monomial", "two_piece"),
    utility_kinds=("linear", "log1p", "shifted_power"),
    max_users=4,
):
    """A random single link; with an M/M/1 price, resamples utilities until
    at least one user clears the price floor so the game is nondegenerate."""
    price = random_price(rng, price_kinds)
    n = int(rng.integers(1, max_users + 1))
    for _ in range(100):
        users = tuple(random_utility(rng, utility_kinds) for _ in range(n))
        if max(u.marginal(0.0) for u in users) > price.value(0.0):
            return LinkInstance(price, users)
    raise RuntimeError("could not draw a nondegenerate instance")


def random_network_instance(
    rng,
    max_links=4,
    max_users=4,
    max_paths=6,
    max_path_len=2,
    price_kinds=("linear", "monomial"),
    utility_kinds=("linear", "log1p", "shifted_power"),
):
    """A small random network: every user owns 1..2 paths of bounded length."""
    n_links = int(rng.integers(1, max_links + 1))
    n_users = int(rng.integers(1, min(max_users, max_paths) + 1))
    cols_A, cols_H = [], []

    def add_path(r):
        length = int(rng.integers(1, min(max_path_len, n_links) + 1))
        links = rng.choice(n_links, size=length, replace=False)
        col = np.zeros(n_links, dtype=int)
        col[links] = 1
        cols_A.append(col)
        own = np.zeros(n_users, dtype=int)
        own[r] = 1
        cols_H.append(own)

    for r in range(n_users):  # one guaranteed path per user
        add_path(r)
    for r in range(n_users):  # optional extras while the budget lasts
        if len(cols_A) < max_paths and rng.random() < 0.4:
            add_path(r)
    topo = Topology(A=np.column_stack(cols_A), H=np.column_stack(cols_H))
    prices = tuple(random_price(rng, price_kinds) for _ in range(n_links))
    users = tuple(random_utility(rng, utility_kinds) for _ in range(n_users))
    return NetworkInstance(topo, prices, users)
