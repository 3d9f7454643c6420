"""Scenario files: JSON descriptions of instances, solver settings and grids.

A scenario is either a single link (price + users) or a network (links +
users + paths); it may carry solver overrides, a bid profile, and grid
parameters for the sweep commands.  Validation is strict: unknown fields are
rejected, and every diagnostic names the offending field and its constraint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .market import LinkInstance
from .models import price_from_spec, utility_from_spec
from .nash import SolverConfig
from .network import NetworkInstance, Topology

__all__ = ["Scenario", "parse_scenario", "parse_scenario_data"]

_TOP_KEYS_SINGLE = {"kind", "price", "users", "solver", "bids", "experiment"}
_TOP_KEYS_NETWORK = {"kind", "links", "users", "paths", "solver", "bids", "experiment"}
_SOLVER_KEYS = {"tol", "max_sweeps", "damping", "seed", "deviation_samples"}
_EXPERIMENT_KEYS = {"R_grid", "B_grid", "a_grid", "b_grid"}


@dataclass(frozen=True)
class Scenario:
    kind: str
    link: LinkInstance | None = None
    network: NetworkInstance | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    bids: object = None
    experiment: dict = field(default_factory=dict)

    @property
    def instance(self):
        return self.link if self.kind == "single_link" else self.network


def _fail(where, message):
    raise ValidationError(f"{where}: {message}")


def _numeric(where, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(where, f"must be a number, got {value!r}")
    return float(value)


def _parse_solver(obj):
    if obj is None:
        return SolverConfig()
    if not isinstance(obj, dict):
        _fail("solver", "must be an object")
    extra = set(obj) - _SOLVER_KEYS
    if extra:
        _fail("solver", f"unknown field(s) {sorted(extra)}")
    kwargs = {}
    for key in ("tol", "damping"):
        if key in obj:
            kwargs[key] = _numeric(f"solver.{key}", obj[key])
    for key in ("max_sweeps", "seed", "deviation_samples"):
        if key in obj:
            v = obj[key]
            if isinstance(v, bool) or not isinstance(v, int):
                _fail(f"solver.{key}", f"must be an integer, got {v!r}")
            kwargs[key] = v
    try:
        return SolverConfig(**kwargs)
    except ValueError as e:
        _fail("solver", str(e))


def _parse_price(where, obj):
    try:
        return price_from_spec(obj)
    except ValueError as e:
        _fail(where, str(e))


def _parse_users(obj):
    if not isinstance(obj, list) or not obj:
        _fail("users", "must be a non-empty list of utility specs")
    out = []
    for i, spec in enumerate(obj):
        try:
            out.append(utility_from_spec(spec))
        except ValueError as e:
            _fail(f"users[{i}]", str(e))
    return tuple(out)


def _parse_experiment(obj):
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        _fail("experiment", "must be an object")
    extra = set(obj) - _EXPERIMENT_KEYS
    if extra:
        _fail("experiment", f"unknown field(s) {sorted(extra)}")
    out = {}
    for key, values in obj.items():
        if not isinstance(values, list) or not values:
            _fail(f"experiment.{key}", "must be a non-empty list of numbers")
        out[key] = [_numeric(f"experiment.{key}[{i}]", v) for i, v in enumerate(values)]
    return out


def _parse_single(obj):
    if "price" not in obj:
        _fail("price", "is required for a single_link scenario")
    if "users" not in obj:
        _fail("users", "is required")
    price = _parse_price("price", obj["price"])
    users = _parse_users(obj["users"])
    link = LinkInstance(price, users)
    bids = None
    if obj.get("bids") is not None:
        raw = obj["bids"]
        if not isinstance(raw, list) or len(raw) != len(users):
            _fail("bids", f"must be a list of {len(users)} numbers (one per user)")
        bids = tuple(_numeric(f"bids[{i}]", v) for i, v in enumerate(raw))
        if any(v < 0 for v in bids):
            _fail("bids", "must be nonnegative")
    return Scenario(
        kind="single_link",
        link=link,
        solver=_parse_solver(obj.get("solver")),
        bids=bids,
        experiment=_parse_experiment(obj.get("experiment")),
    )


def _parse_network(obj):
    for key in ("links", "users", "paths"):
        if key not in obj:
            _fail(key, "is required for a network scenario")
    if not isinstance(obj["links"], list) or not obj["links"]:
        _fail("links", "must be a non-empty list of price specs")
    prices = tuple(
        _parse_price(f"links[{j}]", spec) for j, spec in enumerate(obj["links"])
    )
    users = _parse_users(obj["users"])
    paths = obj["paths"]
    if not isinstance(paths, list) or not paths:
        _fail("paths", "must be a non-empty list")
    n_links, n_users = len(prices), len(users)
    A = np.zeros((n_links, len(paths)), dtype=int)
    H = np.zeros((n_users, len(paths)), dtype=int)
    for q, p in enumerate(paths):
        where = f"paths[{q}]"
        if not isinstance(p, dict) or set(p) != {"links", "user"}:
            _fail(where, 'must be an object with exactly the fields "links" and "user"')
        if not isinstance(p["user"], int) or isinstance(p["user"], bool):
            _fail(
                f"{where}.user",
                "each path is owned by exactly one user (a single integer index)",
            )
        if not (0 <= p["user"] < n_users):
            _fail(f"{where}.user", f"user index out of range [0, {n_users})")
        if not isinstance(p["links"], list) or not p["links"]:
            _fail(f"{where}.links", "must be a non-empty list of link indices")
        for j in p["links"]:
            if not isinstance(j, int) or isinstance(j, bool) or not (0 <= j < n_links):
                _fail(f"{where}.links", f"link index {j!r} out of range [0, {n_links})")
            A[j, q] = 1
        H[p["user"], q] = 1
    try:
        topo = Topology(A=A, H=H)
    except ValueError as e:
        _fail("paths", str(e))
    network = NetworkInstance(topo, prices, users)
    bids = None
    if obj.get("bids") is not None:
        raw = obj["bids"]
        if not isinstance(raw, list) or len(raw) != n_links:
            _fail("bids", f"must be a list of {n_links} rows (one per link)")
        rows = []
        for j, row in enumerate(raw):
            if not isinstance(row, list) or len(row) != n_users:
                _fail(f"bids[{j}]", f"must be a list of {n_users} numbers (one per user)")
            rows.append([_numeric(f"bids[{j}][{r}]", v) for r, v in enumerate(row)])
        bids = np.asarray(rows)
        if (bids < 0).any():
            _fail("bids", "must be nonnegative")
    return Scenario(
        kind="network",
        network=network,
        solver=_parse_solver(obj.get("solver")),
        bids=bids,
        experiment=_parse_experiment(obj.get("experiment")),
    )


def parse_scenario_data(obj):
    """Validate an already-decoded scenario object."""
    if not isinstance(obj, dict):
        raise ValidationError("scenario: top level must be an object")
    kind = obj.get("kind")
    if kind == "single_link":
        extra = set(obj) - _TOP_KEYS_SINGLE
    elif kind == "network":
        extra = set(obj) - _TOP_KEYS_NETWORK
    else:
        raise ValidationError(
            f'kind: must be "single_link" or "network", got {kind!r}'
        )
    if extra:
        raise ValidationError(f"scenario: unknown field(s) {sorted(extra)}")
    return _parse_single(obj) if kind == "single_link" else _parse_network(obj)


def parse_scenario(path):
    """Read and validate a scenario file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as e:
        raise ParseError(f"cannot read scenario file {path!r}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"scenario file {path!r} is not valid JSON: {e}") from e
    return parse_scenario_data(data)
