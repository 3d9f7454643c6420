"""Price and utility function families.

Price curves are convex, strictly increasing marginal-cost functions p(f) of
the total link rate f; each family also evaluates its integral cost
C(f) = int_0^f p, its one-sided derivatives, its elasticity
eps(f) = f p'(f) / p(f), and the shading factor beta = eps / (1 + eps) in
closed form.  Utility curves are concave, strictly increasing functions U(d)
of an allocated rate d with a finite marginal at 0, plus the inverse-demand
map d(lam) = sup{d >= 0 : U'(d) >= lam}.

Nothing in this module is finite-differenced: the downstream efficiency-loss
formulas are sensitive to derivative accuracy at kinks, so every derived
quantity is exact per family.  All models are frozen dataclasses; every
method is a pure function, safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DomainError

__all__ = [
    "LinearPrice",
    "MonomialPrice",
    "TwoPiecePrice",
    "MM1Price",
    "LinearUtility",
    "Log1pUtility",
    "ShiftedPowerUtility",
    "PRICE_KINDS",
    "UTILITY_KINDS",
    "price_from_spec",
    "utility_from_spec",
]

# Fraction of the M/M/1 service rate reserved when bracketing roots; keeps
# solvers strictly inside the open domain f < s.
_MM1_CAP = 1.0 - 2.0 ** -40


def _check_rate(f, sup=math.inf):
    if not (0.0 <= f):
        raise DomainError(f"rate must be nonnegative, got {f!r}")
    if f >= sup:
        raise DomainError(f"rate {f!r} outside the open domain [0, {sup!r})")


class _PriceBase:
    """Shared derived quantities; subclasses supply the closed forms."""

    #: price at zero rate is nonzero (fails the p(0) = 0 hypothesis behind
    #: the efficiency-loss bounds); only the M/M/1 family sets this.
    violates_p0 = False

    def domain_sup(self):
        """Least upper bound of the price domain (may be inf)."""
        return math.inf

    def bracket_cap(self):
        """Largest rate root-finders may probe (strictly inside the domain)."""
        return math.inf

    def breakpoints(self):
        """Rates at which the one-sided derivatives differ."""
        return ()

    def elasticity(self, f):
        """(eps-, eps+) at f > 0: one-sided f p'(f) / p(f)."""
        _check_rate(f, self.domain_sup())
        if f == 0.0:
            raise DomainError("elasticity requires f > 0")
        p = self.value(f)
        if p <= 0.0:
            raise DegenerateError(f"price is zero at f={f!r}")
        lo, hi = self.derivs(f)
        return f * lo / p, f * hi / p

    def beta(self, f):
        """(beta-, beta+) at f > 0, where beta = eps / (1 + eps)."""
        em, ep = self.elasticity(f)
        return em / (1.0 + em), ep / (1.0 + ep)


@dataclass(frozen=True)
class LinearPrice(_PriceBase):
    """p(f) = a f."""

    a: float

    kind = "linear"

    def __post_init__(self):
        if not (self.a > 0.0 and math.isfinite(self.a)):
            raise ValueError("linear price requires a > 0")

    def value(self, f):
        _check_rate(f)
        return self.a * f

    def value_array(self, f):
        return self.a * f

    def cost(self, f):
        _check_rate(f)
        return 0.5 * self.a * f * f

    def derivs(self, f):
        _check_rate(f)
        return self.a, self.a

    def elasticity(self, f):
        _check_rate(f)
        if f == 0.0:
            raise DomainError("elasticity requires f > 0")
        return 1.0, 1.0

    def to_spec(self):
        return {"kind": "linear", "a": self.a}


@dataclass(frozen=True)
class MonomialPrice(_PriceBase):
    """p(f) = a f**B with exponent B >= 1; elasticity is B everywhere."""

    a: float
    B: float

    kind = "monomial"

    def __post_init__(self):
        if not (self.a > 0.0 and math.isfinite(self.a)):
            raise ValueError("monomial price requires a > 0")
        if not (self.B >= 1.0 and math.isfinite(self.B)):
            raise ValueError("monomial price requires B >= 1")

    def value(self, f):
        _check_rate(f)
        return self.a * f ** self.B

    def value_array(self, f):
        return self.a * np.power(f, self.B)

    def cost(self, f):
        _check_rate(f)
        return self.a * f ** (self.B + 1.0) / (self.B + 1.0)

    def derivs(self, f):
        _check_rate(f)
        d = self.a * self.B * f ** (self.B - 1.0)
        return d, d

    def elasticity(self, f):
        _check_rate(f)
        if f == 0.0:
            raise DomainError("elasticity requires f > 0")
        return self.B, self.B

    def to_spec(self):
        return {"kind": "monomial", "a": self.a, "B": self.B}


@dataclass(frozen=True)
class TwoPiecePrice(_PriceBase):
    """Piecewise-linear price: slope a up to the knee rate k, slope b >= a after.

    p(f) = a f for f <= k and a k + b (f - k) for f >= k.  The one-sided
    derivatives differ exactly at the knee, which is what makes this family
    the worst case for the efficiency-loss bound.
    """

    a: float
    b: float
    k: float = 1.0

    kind = "two_piece"

    def __post_init__(self):
        if not (self.a > 0.0 and math.isfinite(self.a)):
            raise ValueError("two-piece price requires a > 0")
        if not (self.b >= self.a and math.isfinite(self.b)):
            raise ValueError("two-piece price requires b >= a")
        if not (self.k > 0.0 and math.isfinite(self.k)):
            raise ValueError("two-piece price requires k > 0")

    def value(self, f):
        _check_rate(f)
        if f <= self.k:
            return self.a * f
        return self.a * self.k + self.b * (f - self.k)

    def value_array(self, f):
        f = np.asarray(f, dtype=float)
        return np.where(f <= self.k, self.a * f, self.a * self.k + self.b * (f - self.k))

    def cost(self, f):
        _check_rate(f)
        if f <= self.k:
            return 0.5 * self.a * f * f
        t = f - self.k
        return 0.5 * self.a * self.k * self.k + self.a * self.k * t + 0.5 * self.b * t * t

    def derivs(self, f):
        _check_rate(f)
        if f < self.k:
            return self.a, self.a
        if f == self.k:
            return self.a, self.b
        return self.b, self.b

    def breakpoints(self):
        return (self.k,)

    def to_spec(self):
        return {"kind": "two_piece", "a": self.a, "b": self.b, "k": self.k}


@dataclass(frozen=True)
class MM1Price(_PriceBase):
    """Marginal cost of an M/M/1 queue: p(f) = a s / (s - f)**2 on 0 <= f < s.

    The integral cost C(f) = a f / (s - f) is proportional to the stationary
    queue length at arrival rate f and service rate s.  Note p(0) = a/s > 0,
    so this family fails the p(0) = 0 hypothesis behind the efficiency-loss
    bounds; ``violates_p0`` flags it and the bound suites exclude it.
    """

    a: float
    s: float

    kind = "mm1"
    violates_p0 = True

    def __post_init__(self):
        if not (self.a > 0.0 and math.isfinite(self.a)):
            raise ValueError("mm1 price requires a > 0")
        if not (self.s > 0.0 and math.isfinite(self.s)):
            raise ValueError("mm1 price requires s > 0")

    def domain_sup(self):
        return self.s

    def bracket_cap(self):
        return self.s * _MM1_CAP

    def value(self, f):
        _check_rate(f, self.s)
        g = self.s - f
        return self.a * self.s / (g * g)

    def value_array(self, f):
        g = self.s - np.asarray(f, dtype=float)
        return self.a * self.s / (g * g)

    def cost(self, f):
        _check_rate(f, self.s)
        return self.a * f / (self.s - f)

    def derivs(self, f):
        _check_rate(f, self.s)
        g = self.s - f
        d = 2.0 * self.a * self.s / (g * g * g)
        return d, d

    def elasticity(self, f):
        _check_rate(f, self.s)
        if f == 0.0:
            raise DomainError("elasticity requires f > 0")
        e = 2.0 * f / (self.s - f)
        return e, e

    def to_spec(self):
        return {"kind": "mm1", "a": self.a, "s": self.s}


def _check_alloc(d):
    if not (0.0 <= d):
        raise DomainError(f"allocation must be nonnegative, got {d!r}")


@dataclass(frozen=True)
class LinearUtility:
    """U(d) = alpha d."""

    alpha: float

    kind = "linear"

    def __post_init__(self):
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError("linear utility requires alpha > 0")

    def value(self, d):
        _check_alloc(d)
        return self.alpha * d

    def value_array(self, d):
        return self.alpha * d

    def marginal(self, d):
        _check_alloc(d)
        return self.alpha

    def curvature(self, d):
        _check_alloc(d)
        return 0.0

    def demand(self, lam):
        """sup{d >= 0 : U'(d) >= lam}; +inf whenever lam < alpha."""
        if lam <= 0.0:
            raise DomainError("demand requires lam > 0")
        return 0.0 if self.alpha <= lam else math.inf

    def to_spec(self):
        return {"kind": "linear", "alpha": self.alpha}


@dataclass(frozen=True)
class Log1pUtility:
    """U(d) = alpha kappa ln(1 + d/kappa); marginal alpha / (1 + d/kappa)."""

    alpha: float
    kappa: float

    kind = "log1p"

    def __post_init__(self):
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError("log1p utility requires alpha > 0")
        if not (self.kappa > 0.0 and math.isfinite(self.kappa)):
            raise ValueError("log1p utility requires kappa > 0")

    def value(self, d):
        _check_alloc(d)
        return self.alpha * self.kappa * math.log1p(d / self.kappa)

    def value_array(self, d):
        return self.alpha * self.kappa * np.log1p(d / self.kappa)

    def marginal(self, d):
        _check_alloc(d)
        return self.alpha / (1.0 + d / self.kappa)

    def curvature(self, d):
        _check_alloc(d)
        t = 1.0 + d / self.kappa
        return -self.alpha / (self.kappa * t * t)

    def demand(self, lam):
        if lam <= 0.0:
            raise DomainError("demand requires lam > 0")
        if self.alpha <= lam:
            return 0.0
        return self.kappa * (self.alpha / lam - 1.0)

    def to_spec(self):
        return {"kind": "log1p", "alpha": self.alpha, "kappa": self.kappa}


@dataclass(frozen=True)
class ShiftedPowerUtility:
    """U(d) = alpha ((d + kappa)**(1-gamma) - kappa**(1-gamma)) / (1 - gamma).

    Strictly concave for gamma > 0, gamma != 1, with finite marginal
    alpha kappa**(-gamma) at d = 0 and U(0) = 0.
    """

    alpha: float
    kappa: float
    gamma: float

    kind = "shifted_power"

    def __post_init__(self):
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError("shifted_power utility requires alpha > 0")
        if not (self.kappa > 0.0 and math.isfinite(self.kappa)):
            raise ValueError("shifted_power utility requires kappa > 0")
        if not (self.gamma > 0.0 and self.gamma != 1.0 and math.isfinite(self.gamma)):
            raise ValueError("shifted_power utility requires gamma > 0, gamma != 1")

    def value(self, d):
        _check_alloc(d)
        e = 1.0 - self.gamma
        return self.alpha * ((d + self.kappa) ** e - self.kappa ** e) / e

    def value_array(self, d):
        e = 1.0 - self.gamma
        return self.alpha * (np.power(d + self.kappa, e) - self.kappa ** e) / e

    def marginal(self, d):
        _check_alloc(d)
        return self.alpha * (d + self.kappa) ** -self.gamma

    def curvature(self, d):
        _check_alloc(d)
        return -self.alpha * self.gamma * (d + self.kappa) ** (-self.gamma - 1.0)

    def demand(self, lam):
        if lam <= 0.0:
            raise DomainError("demand requires lam > 0")
        if self.marginal(0.0) <= lam:
            return 0.0
        return (self.alpha / lam) ** (1.0 / self.gamma) - self.kappa

    def to_spec(self):
        return {
            "kind": "shifted_power",
            "alpha": self.alpha,
            "kappa": self.kappa,
            "gamma": self.gamma,
        }


PRICE_KINDS = {
    "linear": (LinearPrice, ("a",)),
    "monomial": (MonomialPrice, ("a", "B")),
    "two_piece": (TwoPiecePrice, ("a", "b", "k")),
    "mm1": (MM1Price, ("a", "s")),
}

UTILITY_KINDS = {
    "linear": (LinearUtility, ("alpha",)),
    "log1p": (Log1pUtility, ("alpha", "kappa")),
    "shifted_power": (ShiftedPowerUtility, ("alpha", "kappa", "gamma")),
}


def _from_spec(table, spec, what):
    if not isinstance(spec, dict):
        raise ValueError(f"{what} spec must be an object, got {type(spec).__name__}")
    kind = spec.get("kind")
    if kind not in table:
        raise ValueError(f"unknown {what} kind {kind!r}; expected one of {sorted(table)}")
    cls, fields = table[kind]
    extra = set(spec) - {"kind", *fields}
    if extra:
        raise ValueError(f"unknown {what} field(s) {sorted(extra)} for kind {kind!r}")
    missing = [name for name in fields if name not in spec]
    if missing:
        raise ValueError(f"{what} kind {kind!r} missing field(s) {missing}")
    values = {}
    for name in fields:
        v = spec[name]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValueError(f"{what} field {name!r} must be numeric, got {v!r}")
        values[name] = float(v)
    return cls(**values)


def price_from_spec(spec):
    """Build a price model from its tagged-object description."""
    return _from_spec(PRICE_KINDS, spec, "price")


def utility_from_spec(spec):
    """Build a utility model from its tagged-object description."""
    return _from_spec(UTILITY_KINDS, spec, "utility")
