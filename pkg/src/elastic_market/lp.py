"""Dense primal simplex for tiny LPs: maximize c.y s.t. A y <= b, y >= 0.

The constraint right-hand sides here are rate grants, so b >= 0 and the
slack basis is immediately feasible (no phase 1).  Bland's smallest-index
rule on both the entering and leaving choices rules out cycling; the pivot
tolerance guards against near-zero pivots in floating arithmetic.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, NonConvergence

__all__ = ["solve_lp_max"]

_PIVOT_TOL = 1e-11


def solve_lp_max(c, A, b, max_pivots=10_000):
    """Return (optimal value, optimizer y) for max c.y, A y <= b, y >= 0."""
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if c.shape != (n,) or b.shape != (m,):
        raise DomainError("LP dimensions do not match")
    if (b < 0).any():
        raise DomainError("slack start needs b >= 0")

    # tableau: m constraint rows [A | I | b] under the reduced-cost row [-c | 0 | 0]
    T = np.zeros((m + 1, n + m + 1))
    T[0, :n] = -c
    T[1:, :n] = A
    T[1:, n:n + m] = np.eye(m)
    T[1:, -1] = b
    basis = list(range(n, n + m))

    for _ in range(max_pivots):
        enters = np.nonzero(T[0, :-1] < -_PIVOT_TOL)[0]
        if enters.size == 0:
            break
        j = int(enters[0])  # Bland: smallest improving index
        col = T[1:, j]
        rows = np.nonzero(col > _PIVOT_TOL)[0]
        if rows.size == 0:
            raise NonConvergence("LP is unbounded")
        ratios = T[1 + rows, -1] / col[rows]
        best = ratios.min()
        tied = rows[ratios <= best * (1.0 + 1e-12) + 1e-300]
        i = int(min(tied, key=lambda r: basis[r]))
        piv = T[1 + i, j]
        T[1 + i] /= piv
        for r in range(m + 1):
            if r != 1 + i and T[r, j] != 0.0:
                T[r] -= T[r, j] * T[1 + i]
        basis[i] = j
    else:
        raise NonConvergence("simplex exceeded its pivot budget")

    y = np.zeros(n)
    for i, var in enumerate(basis):
        if var < n:
            y[var] = T[1 + i, -1]
    return float(T[0, -1]), np.maximum(y, 0.0)
