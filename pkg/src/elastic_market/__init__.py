"""Solvers for the proportional-bidding resource-allocation game with
elastic supply: market clearing, social optima, Nash equilibria (single link
and network), and the associated efficiency-loss bounds."""

from .efficiency import (
    WORST_CASE_RATIO,
    WORST_CASE_SLOPE,
    F_of_p,
    H,
    H1,
    H2,
    RatioReport,
    WorstCaseInstance,
    build_worst_case,
    g,
    g1,
    g2,
    minimize_H,
    monomial_critical_as,
    ratio,
)
from .errors import (
    DegenerateError,
    DomainError,
    ElasticMarketError,
    InfeasibleError,
    NonConvergence,
    ParseError,
    PreconditionError,
    ValidationError,
)
from .market import (
    ClearingOutcome,
    LinkInstance,
    SystemSolution,
    clear,
    market_rate,
    price_taking_equilibrium,
    solve_system,
    surplus,
)
from .models import (
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
from .nash import (
    NashCheck,
    NashResult,
    SolverConfig,
    allocation_derivs,
    best_response,
    payoff_anticipating,
    solve_nash_best_response,
    solve_nash_direct,
    verify_nash,
)
from .network import (
    NetworkAllocation,
    NetworkInstance,
    Topology,
    best_response_network,
    check_network_bound,
    clear_links,
    max_rate,
    network_surplus,
    omega,
    solve_network_nash,
    solve_network_system,
    verify_network_nash,
)

__version__ = "0.1.0"
