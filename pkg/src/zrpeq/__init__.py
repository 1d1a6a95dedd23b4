"""Equilibrium structure of two-species zero-range processes.

Grand-canonical series with certified truncation, the entropy as a
Legendre transform over the convergence domain, exact canonical
ensembles and a continuous-time Monte Carlo sampler.
"""

from . import canonical, grand_canonical, legendre, simulator, weights
from .errors import (
    BudgetExceeded,
    CocycleViolation,
    ConfigError,
    Diverged,
    InvalidParam,
    NoCertificate,
    NotInDomain,
    NumericalError,
    OutOfRange,
    RadiusExhausted,
    SolverStall,
    UnknownName,
    ZeroRate,
    ZRPError,
)
from .expression import expression_weight, load_weight
from .grand_canonical import (
    ChemicalPotential,
    Fugacity,
    GrandCanonicalState,
    Membership,
    domain_boundary,
    evaluate,
)
from .legendre import DensityPair, EntropySolution, Phase, phase_diagram, solve
from .weights import JumpRates, TwoSpeciesWeight, builtin, rates_from_weight, weight_from_rates

__version__ = "0.1.0"
