"""Shared exception types."""


class LayoutError(ValueError):
    """A cube layout violates the separation/sizing rules."""


class BudgetError(RuntimeError):
    """An exact scan or enumeration would exceed its work budget."""


class ConstructionFailure(RuntimeError):
    """A randomized construction failed its retention/removal contract
    (e.g. fewer than M/2 points survive filtering, or the estimated
    removal probability exceeds 1/2).  Usually means lambda is too
    aggressive for the pattern at this M."""


class DegenerateOverlapError(RuntimeError):
    """A perturbation produced essentially zero mass: the configuration's
    mollified support misses the support of the base measure."""
