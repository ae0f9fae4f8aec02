"""Exception types raised by the market model, oracles, and dynamics."""


class ChoreMarketError(Exception):
    """Base class for all domain errors."""


class InstanceFormatError(ChoreMarketError):
    """Malformed instance document (unknown/missing fields, wrong types)."""


class NonPositiveBudget(ChoreMarketError):
    pass


class NonPositiveWeight(ChoreMarketError):
    pass


class RhoOutOfRange(ChoreMarketError):
    """rho < 1, or a CES spec with rho <= 1 (rho = 1 must be the linear kind)."""


class DimensionMismatch(ChoreMarketError):
    pass


class ZeroPriceVector(ChoreMarketError):
    """All prices zero (or empty): demand and gauge duals are undefined."""


class NonPositivePrice(ChoreMarketError):
    """Operation requires strictly positive prices componentwise."""


class NotApplicableLinear(ChoreMarketError):
    """Operation defined only for CES (rho > 1) specs."""


class NotApplicableCES(ChoreMarketError):
    """Operation defined only for linear specs."""


class AllMPBPricesZero(ChoreMarketError):
    """Every minimum-pain-per-buck chore is priced at zero; agent cannot earn."""


class StepTooLarge(ChoreMarketError):
    """Relative update step exceeds the no-projection cap ell0^2 / (2 ||B||_1)."""


class LinearUnsupported(ChoreMarketError):
    """Smoothness certificates exist only for all-CES markets."""


class NotACE(ChoreMarketError):
    """Stability classification requires certified equilibrium prices."""


class TooManyChores(ChoreMarketError):
    """Subset enumeration guard tripped (use force=True to override)."""


class WrongDimension(ChoreMarketError):
    """Command requires a specific chore count (e.g. ternary grids need m = 3)."""
