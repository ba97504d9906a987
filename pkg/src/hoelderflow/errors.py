"""Exception hierarchy shared by all modules."""


class HoelderflowError(Exception):
    """Base class for library errors."""


class ConfigurationError(HoelderflowError, ValueError):
    """Invalid parameters or inconsistent constants."""


class DomainError(HoelderflowError, ValueError):
    """Argument outside the domain of an operation (off-grid times, bad windows)."""


class RegularityError(HoelderflowError, ValueError):
    """Hoelder exponents too small for the requested Young integral."""


class StabilityError(HoelderflowError, ValueError):
    """Matrix fails the required spectral bound."""


class ValidationError(HoelderflowError, ValueError):
    """Derivative oracles or structural assumptions failed a numerical check."""


class HypothesisError(HoelderflowError, ValueError):
    """Hypotheses of a local estimate check are violated."""
