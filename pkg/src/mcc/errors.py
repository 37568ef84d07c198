"""Exception types shared across the package."""


class MCCError(Exception):
    """Base class for all package errors."""


class ShapeError(MCCError, ValueError):
    """Operand dimensions are incompatible."""


class DomainError(MCCError, ValueError):
    """A value lies outside the domain of an operation."""


class ContractError(MCCError, RuntimeError):
    """A caller violated a precondition (non-scalar root, negative activations, ...)."""


class ResourceError(MCCError, RuntimeError):
    """A requested computation exceeds a configured size cap."""


class ConfigError(MCCError, ValueError):
    """Invalid or incomplete configuration."""


class DivergenceError(MCCError, RuntimeError):
    """Training produced a non-finite loss."""
