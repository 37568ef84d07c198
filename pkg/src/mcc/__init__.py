"""Two-point context-modulated neural units on a small numpy autograd engine."""

from .errors import (ConfigError, ContractError, DivergenceError, DomainError, MCCError, ResourceError,
                     ShapeError)
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "no_grad", "MCCError", "ShapeError", "DomainError", "ContractError",
           "ResourceError", "ConfigError", "DivergenceError", "__version__"]
