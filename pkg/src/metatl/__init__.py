"""Meta-learned translation model for cold-start next-item recommendation."""

from .config import HyperParams
from .model import Grads, Params

__all__ = ["HyperParams", "Params", "Grads"]
__version__ = "0.1.0"
