"""Explanation-guided, recall-constrained federated learning lab."""
from .version import __version__
from .cli import main

__all__ = ["__version__", "main"]
