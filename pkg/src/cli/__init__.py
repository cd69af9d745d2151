# Command-line interface for functional ensemble classification

from .main import main

__all__ = ["main"]
