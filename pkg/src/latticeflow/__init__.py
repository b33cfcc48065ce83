"""Max-flow / min-cut simulation on random-capacity lattices."""

__version__ = "0.1.0"
