"""polymerlab: simulation and exact-solver laboratory for directed polymers
in heavy-tailed random environments."""

__version__ = "0.1.0"
