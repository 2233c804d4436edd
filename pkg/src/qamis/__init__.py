"""Quantum-annealing equilibrium simulation lab for unique-solution MIS."""

__version__ = "0.1.0"
