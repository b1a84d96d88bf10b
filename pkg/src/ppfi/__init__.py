"""Simulation of marked temporal point processes and numerical checks of
their functional inequalities (Poincaré, transport/deviation, Clark–Ocone,
Laplace variational formula)."""

__version__ = "0.1.0"
