"""Supply/demand driven price dynamics.

Exact densities of the relative price change, their Gaussian limit,
Monte Carlo and SDE simulation, and windowed marginal volatility.
"""

__version__ = "0.1.0"
