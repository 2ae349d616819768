"""Spectral simulation of a conservative stochastic equation with penalized reflection,
exact samplers for its Gaussian reference measures, Brownian-meander constructions,
and Monte Carlo checks of the associated integration-by-parts identities."""

__version__ = "0.1.0"
