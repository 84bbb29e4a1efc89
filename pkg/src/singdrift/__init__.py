"""Monte Carlo laboratory for SDEs with singular drift driven by fractional Brownian motion."""

__version__ = "0.1.0"
