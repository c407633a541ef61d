"""Pricing of spatially dependent weather derivatives.

The package fits GEV margins to seasonal block maxima, models their spatial
dependence with a Schlather max-stable process estimated by pairwise
composite likelihood, and prices books of strike contracts from simulated
events with renewal-additive risk loads.  Numerical code lives in
:mod:`extreme_pricer.calculators`; config loading and report writing in
:mod:`extreme_pricer.components`.
"""

from . import calculators, components

__all__ = ["calculators", "components"]
