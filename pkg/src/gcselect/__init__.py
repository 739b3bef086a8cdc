"""Numerical laboratory for a division-mutation-selection model of germinal-center output.

Modules
-------
core
    Parameters, grids, selection profiles, initial data and quadrature.
fem
    P1 finite elements with implicit Euler and the threshold-triggered switch.
spectral
    Exact and first-order eigenpairs, modal solution and the large-mu cascade.
asymptotics
    Closed-form threshold-time estimators.
green
    Heat kernels and bounds for a point-mass founder population.
cli
    The ``gcselect`` command.
"""

from .core import (Constant, Dirac, Domain, Field, Grid, ModelParams, Random, Samples,
                   SelectionProfile, inner_product, realize_initial, weighted_mass)

__all__ = ["Constant", "Dirac", "Domain", "Field", "Grid", "ModelParams", "Random", "Samples",
           "SelectionProfile", "inner_product", "realize_initial", "weighted_mass"]
__version__ = "0.1.0"
