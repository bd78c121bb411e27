"""Numerical toolkit for periodic homogenization of p-Laplace-type operators.

Computes cell correctors, effective fluxes, flux correctors, and smoothed
first-order approximations of oscillating solutions, plus an experiment
harness that measures convergence rates and large-scale gradient decay.
"""

__version__ = "0.1.0"
