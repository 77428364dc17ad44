"""Subquadratic planar elliptic systems with a point-singular weak solution.

Library + CLI for one explicit construction: a convex p-growth integrand with
a bounded-but-discontinuous x-dependence whose unique minimizer on the unit
disk is x/|x|, together with the u-dependent coefficient field that turns the
same map into a weak solution of a homogeneous elliptic system.  The package
audits the growth/ellipticity structure numerically, verifies the weak and
strong forms by graded quadrature and finite differences, minimizes the
functional with P1 finite elements, and measures energy-decay/oscillation
exponents around the singularity.
"""

from .integrand import IntegrandParams, make_params, smooth_bump

__all__ = ["IntegrandParams", "make_params", "smooth_bump"]
__version__ = "0.1.0"
