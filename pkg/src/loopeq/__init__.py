"""Exact samplers, holomorphicity verifiers, and limit-shape solvers for
discrete interacting particle systems with Vandermonde-type interactions.

Subpackages
-----------
numerics     closed-contour quadrature, continuous log tracking, root finding
kernels      ascending/descending transition kernels and exact samplers
loop_verify  holomorphic-observable residue checks
tilings      weighted lozenge tilings of trapezoids, partition identities
limitshape   algebraic limit shape, arctic curve, characteristic flow
asymptotics  one-step mean/covariance predictions and field fluctuations
cli          command-line front end
"""

__version__ = "0.1.0"
