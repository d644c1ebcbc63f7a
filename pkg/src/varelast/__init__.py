"""Variational elasticity laboratory.

Finite-element experiments on the linearization of finite elasticity under
equilibrated loads. P1 solvers for the linear and nonlinear problems share an
average-curl gauge; a radial disc example shows the linearized limit
depending on the chosen rotation.

Submodules are imported explicitly (``from varelast import fem``) so that the
command line can limit BLAS threads before numpy loads.
"""

__version__ = "0.1.0"
