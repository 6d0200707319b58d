"""Numerical laboratory for the 2-D SU(N+1) Toda system.

Subpackages:

* ``geometry``  -- torus/polar grids, quadrature, Laplacians, Poisson solves
* ``meanfield`` -- Cartan data, the functional J_rho, residuals, criticality
* ``solver``    -- gradient flow, Newton, continuation, annulus system, minimax
* ``blowup``    -- peak/mass diagnostics, Pohozaev arithmetic, rescaling, Kelvin
* ``entire``    -- radial ODE engine: bubbles, shooting, tail exponents
* ``holonomy``  -- flat connection, loop transport, eigenphase quantization
* ``cli``       -- the ``toda`` command-line front end
"""

__version__ = "0.1.0"

from . import blowup, entire, geometry, holonomy, meanfield, solver  # noqa: F401
