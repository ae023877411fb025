"""Numerical laboratory for a rigid charge coupled to the Maxwell field.

Modules: profiles, quadrature, soliton (comoving solutions), propagator
(free evolution), volterra (memory-kernel particle dynamics), gridref
(coupled pseudo-spectral reference solver), diagnostics (scattering and
asymptotics), config/cli (drivers).
"""

__version__ = "0.1.0"
