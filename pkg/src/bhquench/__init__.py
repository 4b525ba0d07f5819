"""Quench dynamics across mean-field instabilities in small Bose-Hubbard rings.

Exact quantum simulation (sparse Krylov / spectral propagation) side by side
with an independently implemented symbolic prediction engine organized in the
renormalized parameter heff * e^(2 lam t).
"""

__version__ = "0.1.0"

from . import fockspace, kernels, meanfield, observables, propagator, weylalgebra
