"""
Boundary-layer calculus for soft-to-hard mixture-of-experts routing.
Margins, boundary-mass profiles, soft/hard risk gaps, Gaussian coarea constants
and the reduced symmetry-breaking model, plus seeded experiment drivers.
"""

__version__ = "1.0.0"
