"""scalarforge: pseudo-spectral convex-integration workbench for active scalars on T^2."""
__version__ = "0.1.0"
