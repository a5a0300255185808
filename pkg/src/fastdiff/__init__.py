"""fastdiff - invariant-manifold laboratory for the fast diffusion equation."""

__version__ = "0.1.0"
