"""Physics-informed direct generative sampling on a 3D Gaussian mixture."""

__version__ = "0.1.0"
