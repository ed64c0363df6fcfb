"""Data-driven compositional finite abstractions of interconnected control systems."""
from .geometry import Box, UniformGrid, product_grid
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["Box", "KERNEL_BACKEND", "UniformGrid", "__version__", "product_grid"]
