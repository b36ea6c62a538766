"""Differentiable 3D Gaussian splatting for multiview human reconstruction
from a single, possibly occluded, input view."""

__version__ = "0.1.0"
