"""Elastic-modulus map recovery from full-field strain with physics-informed networks."""
from .geometry import Mesh, build_crossed_mesh
from .materials import MaterialModel

__all__ = ["Mesh", "MaterialModel", "build_crossed_mesh"]
__version__ = "0.1.0"
