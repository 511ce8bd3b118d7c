"""Hybridized weakly symmetric mixed finite elements for 2D linear elasticity."""
from .material import MaterialParams
from .mesh import Mesh, alfeld_split, generate_structured_alfeld, read_mesh, write_mesh

__version__ = "0.1.0"

__all__ = ["MaterialParams", "Mesh", "alfeld_split", "generate_structured_alfeld", "read_mesh", "write_mesh"]
