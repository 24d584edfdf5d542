"""Guided lifting of a coarse 3D prior into a refined mesh on a deformable tet grid."""

from .field import FieldParams, FitConfig, fit_prior
from .grid import TetGrid
from .render import CameraPose, rasterize_color, rasterize_normals
from .scene import PriorScene, load_scene, parse_scene
from .tessellate import SurfaceMesh, marching_tets

__all__ = ["FieldParams", "FitConfig", "fit_prior", "TetGrid", "CameraPose", "rasterize_color",
           "rasterize_normals", "PriorScene", "load_scene", "parse_scene", "SurfaceMesh",
           "marching_tets"]
__version__ = "0.1.0"
