"""3D roof wireframe reconstruction from sparse point clouds and multi-view segmentations."""

__version__ = "0.1.0"
