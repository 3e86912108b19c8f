"""Range and boundary-of-range laboratory for simple random walks on Z^d."""

from rangewalk.lattice import (
    PointSet,
    RngStream,
    Trajectory,
    euclidean_ball,
    generate_walk,
    unit_neighbors,
)

__all__ = [
    "PointSet",
    "RngStream",
    "Trajectory",
    "euclidean_ball",
    "generate_walk",
    "unit_neighbors",
]

__version__ = "0.1.0"
