"""IDLA, divisible sandpiles and random walks on Sierpinski gasket graphs."""
from .errors import (
    AddressError,
    ConvergenceError,
    DegenerateFitError,
    DomainError,
    NonTerminationError,
    NumericError,
    ResourceError,
    SGError,
)
from .gasket import (
    ALPHA,
    BETA,
    DOUBLED_SG,
    ONE_SIDED_SG,
    ORIGIN,
    GraphFamily,
    Left,
    Right,
    Side,
    Vertex,
    ball,
    ball_volume,
    distance,
    neighbors,
)
from .walk import RngStream

__all__ = [
    "ALPHA", "BETA", "DOUBLED_SG", "ONE_SIDED_SG", "ORIGIN", "AddressError", "ConvergenceError",
    "DegenerateFitError", "DomainError", "GraphFamily", "Left", "NonTerminationError", "NumericError",
    "ResourceError", "Right", "RngStream", "SGError", "Side", "Vertex", "ball", "ball_volume", "distance",
    "neighbors",
]
