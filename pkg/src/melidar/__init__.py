"""Multi-echo LiDAR simulation, preprocessing and evaluation."""
from .errors import (
    ConfigError,
    DecodeError,
    DomainError,
    EmptyInputError,
    EmptySceneError,
    FormatError,
    MappingError,
    MelidarError,
    OutOfRangeError,
    ParseError,
    TruncationError,
    UnsupportedDtype,
)
from .kernels import BACKEND
from .model import ArraySpec, Echo, EchoGroup, LidarImage, MultiEchoFrame, OrientedBox3D, SimConfig
from .simulate import SimulationResult, simulate

__version__ = "0.1.0"

__all__ = [
    "ArraySpec", "BACKEND", "ConfigError", "DecodeError", "DomainError", "Echo", "EchoGroup",
    "EmptyInputError", "EmptySceneError", "FormatError", "LidarImage", "MappingError", "MelidarError",
    "MultiEchoFrame", "OrientedBox3D", "OutOfRangeError", "ParseError", "SimConfig", "SimulationResult",
    "TruncationError", "UnsupportedDtype", "simulate",
]
