"""Mask-guided alpha matting with iterative refinement and sparse detail recovery."""
from .errors import ChecksumError, DomainError, FormatError, InvalidValueError, ShapeError
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "ChecksumError", "DomainError", "FormatError", "InvalidValueError",
           "ShapeError", "__version__"]
