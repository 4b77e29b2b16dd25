"""Multi-camera hand-pose annotation and egocentric hand-object interaction detection."""
from ._kernels import BACKEND
from .errors import EgoHoiError

__version__ = "0.1.0"
__all__ = ["BACKEND", "EgoHoiError", "__version__"]
