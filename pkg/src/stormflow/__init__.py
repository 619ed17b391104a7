"""Storm vortex detection from satellite imagery via optical flow."""
from .errors import ConfigError, DataError, LayoutMismatchError, StormflowError

__all__ = ["ConfigError", "DataError", "LayoutMismatchError", "StormflowError"]
__version__ = "0.1.0"
