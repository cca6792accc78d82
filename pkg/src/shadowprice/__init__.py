"""shadowprice - simulation and verification toolkit for diverse markets and consistent price systems."""

from .config import Config
from .core import DiversityRegion, MarketPath, PathEnsemble, RngStream, TimeGrid, dist_to_complement
from .errors import ShadowPriceError
from .logger import get_logger, setup_logger

__version__ = "0.1.0"
__all__ = [
    "Config",
    "DiversityRegion",
    "MarketPath",
    "PathEnsemble",
    "RngStream",
    "ShadowPriceError",
    "TimeGrid",
    "dist_to_complement",
    "get_logger",
    "setup_logger",
]
