"""Python access to the hadsnet core: augmentation, edges, losses, metrics, splits and training."""

from ._core import *  # noqa: F401,F403
from ._core import CLASS_NAMES, ConfigError, DataError, DimensionError, HadsError, NumericError, StateError

__version__ = "0.1.0"
