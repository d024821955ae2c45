"""Model switching for portfolio construction via fitted Q-iteration."""
from ._kernels import BACKEND
from .errors import ConfigError, DataError, ModelSwitchError, NumericalError

__version__ = "0.1.0"

__all__ = ["BACKEND", "ConfigError", "DataError", "ModelSwitchError", "NumericalError", "__version__"]
