"""Goal retargeting for tabletop manipulation under perception lag and object shifts."""

from .config import MODES, TASKS, Config

__version__ = "0.1.0"

__all__ = ["MODES", "TASKS", "Config", "__version__"]
