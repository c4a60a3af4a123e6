"""GNSS-disciplined clock simulation and analysis toolkit."""

__version__ = "0.1.0"

from .engine import run_scenario  # noqa: E402,F401
from .scenario import load, preset  # noqa: E402,F401
