"""Grey-ranked overlapping clustering with a fog tree, simulated round by round."""

from .config import ScenarioConfig, load_config
from .engine import MetricsReport, run

__all__ = ["ScenarioConfig", "MetricsReport", "load_config", "run"]
__version__ = "0.1.0"
