"""
GFL Sync Lab

Grid synchronisation of grid-following inverters in weak grids: Kalman
(AAEKF/CAEKF) and PLL (CPLL/CVI/MVI) synchronisers, LQR current control of
an LCL filter, and a discrete network simulator to compare them.
"""

__version__ = "1.0.0"
__description__ = "Grid-following inverter synchronisation lab"

# Version info
VERSION = (1, 0, 0)

# Lazy imports
def __getattr__(name):
    if name == "run_scenario":
        from src.scenario import run_scenario
        return run_scenario
    elif name == "load_scenario":
        from src.schema import load_scenario
        return load_scenario
    elif name == "config":
        from src.utils.config import config
        return config
    elif name == "logger":
        from src.utils.logger import logger
        return logger
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

__all__ = ["run_scenario", "load_scenario", "config", "logger"]
