import os
from pathlib import Path
from dotenv import load_dotenv

# Load .env file
load_dotenv()

DARE_METHODS = ("auto", "schur", "iteration")


class Config:
    """Load and validate environment configuration"""

    # Project Root and Paths
    PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent
    CONFIG_DIR: str = os.getenv("CONFIG_DIR", str(PROJECT_ROOT / "configs"))
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "./results")

    # Simulation defaults
    DEFAULT_SEED: int = int(os.getenv("DEFAULT_SEED", "0"))
    SWEEP_JOBS: int = int(os.getenv("SWEEP_JOBS", "1"))
    DIVERGENCE_LIMIT: float = float(os.getenv("DIVERGENCE_LIMIT", "1e3"))

    # Riccati solver
    DARE_METHOD: str = os.getenv("DARE_METHOD", "auto")
    DARE_TOLERANCE: float = float(os.getenv("DARE_TOLERANCE", "1e-12"))
    DARE_MAX_ITER: int = int(os.getenv("DARE_MAX_ITER", "1000000"))

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_DIR: str = os.getenv("LOG_DIR", "./logs")

    @classmethod
    def validate(cls) -> bool:
        """Validate critical configuration"""
        errors = []

        if cls.DARE_METHOD not in DARE_METHODS:
            errors.append(f"DARE_METHOD must be one of {DARE_METHODS}, got {cls.DARE_METHOD!r}")
        if cls.DARE_TOLERANCE <= 0:
            errors.append(f"DARE_TOLERANCE must be positive: {cls.DARE_TOLERANCE}")
        if cls.DARE_MAX_ITER < 1:
            errors.append(f"DARE_MAX_ITER must be at least 1: {cls.DARE_MAX_ITER}")
        if cls.SWEEP_JOBS == 0:
            errors.append("SWEEP_JOBS must be nonzero (use -1 for all cores)")
        if cls.DIVERGENCE_LIMIT <= 0:
            errors.append(f"DIVERGENCE_LIMIT must be positive: {cls.DIVERGENCE_LIMIT}")

        if errors:
            print("Configuration Errors:")
            for error in errors:
                print(f"  - {error}")
            return False

        return True


config = Config()
