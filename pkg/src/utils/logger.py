import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Union

from loguru import logger as _logger

from src.utils.config import config

CONSOLE_FORMAT = (
    "<level>{level: <8}</level> | <magenta>{extra[run]}</magenta> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan> - <level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {extra[run]} | {name}:{function}:{line} - {message}"
RUN_LOG_NAME = "run.log"

log_dir = Path(config.LOG_DIR)
log_dir.mkdir(parents=True, exist_ok=True)

_logger.remove()
# records logged outside a run carry "-" as their run label
_logger.configure(extra={"run": "-"})
_logger.add(sys.stderr, level=config.LOG_LEVEL, format=CONSOLE_FORMAT)
_logger.add(
    log_dir / "gfl_sync.log",
    level=config.LOG_LEVEL,
    format=FILE_FORMAT,
    rotation="50 MB",
    retention=10,
    enqueue=True,
)

logger = _logger


@contextmanager
def run_log(out_dir: Union[str, Path], run: str) -> Iterator[Path]:
    """
    Tag every record with ``run`` and copy it into ``out_dir/run.log``
    for as long as the block runs, so each result directory carries its
    own log next to its tables.
    """
    path = Path(out_dir) / RUN_LOG_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    sink = _logger.add(path, level=config.LOG_LEVEL, format=FILE_FORMAT, mode="w")
    try:
        with _logger.contextualize(run=run):
            yield path
    finally:
        _logger.remove(sink)
