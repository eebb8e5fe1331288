import logging
from logging.handlers import RotatingFileHandler
import os
from pathlib import Path
from typing import Optional, Union

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def get_logger(name: str = "ergolab", log_file: Optional[Union[str, Path]] = None,
               level: Optional[str] = None) -> logging.Logger:
    """Run logger writing to a rotating file and the console.

    Handlers are attached once per logger name; later calls return the configured logger.
    The file receives everything, the console only ``level`` (default ERGOLAB_LOG_LEVEL).
    """
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger

    logger.setLevel(logging.DEBUG)
    log_file = Path(log_file or os.getenv("ERGOLAB_LOG_FILE", "ergolab.log"))
    log_file.parent.mkdir(parents=True, exist_ok=True)
    formatter = logging.Formatter(LOG_FORMAT)

    file_handler = RotatingFileHandler(log_file, maxBytes=5_000_000, backupCount=3, encoding="utf-8")
    file_handler.setFormatter(formatter)

    console_level = (level or os.getenv("ERGOLAB_LOG_LEVEL", "INFO")).upper()
    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(formatter)
    stream_handler.setLevel(logging.getLevelName(console_level))

    logger.addHandler(file_handler)
    logger.addHandler(stream_handler)
    # run messages stay out of the root handler installed by setup_logging
    logger.propagate = False
    return logger
