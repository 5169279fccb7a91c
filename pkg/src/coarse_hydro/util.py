import hashlib
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from logging import Logger
from logging.handlers import RotatingFileHandler
from typing import Callable, Iterable, TypeVar

LOGGER_NAME = "coarse-hydro"

T = TypeVar("T")
R = TypeVar("R")


def getlogger(name: str, path: str | None = None, level: int = logging.INFO) -> Logger:
    """Returns a logger instance for the given name and path.

    The logger writes to stdout and, when a path is given, to rotating log
    files with a maximum size of 1MB each and upto a maximum of 10 log files.
    The stdout handler is attached once; a file handler is added the first
    time a new path is requested.

    Arguments:
    * name: name of the logger, e.g. 'coarse-hydro'
    * path: directory for storing the log files, e.g. 'out/run1'; None for stdout only
    * level: logging level, e.g; logging.DEBUG

    Returns:
    * logger: logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    for handler in logger.handlers:
        handler.setLevel(level)
    if not any(isinstance(h, logging.StreamHandler) and h.stream is sys.stdout for h in logger.handlers):
        handler = logging.StreamHandler(sys.stdout)
        handler.setLevel(level)
        handler.setFormatter(logging.Formatter("[%(levelname)s] %(message)s"))
        logger.addHandler(handler)
    if path:
        fname = os.path.abspath(f"{os.path.join(path, name)}.log")
        if not any(isinstance(h, RotatingFileHandler) and h.baseFilename == fname for h in logger.handlers):
            os.makedirs(path, exist_ok=True)
            handler = RotatingFileHandler(fname, maxBytes=1048576, backupCount=10)
            handler.setLevel(level)
            handler.setFormatter(logging.Formatter("%(asctime)s [%(levelname)s] %(message)s"))
            logger.addHandler(handler)
    return logger


def get_logger(logger: Logger | None) -> Logger:
    """Returns the given logger or the package default logger."""
    return logger if logger is not None else logging.getLogger(LOGGER_NAME)


def sha256sum(fname: str) -> str:
    """Returns the hexadecimal sha256 digest of a file's contents."""
    h = hashlib.sha256()
    with open(fname, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(fname: str, data: bytes) -> None:
    """Writes data to fname via a temporary file and an atomic rename."""
    d = os.path.dirname(os.path.abspath(fname))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, fname)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parallel_map(func: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Maps func over items, in order, using a thread pool when workers > 1.

    Results are returned in input order regardless of scheduling.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
