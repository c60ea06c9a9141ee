"""
Helpers Module

Utility functions shared by the pipeline stages and the command line.
"""

import logging
import os
import sys
import tempfile
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Dict, IO, Iterable, Iterator, Optional, Sequence, TypeVar, Union

import orjson
from tqdm import tqdm

T = TypeVar("T")
R = TypeVar("R")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logger(
    name: str,
    log_file: Optional[Union[str, Path]] = None,
    level: int = logging.INFO,
) -> logging.Logger:
    """
    Set up a logger with a stderr handler and an optional file handler.

    Calling it again for the same name replaces the handlers instead of
    stacking duplicates.

    Args:
        name: Logger name
        log_file: Optional path to a log file (appended to)
        level: Logging level

    Returns:
        Configured logger
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(LOG_FORMAT)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file is not None:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, mode="a", encoding="utf-8")
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


def format_large_number(num: int) -> str:
    """
    Format large numbers with K, M suffixes.

    Args:
        num: Number to format

    Returns:
        Formatted string
    """
    if num >= 1_000_000:
        return f"{num / 1_000_000:.1f}M"
    elif num >= 1_000:
        return f"{num / 1_000:.1f}K"
    else:
        return str(num)


def format_metrics(metrics: Dict[str, Any], precision: int = 4) -> str:
    """Format a metrics dict as ``key: value | key: value``."""
    parts = []
    for key, value in metrics.items():
        if isinstance(value, float):
            parts.append(f"{key}: {value:.{precision}f}")
        else:
            parts.append(f"{key}: {value}")
    return " | ".join(parts)


def dumps_record(record: Dict[str, Any]) -> bytes:
    """One JSONL line, keys in insertion order, newline terminated."""
    return orjson.dumps(record, option=orjson.OPT_APPEND_NEWLINE)


def write_jsonl(records: Iterable[Dict[str, Any]], handle: IO[bytes]) -> int:
    """Write records to a binary handle; returns the record count."""
    count = 0
    for record in records:
        handle.write(dumps_record(record))
        count += 1
    return count


def read_jsonl(path: Union[str, Path]) -> Iterator[Dict[str, Any]]:
    """
    Stream JSON objects from a line-delimited file, skipping blank lines.

    Raises:
        ValueError: a line is not valid JSON; the message carries the line number
    """
    with open(path, "rb") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                yield orjson.loads(line)
            except orjson.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_number}: invalid JSON: {exc}") from exc


@contextmanager
def atomic_output(path: Union[str, Path], mode: str = "wb") -> Iterator[IO]:
    """
    Open a temporary sibling of ``path`` for writing and rename it into place
    on success. On error the temporary file is removed and ``path`` is untouched.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    kwargs = {} if "b" in mode else {"encoding": "utf-8", "newline": "\n"}
    try:
        with os.fdopen(fd, mode, **kwargs) as handle:
            yield handle
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except FileNotFoundError:
            pass
        raise


def progress(iterable: Iterable[T], desc: str, enabled: bool = True, unit: str = "it") -> Iterable[T]:
    """Wrap an iterable in a tqdm bar on stderr; silent when stderr is not a TTY."""
    if not enabled:
        return iterable
    return tqdm(iterable, desc=desc, unit=unit, file=sys.stderr, disable=None, dynamic_ncols=True)


def ordered_pool_map(
    func: Callable[[T], R],
    items: Iterable[T],
    workers: int,
    initializer: Optional[Callable[..., None]] = None,
    initargs: Sequence[Any] = (),
    window: Optional[int] = None,
) -> Iterator[R]:
    """
    Map ``func`` over ``items`` in a process pool, yielding results in input order.

    At most ``window`` work items are in flight at once (default 4 per worker),
    so an unbounded input stream never gets materialized.

    Args:
        func: Picklable top-level callable
        items: Work items
        workers: Pool size
        initializer: Runs once per worker process
        initargs: Arguments for ``initializer``
        window: In-flight bound

    Yields:
        ``func(item)`` per item, in order
    """
    window = window or workers * 4
    with ProcessPoolExecutor(max_workers=workers, initializer=initializer, initargs=tuple(initargs)) as executor:
        pending = deque()
        for item in items:
            pending.append(executor.submit(func, item))
            if len(pending) >= window:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()
