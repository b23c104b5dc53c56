# mixflow/decorators.py

import functools
import json
import logging
import time
import traceback
from typing import Callable

from mixflow.errors import MixflowError, SchemaError

logger = logging.getLogger(__name__)

# -----------------------------
# 🧾 Log Exceptions
# -----------------------------


def log_exceptions(tag: str = "[MIXFLOW]", raise_error: bool = True):
    """
    Logs exceptions under a log tag and optionally re-raises them.
    mixflow errors are logged as one line; anything else gets a traceback.
    """

    def decorator(func: Callable):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except MixflowError as e:
                logger.error(f"{tag} {func.__name__} failed: {type(e).__name__}: {e}")
                if raise_error:
                    raise
            except Exception as e:
                logger.error(f"{tag} Unexpected error in '{func.__name__}': {e}")
                logger.debug(traceback.format_exc())
                if raise_error:
                    raise
            return None

        return wrapper

    return decorator


# -----------------------------
# ⏱️ Measure Execution Time
# -----------------------------


def measure_time(tag: str = "[TIMER]"):
    """
    Logs the wall time of the wrapped call under a log tag.
    """

    def decorator(func: Callable):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                elapsed = time.perf_counter() - start
                logger.info(f"{tag} {func.__name__} executed in {elapsed:.4f} seconds")

        return wrapper

    return decorator


# -----------------------------
# ✅ Ensure Document Input
# -----------------------------


def ensure_document(func: Callable):
    """
    Accepts a scenario document as a dict or as JSON text.
    Raises SchemaError at path "$" for anything else.
    """

    @functools.wraps(func)
    def wrapper(data, *args, **kwargs):
        if isinstance(data, (str, bytes)):
            try:
                data = json.loads(data)
            except json.JSONDecodeError as e:
                raise SchemaError("$", f"invalid JSON at line {e.lineno}: {e.msg}")
        if not isinstance(data, dict):
            raise SchemaError("$", f"expected a JSON object, got {type(data).__name__}")
        return func(data, *args, **kwargs)

    return wrapper
