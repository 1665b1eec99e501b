import os
import json
import time
import logging
from contextlib import contextmanager
from datetime import datetime
from typing import Any, Dict, Iterator

RUN_LOGGER_NAME = "boundary_engine.runs"


def configure_logging(log_dir: str, level: int = logging.INFO) -> str:
    """Attach a JSON-lines file handler for run events. Returns the log file path."""
    os.makedirs(log_dir, exist_ok=True)
    log_path = os.path.join(log_dir, "runs.log")

    root = logging.getLogger("boundary_engine")
    root.setLevel(level)
    # Re-configuring for a new output directory replaces the old handler
    for handler in list(root.handlers):
        if getattr(handler, "_boundary_engine", False):
            root.removeHandler(handler)
            handler.close()

    handler = logging.FileHandler(log_path, encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s - %(levelname)s - %(name)s - %(message)s"))
    handler._boundary_engine = True
    root.addHandler(handler)
    return log_path


def log_event(event: str, **fields: Any) -> Dict[str, Any]:
    entry = {
        "timestamp": datetime.now().isoformat(),
        "event": event,
        **fields,
    }
    logging.getLogger(RUN_LOGGER_NAME).info(json.dumps(entry, default=str))
    return entry


@contextmanager
def timed_event(event: str, **fields: Any) -> Iterator[Dict[str, Any]]:
    """Log `event` with duration_sec and status once the block exits."""
    start_time = time.time()
    extra: Dict[str, Any] = {}
    try:
        yield extra
    except Exception as e:
        log_event(event, duration_sec=time.time() - start_time, status="error", error=str(e), **fields, **extra)
        raise
    log_event(event, duration_sec=time.time() - start_time, status="success", **fields, **extra)
