"""Atomic JSON persistence helpers."""

import json
import os
import tempfile
from datetime import datetime, timedelta, timezone
from pathlib import Path


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, fsync, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_json(path, obj) -> None:
    atomic_write_text(path, dumps(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def rfc3339(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_rfc3339(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)


def system_clock() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


class TickClock:
    """Deterministic clock: ``start`` plus one second per call."""

    def __init__(self, start: int = 1_700_000_000, ticks: int = 0):
        self.start = start
        self.ticks = ticks

    def __call__(self) -> datetime:
        ts = datetime.fromtimestamp(self.start, timezone.utc) + timedelta(seconds=self.ticks)
        self.ticks += 1
        return ts
