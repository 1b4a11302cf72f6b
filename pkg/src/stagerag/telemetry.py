"""Run telemetry: one JSON line per event, plus an in-memory view for tests."""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path


class TelemetryLog:
    """Append-only event log. Thread-safe; file sink is optional."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        self._lock = threading.Lock()

    def record(self, event: str, **fields) -> dict:
        entry = {"event": event, "ts": time.time(), **fields}
        with self._lock:
            self.records.append(entry)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
        return entry

    def by_event(self, event: str) -> list[dict]:
        with self._lock:
            return [r for r in self.records if r["event"] == event]
