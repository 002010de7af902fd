"""
Append-only JSONL event log and JSON checkpoint files.

Every record is serialised with sorted keys and no timestamps, so two runs
with the same seed write byte-identical logs.
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def encode_event(event: Dict[str, Any]) -> str:
    return json.dumps(event, sort_keys=True, separators=(",", ":"))


class EventLog:
    """In-memory event list mirrored line by line to ``path`` when given.

    A fresh log truncates ``path``; ``resume`` appends to an existing one.
    """

    def __init__(
        self,
        path: Optional[PathLike] = None,
        events: Optional[List[Dict[str, Any]]] = None,
        resume: bool = False,
    ):
        self.path = Path(path) if path is not None else None
        self.events: List[Dict[str, Any]] = list(events or [])
        self._handle = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = open(self.path, "a" if resume else "w", encoding="utf-8")

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Dict[str, Any]]:
        return iter(self.events)

    def append(self, event_type: str, **fields: Any) -> Dict[str, Any]:
        event = {"event_index": len(self.events), "event_type": event_type, **fields}
        self.events.append(event)
        if self._handle is not None:
            self._handle.write(encode_event(event) + "\n")
            self._handle.flush()
        return event

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def __enter__(self) -> "EventLog":
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.close()


def read_events(path: PathLike, limit: Optional[int] = None) -> List[Dict[str, Any]]:
    events = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if limit is not None and len(events) >= limit:
                break
            if line.strip():
                events.append(json.loads(line))
    return events


def truncate_events(path: PathLike, count: int) -> List[Dict[str, Any]]:
    """Drop records past ``count``; they were written after the last checkpoint."""
    events = read_events(path, limit=count)
    if len(events) < count:
        raise ValueError(f"{path} holds {len(events)} events, checkpoint expects {count}")
    _atomic_write(Path(path), "".join(encode_event(event) + "\n" for event in events))
    return events


def write_checkpoint(path: PathLike, state: Dict[str, Any]) -> Path:
    path = Path(path)
    _atomic_write(path, json.dumps(state, sort_keys=True, indent=2))
    logger.info(f"Checkpoint written to {path} at event {state.get('event_count')}")
    return path


def read_checkpoint(path: PathLike) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
