"""Transcript persistence.

A run transcript is two files: ``<stem>.jsonl`` with one line per entry,
appended as the run progresses, and ``<stem>.meta.json`` with the task,
robot id and outcome, written when the run ends.

Entry line schema::

    {"index": 0, "step": "SAY(hello)" | null, "raw": "...",
     "result": {"status": "success", "payload": "...", "facts": [...]},
     "module": "execution"}

``step`` is the canonical rendering, or null when the model output did not
parse (``raw`` then holds it verbatim).
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import IO

from .steps import (
    Outcome,
    Status,
    StepResult,
    Transcript,
    TranscriptEntry,
    parse_step,
    render_step,
)

META_SUFFIX = ".meta.json"


class TranscriptFormatError(ValueError):
    pass


def entry_to_json(entry: TranscriptEntry) -> dict:
    return {
        "index": entry.index,
        "step": render_step(entry.step) if entry.step is not None else None,
        "raw": entry.raw,
        "result": {
            "status": entry.result.status.value,
            "payload": entry.result.payload,
            "facts": list(entry.result.facts),
        },
        "module": entry.result.origin_module,
    }


def entry_from_json(obj: dict) -> TranscriptEntry:
    try:
        res = obj["result"]
        result = StepResult(Status(res["status"]), res["payload"], obj["module"], tuple(res.get("facts", ())))
        step = parse_step(obj["step"]) if obj["step"] is not None else None
        return TranscriptEntry(int(obj["index"]), obj["raw"], step, result)
    except (KeyError, TypeError, ValueError) as exc:
        raise TranscriptFormatError(f"bad transcript entry: {exc}") from None


def dumps_entry(entry: TranscriptEntry) -> str:
    return json.dumps(entry_to_json(entry), ensure_ascii=False, sort_keys=True)


def meta_path(path: str | os.PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.name.removesuffix(".jsonl") + META_SUFFIX)


class TranscriptWriter:
    """Append-only writer; use ``write`` as a run's ``on_entry`` callback."""

    def __init__(self, path: str | os.PathLike, task: str, robot_id: str) -> None:
        self.path = Path(path)
        self.task = task
        self.robot_id = robot_id
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh: IO[str] | None = open(self.path, "w", encoding="utf-8")
        self._count = 0

    def write(self, entry: TranscriptEntry) -> None:
        if self._fh is None:
            raise ValueError("writer is closed")
        if entry.index != self._count:
            raise ValueError(f"entry {entry.index} written out of order (expected {self._count})")
        self._fh.write(dumps_entry(entry) + "\n")
        self._fh.flush()
        self._count += 1

    def close(self, outcome: Outcome | None, error: str = "") -> None:
        if self._fh is None:
            return
        self._fh.close()
        self._fh = None
        meta = {"task": self.task, "robot_id": self.robot_id,
                "outcome": outcome.value if outcome is not None else None,
                "error": error, "entries": self._count}
        meta_path(self.path).write_text(json.dumps(meta, ensure_ascii=False, sort_keys=True) + "\n",
                                        encoding="utf-8")

    def __enter__(self) -> TranscriptWriter:
        return self

    def __exit__(self, *exc) -> None:
        self.close(None, "interrupted")


def write_transcript(transcript: Transcript, path: str | os.PathLike) -> Path:
    writer = TranscriptWriter(path, transcript.task, transcript.robot_id)
    for entry in transcript.entries:
        writer.write(entry)
    writer.close(transcript.outcome, transcript.error)
    return Path(path)


def read_transcript(path: str | os.PathLike) -> Transcript:
    path = Path(path)
    try:
        meta = json.loads(meta_path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise TranscriptFormatError(f"{meta_path(path)} is missing") from None
    except json.JSONDecodeError as exc:
        raise TranscriptFormatError(f"{meta_path(path)}: {exc.msg}") from None
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            try:
                entry = entry_from_json(json.loads(line))
            except (json.JSONDecodeError, TranscriptFormatError) as exc:
                raise TranscriptFormatError(f"{path}:{lineno}: {exc}") from None
            if entry.index != len(entries):
                raise TranscriptFormatError(f"{path}:{lineno}: entry index {entry.index} out of order")
            entries.append(entry)
    if meta.get("entries", len(entries)) != len(entries):
        raise TranscriptFormatError(f"{path}: expected {meta['entries']} entries, found {len(entries)}")
    outcome = Outcome(meta["outcome"]) if meta.get("outcome") else None
    return Transcript(meta["task"], meta["robot_id"], entries, outcome, meta.get("error", ""))
